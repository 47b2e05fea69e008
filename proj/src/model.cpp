#include "fedlab/model.hpp"

#include <algorithm>
#include <cmath>

namespace fedlab {

namespace {

// Contiguous slice of a flat vector as a shaped view.
Var slice(Graph& g, Var flat, Index offset, const Shape& shape) {
    const Index n = shape_size(shape);
    auto map = std::make_shared<std::vector<Index>>(std::size_t(n));
    for (Index i = 0; i < n; ++i) (*map)[std::size_t(i)] = offset + i;
    return g.gather(flat, map, shape);
}

struct LayerSlices {
    const ModelSpec& spec;
    const std::vector<LayoutEntry>& layout;
    Graph& g;
    Var theta;
    Var buf;

    Var get(const std::string& name) const {
        for (const auto& e : layout)
            if (e.name == name) return slice(g, e.buffer ? buf : theta, e.offset, e.shape);
        throw contract_violation("model: unknown layer " + name);
    }
};

Var dense(Graph& g, Var x, Var w, Var b) {
    const Index batch = x.shape()[0];
    const Index out = w.shape()[0];
    Var y = g.matmul(x, g.transpose(w));
    return g.add(y, g.gather(b, make_channel_map(batch, out, 1), {batch, out}));
}

Var conv3x3(Graph& g, Var x, Var w, Var b) {
    const Shape xs = x.shape();
    Var out = conv2d(g, x, w, 1, 1);
    const Index n = xs[0], h = xs[2], wd = xs[3];
    const Index co = w.shape()[0];
    Var bias = g.gather(b, make_channel_map(n, co, h * wd), {n, co, h, wd});
    return g.add(out, bias);
}

Var global_avg_pool(Graph& g, Var x) {
    const Shape& xs = x.shape();
    const Index n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    Var pooled = g.scatter_add(x, make_row_map(n * c, hw), {n * c});
    return g.reshape(g.scale(pooled, 1.0 / Scalar(hw)), {n, c});
}

} // namespace

Var conv2d(Graph& g, Var x, Var w, Index stride, Index pad) {
    const Shape xs = x.shape();
    const Shape ws = w.shape();
    require(xs.size() == 4 && ws.size() == 4, "conv2d: operands must be rank 4");
    require(ws[1] == xs[1], "conv2d: channel mismatch");
    require(stride > 0 && pad >= 0, "conv2d: bad stride/padding");
    const Index n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
    const Index co = ws[0], kh = ws[2], kw = ws[3];
    const Index oh = (h + 2 * pad - kh) / stride + 1;
    const Index ow = (wd + 2 * pad - kw) / stride + 1;
    require(oh > 0 && ow > 0, "conv2d: kernel larger than the padded input");

    Var cols = g.gather(x, make_im2col_map(n, ci, h, wd, kh, kw, pad, stride),
                        {n * oh * ow, ci * kh * kw});
    Var out = g.matmul(cols, g.transpose(g.reshape(w, {co, ci * kh * kw})));
    out = g.reshape(out, {n, oh, ow, co});
    return g.gather(out, make_permute_map({n, oh, ow, co}, {0, 3, 1, 2}), {n, co, oh, ow});
}

BatchNormOut batchnorm2d(Graph& g, Var x, Var gamma, Var beta, const Vec& run_mean,
                         const Vec& run_var, BnMode mode, double momentum, double eps) {
    const Shape xs = x.shape();
    require(xs.size() == 4, "batchnorm: input must be rank 4");
    require(eps > 0.0, "batchnorm: epsilon must be positive");
    const Index n = xs[0], c = xs[1], hw = xs[2] * xs[3];
    require(gamma.val().size() == c && beta.val().size() == c && run_mean.size() == c &&
                run_var.size() == c,
            "batchnorm: per-channel parameter size mismatch");
    require(run_var.minCoeff() >= 0.0, "batchnorm: running variance must be >= 0");
    const Scalar cnt = Scalar(n * hw);
    IndexMap cmap = make_channel_map(n, c, hw);

    // Batch statistics (biased variance), materialized in both modes: the
    // feature regularizer compares them against the running buffers.
    Var mean = g.scale(g.scatter_add(x, cmap, {c}), 1.0 / cnt);
    Var centered = g.sub(x, g.gather(mean, cmap, xs));
    Var var = g.scale(g.scatter_add(g.mul(centered, centered), cmap, {c}), 1.0 / cnt);

    Var norm_centered, norm_var;
    if (mode == BnMode::train) {
        norm_centered = centered;
        norm_var = var;
    } else {
        Var rm = g.constant(Tensor(run_mean, {c}));
        norm_centered = g.sub(x, g.gather(rm, cmap, xs));
        norm_var = g.constant(Tensor(run_var, {c}));
    }
    Var inv = g.recip(g.sqrt(g.add_const(norm_var, eps)));
    Var xhat = g.mul(norm_centered, g.gather(inv, cmap, xs));
    Var y = g.add(g.mul(xhat, g.gather(gamma, cmap, xs)), g.gather(beta, cmap, xs));

    BatchNormOut out{y, mean, var, run_mean, run_var};
    if (mode == BnMode::train) {
        out.new_mean = (1.0 - momentum) * run_mean + momentum * mean.val().values();
        out.new_var = (1.0 - momentum) * run_var + momentum * var.val().values();
    }
    return out;
}

const LayoutEntry& ParamVector::entry(const std::string& name) const {
    for (const auto& e : layout)
        if (e.name == name) return e;
    throw contract_violation("ParamVector: unknown layer " + name);
}

std::vector<LayoutEntry> model_layout(const ModelSpec& spec) {
    require(spec.num_classes >= 2, "model: need at least two classes");
    require(spec.in_c > 0 && spec.in_h > 0 && spec.in_w > 0, "model: bad input shape");

    std::vector<LayoutEntry> layout;
    Index t_off = 0, b_off = 0;
    auto push = [&](std::string name, Shape shape, bool buffer = false) {
        Index& off = buffer ? b_off : t_off;
        layout.push_back({std::move(name), buffer, off, shape});
        off += shape_size(shape);
    };

    if (spec.arch == Arch::mlp) {
        Index in = spec.input_size();
        int i = 1;
        for (Index h : spec.mlp_hidden) {
            require(h > 0, "model: bad hidden width");
            push("fc" + std::to_string(i) + ".weight", {h, in});
            push("fc" + std::to_string(i) + ".bias", {h});
            in = h;
            ++i;
        }
        push("head.weight", {Index(spec.num_classes), in});
        push("head.bias", {Index(spec.num_classes)});
    } else {
        require(spec.in_h >= 4 && spec.in_w >= 4, "convnet: input must be at least 4x4");
        require(spec.conv1 > 0 && spec.conv2 > 0, "convnet: bad channel widths");
        push("conv1.weight", {spec.conv1, spec.in_c, 3, 3});
        push("conv1.bias", {spec.conv1});
        push("bn1.gamma", {spec.conv1});
        push("bn1.beta", {spec.conv1});
        push("conv2.weight", {spec.conv2, spec.conv1, 3, 3});
        push("conv2.bias", {spec.conv2});
        push("bn2.gamma", {spec.conv2});
        push("bn2.beta", {spec.conv2});
        push("head.weight", {Index(spec.num_classes), spec.conv2});
        push("head.bias", {Index(spec.num_classes)});
        push("bn1.running_mean", {spec.conv1}, true);
        push("bn1.running_var", {spec.conv1}, true);
        push("bn2.running_mean", {spec.conv2}, true);
        push("bn2.running_var", {spec.conv2}, true);
    }
    return layout;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    ParamVector pv;
    pv.layout = model_layout(spec);
    Index t_len = 0, b_len = 0;
    for (const auto& e : pv.layout) (e.buffer ? b_len : t_len) += e.size();
    pv.trainable = Vec::Zero(t_len);
    pv.buffers = Vec::Zero(b_len);

    int layer_idx = 0;
    for (const auto& e : pv.layout) {
        if (e.buffer) {
            if (e.name.ends_with("running_var"))
                pv.buffers.segment(e.offset, e.size()).setOnes();
            continue;
        }
        if (e.name.ends_with(".weight")) {
            // Kaiming-uniform: U(+-sqrt(6 / fan_in)).
            Index fan_in = 1;
            for (std::size_t i = 1; i < e.shape.size(); ++i) fan_in *= e.shape[i];
            const double bound = std::sqrt(6.0 / double(fan_in));
            Rng rng(derive_seed(seed, {0x1417u, std::uint64_t(layer_idx)}));
            for (Index i = 0; i < e.size(); ++i)
                pv.trainable[e.offset + i] = rng.uniform(-bound, bound);
        } else if (e.name.ends_with(".gamma")) {
            pv.trainable.segment(e.offset, e.size()).setOnes();
        }
        // biases and beta stay zero
        ++layer_idx;
    }
    return pv;
}

void check_params(const ModelSpec& spec, const ParamVector& pv) {
    const auto layout = model_layout(spec);
    require(pv.layout.size() == layout.size(), "params: layout entry count mismatch");
    Index t_len = 0, b_len = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& a = layout[i];
        const auto& b = pv.layout[i];
        require(a.name == b.name && a.buffer == b.buffer && a.offset == b.offset &&
                    a.shape == b.shape,
                "params: layout mismatch at " + a.name);
        (a.buffer ? b_len : t_len) += a.size();
    }
    require(pv.trainable.size() == t_len && pv.buffers.size() == b_len,
            "params: vector lengths do not cover the layout");
    require(pv.trainable.allFinite() && pv.buffers.allFinite(), "params: non-finite entries");
}

std::vector<std::pair<std::string, Tensor>> unflatten(const ParamVector& pv) {
    std::vector<std::pair<std::string, Tensor>> parts;
    parts.reserve(pv.layout.size());
    for (const auto& e : pv.layout) {
        const Vec& src = e.buffer ? pv.buffers : pv.trainable;
        parts.emplace_back(e.name, Tensor(src.segment(e.offset, e.size()), e.shape));
    }
    return parts;
}

ParamVector flatten(const ModelSpec& spec,
                    const std::vector<std::pair<std::string, Tensor>>& parts) {
    ParamVector pv;
    pv.layout = model_layout(spec);
    Index t_len = 0, b_len = 0;
    for (const auto& e : pv.layout) (e.buffer ? b_len : t_len) += e.size();
    pv.trainable = Vec::Zero(t_len);
    pv.buffers = Vec::Zero(b_len);
    for (const auto& e : pv.layout) {
        auto it = std::find_if(parts.begin(), parts.end(),
                               [&](const auto& p) { return p.first == e.name; });
        require(it != parts.end(), "flatten: missing layer " + e.name);
        require(it->second.shape() == e.shape, "flatten: shape mismatch at " + e.name);
        Vec& dst = e.buffer ? pv.buffers : pv.trainable;
        dst.segment(e.offset, e.size()) = it->second.values();
    }
    return pv;
}

ForwardOut model_forward(Graph& g, const ModelSpec& spec, Var theta, Var x,
                         const Vec& buffers, BnMode mode) {
    const Shape& xs = x.shape();
    require(xs.size() == 4, "forward: input must be [M,C,H,W]");
    require(xs[1] == spec.in_c && xs[2] == spec.in_h && xs[3] == spec.in_w,
            "forward: input shape " + shape_str(xs) + " does not match the model");

    const auto layout = model_layout(spec);
    Var buf = g.constant(buffers.size() > 0 ? Tensor(buffers, {buffers.size()})
                                            : Tensor::scalar(0.0));
    LayerSlices L{spec, layout, g, theta, buf};

    ForwardOut out{Var{}, {}, buffers};

    if (spec.arch == Arch::mlp) {
        Var h = g.reshape(x, {xs[0], spec.input_size()});
        for (std::size_t i = 1; i <= spec.mlp_hidden.size(); ++i) {
            const std::string p = "fc" + std::to_string(i);
            h = g.relu(dense(g, h, L.get(p + ".weight"), L.get(p + ".bias")));
        }
        out.logits = dense(g, h, L.get("head.weight"), L.get("head.bias"));
        return out;
    }

    Vec new_buffers = buffers;
    auto bn_block = [&](Var h, const std::string& p) {
        const auto& me = [&]() -> const LayoutEntry& {
            for (const auto& e : layout)
                if (e.name == p + ".running_mean") return e;
            throw contract_violation("forward: missing buffer " + p);
        }();
        const auto& ve = [&]() -> const LayoutEntry& {
            for (const auto& e : layout)
                if (e.name == p + ".running_var") return e;
            throw contract_violation("forward: missing buffer " + p);
        }();
        BatchNormOut bn = batchnorm2d(g, h, L.get(p + ".gamma"), L.get(p + ".beta"),
                                      buffers.segment(me.offset, me.size()),
                                      buffers.segment(ve.offset, ve.size()), mode,
                                      spec.bn_momentum, spec.bn_eps);
        out.bn_batch_stats.emplace_back(bn.batch_mean, bn.batch_var);
        if (mode == BnMode::train) {
            new_buffers.segment(me.offset, me.size()) = bn.new_mean;
            new_buffers.segment(ve.offset, ve.size()) = bn.new_var;
        }
        return bn.y;
    };

    Var h = conv3x3(g, x, L.get("conv1.weight"), L.get("conv1.bias"));
    h = g.relu(bn_block(h, "bn1"));
    h = conv3x3(g, h, L.get("conv2.weight"), L.get("conv2.bias"));
    h = g.relu(bn_block(h, "bn2"));
    h = global_avg_pool(g, h);
    out.logits = dense(g, h, L.get("head.weight"), L.get("head.bias"));
    out.new_buffers = std::move(new_buffers);
    return out;
}

Vec predict_logits(const ModelSpec& spec, const ParamVector& pv, const Tensor& x) {
    Graph g;
    Var theta = g.constant(Tensor(pv.trainable, {pv.trainable.size()}));
    return model_forward(g, spec, theta, g.constant(x), pv.buffers, BnMode::eval)
        .logits.val()
        .values();
}

double mean_loss(const ModelSpec& spec, const ParamVector& pv, const Tensor& x,
                 const std::vector<int>& labels) {
    Graph g;
    Var theta = g.constant(Tensor(pv.trainable, {pv.trainable.size()}));
    Var logits = model_forward(g, spec, theta, g.constant(x), pv.buffers, BnMode::eval).logits;
    return cross_entropy(logits, labels).item();
}

double accuracy(const ModelSpec& spec, const ParamVector& pv, const Tensor& x,
                const std::vector<int>& labels) {
    require(!labels.empty(), "accuracy: empty set");
    const Vec logits = predict_logits(spec, pv, x);
    const Index c = Index(spec.num_classes);
    Index hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Index best = 0;
        for (Index j = 1; j < c; ++j)
            if (logits[Index(i) * c + j] > logits[Index(i) * c + best]) best = j;
        hits += (best == Index(labels[i]));
    }
    return double(hits) / double(labels.size());
}

double model_distance(const ParamVector& a, const ParamVector& b, DistanceMode mode) {
    require(a.trainable.size() == b.trainable.size(), "model_distance: size mismatch");
    if (mode == DistanceMode::global_rms) {
        const double d = double(a.trainable.size());
        return std::sqrt((a.trainable - b.trainable).squaredNorm() / d);
    }
    require(a.layout.size() == b.layout.size(), "model_distance: layout mismatch");
    double acc = 0.0;
    for (const auto& e : a.layout) {
        if (e.buffer) continue;
        const double sq =
            (a.trainable.segment(e.offset, e.size()) - b.trainable.segment(e.offset, e.size()))
                .squaredNorm();
        acc += sq / double(e.size());
    }
    return std::sqrt(acc);
}

} // namespace fedlab
