#include "fedlab/graph.hpp"

#include <algorithm>
#include <cmath>

namespace fedlab {

namespace {

Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
as_matrix(const Tensor& t) {
    return {t.values().data(), t.dim(0), t.dim(1)};
}

} // namespace

void Graph::check_mine(Var v, const char* name) const {
    require(v.valid() && v.g == this && v.id < node_count(),
            std::string(name) + ": var does not belong to this graph");
}

Var Graph::emit(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, int(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor t) { return emit({Op::leaf, -1, -1, std::move(t)}); }
Var Graph::constant(Tensor t) { return emit({Op::constant, -1, -1, std::move(t)}); }

Var Graph::binary_same_shape(Op op, Var a, Var b, const char* name) {
    check_mine(a, name);
    check_mine(b, name);
    const Tensor& ta = at(a.id).val;
    const Tensor& tb = at(b.id).val;
    require(ta.shape() == tb.shape(), std::string(name) + ": shape mismatch " +
                                          shape_str(ta.shape()) + " vs " + shape_str(tb.shape()));
    Vec v;
    switch (op) {
        case Op::add: v = ta.values() + tb.values(); break;
        case Op::sub: v = ta.values() - tb.values(); break;
        case Op::mul: v = ta.values().cwiseProduct(tb.values()); break;
        default: require(false, "binary_same_shape: bad op");
    }
    return emit({op, a.id, b.id, Tensor(std::move(v), ta.shape())});
}

Var Graph::add(Var a, Var b) { return binary_same_shape(Op::add, a, b, "add"); }
Var Graph::sub(Var a, Var b) { return binary_same_shape(Op::sub, a, b, "sub"); }
Var Graph::mul(Var a, Var b) { return binary_same_shape(Op::mul, a, b, "mul"); }

Var Graph::neg(Var a) {
    check_mine(a, "neg");
    const Tensor& t = at(a.id).val;
    return emit({Op::neg, a.id, -1, Tensor(-t.values(), t.shape())});
}

Var Graph::scale(Var a, Scalar c) {
    check_mine(a, "scale");
    const Tensor& t = at(a.id).val;
    Node n{Op::scale, a.id, -1, Tensor(t.values() * c, t.shape())};
    n.c0 = c;
    return emit(std::move(n));
}

Var Graph::add_const(Var a, Scalar c) {
    check_mine(a, "add_const");
    const Tensor& t = at(a.id).val;
    Node n{Op::add_const, a.id, -1, Tensor(Vec((t.values().array() + c).matrix()), t.shape())};
    n.c0 = c;
    return emit(std::move(n));
}

Var Graph::recip(Var a) {
    check_mine(a, "recip");
    const Tensor& t = at(a.id).val;
    return emit({Op::recip, a.id, -1, Tensor(t.values().cwiseInverse(), t.shape())});
}

Var Graph::log(Var a) {
    check_mine(a, "log");
    const Tensor& t = at(a.id).val;
    return emit({Op::log_e, a.id, -1, Tensor(Vec(t.values().array().log().matrix()), t.shape())});
}

Var Graph::exp(Var a) {
    check_mine(a, "exp");
    const Tensor& t = at(a.id).val;
    return emit({Op::exp_e, a.id, -1, Tensor(Vec(t.values().array().exp().matrix()), t.shape())});
}

Var Graph::sqrt(Var a) {
    check_mine(a, "sqrt");
    const Tensor& t = at(a.id).val;
    return emit({Op::sqrt_e, a.id, -1, Tensor(Vec(t.values().array().sqrt().matrix()), t.shape())});
}

Var Graph::abs(Var a) {
    check_mine(a, "abs");
    const Tensor& t = at(a.id).val;
    return emit({Op::abs_e, a.id, -1, Tensor(Vec(t.values().array().abs().matrix()), t.shape())});
}

Var Graph::relu(Var a) {
    check_mine(a, "relu");
    const Tensor& t = at(a.id).val;
    return emit({Op::relu, a.id, -1, Tensor(Vec(t.values().array().max(0.0).matrix()), t.shape())});
}

Var Graph::clip(Var a, Scalar lo, Scalar hi) {
    check_mine(a, "clip");
    require(lo < hi, "clip: lo must be below hi");
    const Tensor& t = at(a.id).val;
    Node n{Op::clip, a.id, -1, Tensor(Vec(t.values().array().max(lo).min(hi).matrix()), t.shape())};
    n.c0 = lo;
    n.c1 = hi;
    return emit(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    check_mine(a, "matmul");
    check_mine(b, "matmul");
    const Tensor& ta = at(a.id).val;
    const Tensor& tb = at(b.id).val;
    require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0),
            "matmul: needs [m,k] x [k,n], got " + shape_str(ta.shape()) + " x " +
                shape_str(tb.shape()));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
        as_matrix(ta) * as_matrix(tb);
    Vec flat = Eigen::Map<const Vec>(out.data(), out.size());
    return emit({Op::matmul, a.id, b.id, Tensor(std::move(flat), {ta.dim(0), tb.dim(1)})});
}

Var Graph::transpose(Var a) {
    check_mine(a, "transpose");
    const Tensor& t = at(a.id).val;
    require(t.rank() == 2, "transpose: needs rank 2, got " + shape_str(t.shape()));
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
        as_matrix(t).transpose();
    Vec flat = Eigen::Map<const Vec>(out.data(), out.size());
    return emit({Op::transpose2d, a.id, -1, Tensor(std::move(flat), {t.dim(1), t.dim(0)})});
}

Var Graph::reshape(Var a, Shape shape) {
    check_mine(a, "reshape");
    return emit({Op::reshape, a.id, -1, at(a.id).val.reshaped(std::move(shape))});
}

Var Graph::sum(Var a) {
    check_mine(a, "sum");
    const Tensor& t = at(a.id).val;
    return emit({Op::sum, a.id, -1, Tensor::scalar(t.values().sum())});
}

Var Graph::bcast(Var a, Shape shape) {
    check_mine(a, "bcast");
    const Tensor& t = at(a.id).val;
    require(t.size() == 1, "bcast: input must be scalar");
    return emit({Op::bcast, a.id, -1, Tensor::full(std::move(shape), t[0])});
}

Var Graph::gather(Var a, IndexMap map, Shape out_shape) {
    check_mine(a, "gather");
    require(map != nullptr, "gather: null map");
    require(Index(map->size()) == shape_size(out_shape),
            "gather: map length " + std::to_string(map->size()) + " must equal output size " +
                std::to_string(shape_size(out_shape)));
    const Tensor& t = at(a.id).val;
    Vec out(map->size());
    const Scalar* src = t.values().data();
    const Index n_in = t.size();
    for (std::size_t i = 0; i < map->size(); ++i) {
        const Index j = (*map)[i];
        require(j < n_in, "gather: map index out of range");
        out[Index(i)] = j < 0 ? 0.0 : src[j];
    }
    Node n{Op::gather, a.id, -1, Tensor(std::move(out), std::move(out_shape))};
    n.map = std::move(map);
    return emit(std::move(n));
}

Var Graph::scatter_add(Var a, IndexMap map, Shape out_shape) {
    check_mine(a, "scatter_add");
    require(map != nullptr, "scatter_add: null map");
    const Tensor& t = at(a.id).val;
    require(Index(map->size()) == t.size(), "scatter_add: map length must equal input size");
    Vec out = Vec::Zero(shape_size(out_shape));
    const Scalar* src = t.values().data();
    for (std::size_t i = 0; i < map->size(); ++i) {
        const Index j = (*map)[i];
        require(j < out.size(), "scatter_add: map index out of range");
        if (j >= 0) out[j] += src[Index(i)];
    }
    Node n{Op::scatter_add, a.id, -1, Tensor(std::move(out), std::move(out_shape))};
    n.map = std::move(map);
    return emit(std::move(n));
}

std::vector<Var> Graph::grad(Var y, std::span<const Var> xs) {
    check_mine(y, "grad");
    for (Var x : xs) check_mine(x, "grad");
    require(at(y.id).val.size() == 1, "grad: objective must be scalar");

    const int n = node_count();
    std::vector<char> needed(std::size_t(n), 0);
    std::vector<int> stack{y.id};
    needed[std::size_t(y.id)] = 1;
    while (!stack.empty()) {
        const Node& nd = nodes_[std::size_t(stack.back())];
        stack.pop_back();
        for (int in : {nd.a, nd.b}) {
            if (in >= 0 && !needed[std::size_t(in)]) {
                needed[std::size_t(in)] = 1;
                stack.push_back(in);
            }
        }
    }

    std::vector<int> adj(std::size_t(n), -1);
    adj[std::size_t(y.id)] = constant(Tensor::full(at(y.id).val.shape(), 1.0)).id;

    auto accum = [&](int target, Var contrib) {
        int& slot = adj[std::size_t(target)];
        slot = slot < 0 ? contrib.id : add(Var{this, slot}, contrib).id;
    };

    for (int id = y.id; id >= 0; --id) {
        if (!needed[std::size_t(id)] || adj[std::size_t(id)] < 0) continue;
        // Copy: emitting adjoint ops below may reallocate the node arena.
        const Node nd = nodes_[std::size_t(id)];
        const Var g{this, adj[std::size_t(id)]};
        const Var self{this, id};
        const Var a{this, nd.a};
        const Var b{this, nd.b};
        switch (nd.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::add:
                accum(nd.a, g);
                accum(nd.b, g);
                break;
            case Op::sub:
                accum(nd.a, g);
                accum(nd.b, neg(g));
                break;
            case Op::mul:
                accum(nd.a, mul(g, b));
                accum(nd.b, mul(g, a));
                break;
            case Op::neg:
                accum(nd.a, neg(g));
                break;
            case Op::scale:
                accum(nd.a, scale(g, nd.c0));
                break;
            case Op::add_const:
                accum(nd.a, g);
                break;
            case Op::recip:
                accum(nd.a, neg(mul(g, mul(self, self))));
                break;
            case Op::log_e:
                accum(nd.a, mul(g, recip(a)));
                break;
            case Op::exp_e:
                accum(nd.a, mul(g, self));
                break;
            case Op::sqrt_e:
                accum(nd.a, mul(g, scale(recip(self), 0.5)));
                break;
            case Op::abs_e: {
                const Vec& v = at(nd.a).val.values();
                Vec sign(v.size());
                for (Index i = 0; i < v.size(); ++i)
                    sign[i] = v[i] > 0.0 ? 1.0 : (v[i] < 0.0 ? -1.0 : 0.0);
                accum(nd.a, mul(g, constant(Tensor(std::move(sign), at(nd.a).val.shape()))));
                break;
            }
            case Op::relu: {
                const Vec& v = at(nd.a).val.values();
                Vec mask = (v.array() > 0.0).cast<Scalar>().matrix();
                accum(nd.a, mul(g, constant(Tensor(std::move(mask), at(nd.a).val.shape()))));
                break;
            }
            case Op::clip: {
                const Vec& v = at(nd.a).val.values();
                Vec mask = (v.array() >= nd.c0 && v.array() <= nd.c1).cast<Scalar>().matrix();
                accum(nd.a, mul(g, constant(Tensor(std::move(mask), at(nd.a).val.shape()))));
                break;
            }
            case Op::matmul:
                accum(nd.a, matmul(g, transpose(b)));
                accum(nd.b, matmul(transpose(a), g));
                break;
            case Op::transpose2d:
                accum(nd.a, transpose(g));
                break;
            case Op::reshape:
                accum(nd.a, reshape(g, at(nd.a).val.shape()));
                break;
            case Op::sum:
                accum(nd.a, bcast(g, at(nd.a).val.shape()));
                break;
            case Op::bcast:
                accum(nd.a, reshape(sum(g), at(nd.a).val.shape()));
                break;
            case Op::gather:
                accum(nd.a, scatter_add(g, nd.map, at(nd.a).val.shape()));
                break;
            case Op::scatter_add:
                accum(nd.a, gather(g, nd.map, at(nd.a).val.shape()));
                break;
        }
    }

    std::vector<Var> out;
    out.reserve(xs.size());
    for (Var x : xs) {
        const int slot = adj[std::size_t(x.id)];
        out.push_back(slot < 0 ? constant(Tensor::zeros(at(x.id).val.shape())) : Var{this, slot});
    }
    return out;
}

// -- composites ---------------------------------------------------------------

Var dot(Var a, Var b) { return a.g->sum(a.g->mul(a, b)); }

Var l2_norm(Var x, Scalar eps) {
    Graph& g = *x.g;
    Var ss = g.sum(g.mul(x, x));
    if (eps > 0.0) ss = g.add_const(ss, eps);
    return g.sqrt(ss);
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
    Graph& g = *logits.g;
    const Tensor& t = logits.val();
    require(t.rank() == 2, "cross_entropy: logits must be [B,C]");
    const Index B = t.dim(0), C = t.dim(1);
    require(Index(labels.size()) == B, "cross_entropy: label count must match batch");

    // Row maxima enter as constants: subtracting any per-row constant leaves
    // the loss value and its gradient unchanged, so detaching is exact.
    Vec row_max(B);
    for (Index r = 0; r < B; ++r)
        row_max[r] = t.values().segment(r * C, C).maxCoeff();
    Var mx = g.constant(Tensor(std::move(row_max), {B}));

    IndexMap rows = make_row_map(B, C);
    Var shifted = g.sub(logits, g.gather(mx, rows, {B, C}));
    Var lse = g.add(g.log(g.scatter_add(g.exp(shifted), rows, {B})), mx);
    Var picked = g.gather(logits, make_label_map(labels, C), {B});
    return g.scale(g.sum(g.sub(lse, picked)), 1.0 / Scalar(B));
}

Var total_variation(Var images) {
    Graph& g = *images.g;
    const Tensor& t = images.val();
    require(t.rank() == 4, "total_variation: images must be [M,C,H,W]");
    const Index M = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);

    auto shifted_diff = [&](Index dh, Index dw, Index oh, Index ow) {
        auto hi = std::make_shared<std::vector<Index>>();
        auto lo = std::make_shared<std::vector<Index>>();
        hi->reserve(std::size_t(M * C * oh * ow));
        lo->reserve(std::size_t(M * C * oh * ow));
        for (Index m = 0; m < M; ++m)
            for (Index c = 0; c < C; ++c)
                for (Index y = 0; y < oh; ++y)
                    for (Index x = 0; x < ow; ++x) {
                        const Index base = ((m * C + c) * H + y) * W + x;
                        lo->push_back(base);
                        hi->push_back(((m * C + c) * H + y + dh) * W + x + dw);
                    }
        Shape s{M, C, oh, ow};
        return g.sub(g.gather(images, hi, s), g.gather(images, lo, s));
    };

    Var acc = g.constant(0.0);
    if (H > 1) acc = g.add(acc, g.sum(g.abs(shifted_diff(1, 0, H - 1, W))));
    if (W > 1) acc = g.add(acc, g.sum(g.abs(shifted_diff(0, 1, H, W - 1))));
    return g.scale(acc, 1.0 / Scalar(M));
}

// -- index-map builders -------------------------------------------------------

IndexMap make_permute_map(const Shape& in_shape, const std::vector<int>& perm) {
    const std::size_t r = in_shape.size();
    require(perm.size() == r, "permute: rank mismatch");
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[std::size_t(perm[i])];

    std::vector<Index> in_stride(r, 1), out_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
    for (std::size_t i = r; i-- > 1;) out_stride[i - 1] = out_stride[i] * out_shape[i];

    const Index n = shape_size(in_shape);
    auto map = std::make_shared<std::vector<Index>>(std::size_t(n));
    for (Index o = 0; o < n; ++o) {
        Index rem = o, in_flat = 0;
        for (std::size_t i = 0; i < r; ++i) {
            const Index coord = rem / out_stride[i];
            rem -= coord * out_stride[i];
            in_flat += coord * in_stride[std::size_t(perm[i])];
        }
        (*map)[std::size_t(o)] = in_flat;
    }
    return map;
}

IndexMap make_row_map(Index rows, Index cols) {
    auto map = std::make_shared<std::vector<Index>>(std::size_t(rows * cols));
    for (Index i = 0; i < rows * cols; ++i) (*map)[std::size_t(i)] = i / cols;
    return map;
}

IndexMap make_label_map(const std::vector<int>& labels, Index cols) {
    auto map = std::make_shared<std::vector<Index>>(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b) {
        require(labels[b] >= 0 && Index(labels[b]) < cols, "label out of range");
        (*map)[b] = Index(b) * cols + labels[b];
    }
    return map;
}

IndexMap make_channel_map(Index n, Index c, Index hw) {
    auto map = std::make_shared<std::vector<Index>>(std::size_t(n * c * hw));
    Index i = 0;
    for (Index ni = 0; ni < n; ++ni)
        for (Index ci = 0; ci < c; ++ci)
            for (Index k = 0; k < hw; ++k) (*map)[std::size_t(i++)] = ci;
    return map;
}

IndexMap make_im2col_map(Index n, Index c, Index h, Index w, Index kh, Index kw,
                         Index pad, Index stride) {
    require(stride > 0 && pad >= 0, "im2col: bad stride/pad");
    const Index oh = (h + 2 * pad - kh) / stride + 1;
    const Index ow = (w + 2 * pad - kw) / stride + 1;
    require(oh > 0 && ow > 0, "im2col: kernel larger than padded input");
    // Rows index (n, oh, ow); columns index (c, kh, kw); -1 marks padding.
    auto map = std::make_shared<std::vector<Index>>(std::size_t(n * oh * ow * c * kh * kw));
    std::size_t i = 0;
    for (Index ni = 0; ni < n; ++ni)
        for (Index oy = 0; oy < oh; ++oy)
            for (Index ox = 0; ox < ow; ++ox)
                for (Index ci = 0; ci < c; ++ci)
                    for (Index ky = 0; ky < kh; ++ky)
                        for (Index kx = 0; kx < kw; ++kx) {
                            const Index y = oy * stride - pad + ky;
                            const Index x = ox * stride - pad + kx;
                            (*map)[i++] = (y < 0 || y >= h || x < 0 || x >= w)
                                              ? -1
                                              : ((ni * c + ci) * h + y) * w + x;
                        }
    return map;
}

} // namespace fedlab
