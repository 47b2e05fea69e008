#include "fedlab/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedlab {

Var dummy_gradient_node(Graph& g, const ModelSpec& spec, const ParamVector& params,
                        Var images, int y_tar) {
    const Shape& xs = images.shape();
    require(xs.size() == 4 && xs[1] == spec.in_c && xs[2] == spec.in_h && xs[3] == spec.in_w,
            "dummy_gradient: images must be [M, C, H, W] matching the model input");
    require(y_tar >= 0 && y_tar < spec.num_classes, "dummy_gradient: y_tar out of range");

    Var theta = g.leaf(Tensor(params.trainable, {params.trainable.size()}));
    ForwardOut fw = model_forward(g, spec, theta, images, params.buffers, BnMode::eval);
    const std::vector<int> labels(std::size_t(xs[0]), y_tar);
    Var loss = cross_entropy(fw.logits, labels);
    return g.grad(loss, theta);
}

Vec dummy_gradient(const ModelSpec& spec, const ParamVector& params, const Tensor& images,
                   int y_tar) {
    Graph g;
    Var x = g.constant(images);
    return dummy_gradient_node(g, spec, params, x, y_tar).val().values();
}

namespace {

// Builds the full objective in g with `images` already a node of g.
Var objective_node(Graph& g, const InversionTask& task, Var images) {
    Var dhat = dummy_gradient_node(g, task.spec, task.params, images, task.y_tar);

    Var match;
    if (task.objective == InvObjective::l2) {
        Var diff = g.sub(dhat, g.constant(Tensor(task.delta_agr, {task.delta_agr.size()})));
        match = g.sum(g.mul(diff, diff));
    } else {
        const double agr_norm = task.delta_agr.norm();
        require(agr_norm > 0.0, "inversion: delta_agr is all zeros");
        if (dhat.val().values().norm() == 0.0) {
            warn("inversion: dummy gradient vanished; cosine term pinned at worst case");
            match = g.constant(1.0);
        } else {
            Var agr_unit = g.constant(Tensor(task.delta_agr / agr_norm,
                                             {task.delta_agr.size()}));
            Var cos = g.mul(dot(dhat, agr_unit), g.recip(l2_norm(dhat, 1e-30)));
            match = g.sub(g.constant(1.0), cos);
        }
    }
    Var obj = g.scale(match, task.lambda0);

    if (task.lambda1 != 0.0)
        obj = g.add(obj, g.scale(total_variation(images), task.lambda1));
    if (task.lambda2 != 0.0) {
        Var reg = task.squared_l2_reg ? g.sum(g.mul(images, images))
                                      : l2_norm(images, 1e-30);
        obj = g.add(obj, g.scale(reg, task.lambda2));
    }
    if (task.lambda3 != 0.0) {
        Var clipped = g.clip(images, 0.0, 1.0);
        obj = g.add(obj, g.scale(l2_norm(g.sub(clipped, images), 1e-30), task.lambda3));
    }
    return obj;
}

void check_task(const InversionTask& task) {
    require(task.num_images >= 1, "inversion: need at least one dummy image");
    require(task.steps >= 0, "inversion: steps must be >= 0");
    require(task.lambda0 >= 0 && task.lambda1 >= 0 && task.lambda2 >= 0 && task.lambda3 >= 0,
            "inversion: lambda weights must be non-negative");
    require(task.lr > 0.0, "inversion: lr must be positive");
    require(task.delta_agr.size() == task.params.trainable.size(),
            "inversion: delta_agr does not match the trainable vector");
    check_params(task.spec, task.params);
}

} // namespace

double inversion_objective(const InversionTask& task, const Tensor& images) {
    check_task(task);
    Graph g;
    return objective_node(g, task, g.leaf(images)).item();
}

InversionResult invert(const InversionTask& task) {
    check_task(task);
    const Shape shape = {Index(task.num_images), task.spec.in_c, task.spec.in_h,
                         task.spec.in_w};
    const Index n = shape_size(shape);

    Rng rng(derive_seed(task.seed, {0x12f3}));
    Vec x(n);
    for (Index i = 0; i < n; ++i) x[i] = rng.uniform();

    Vec adam_m = Vec::Zero(n), adam_v = Vec::Zero(n);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    InversionResult res;
    res.objective_trace.reserve(std::size_t(task.steps));
    for (int t = 1; t <= task.steps; ++t) {
        Graph g;
        Var images = g.leaf(Tensor(x, shape));
        Var obj = objective_node(g, task, images);
        res.objective_trace.push_back(obj.item());

        Vec grad = g.grad(obj, images).val().values();
        if (task.sign_step)
            grad = grad.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });

        if (task.optimizer == InvOptimizer::adam) {
            adam_m = b1 * adam_m + (1 - b1) * grad;
            adam_v = b2 * adam_v + (1 - b2) * grad.cwiseProduct(grad);
            const double bc1 = 1 - std::pow(b1, t), bc2 = 1 - std::pow(b2, t);
            x -= (task.lr / bc1) * adam_m.cwiseQuotient(
                     ((adam_v / bc2).cwiseSqrt().array() + eps).matrix());
        } else {
            x -= task.lr * grad;
        }
    }
    res.images = Tensor(std::move(x), shape);
    return res;
}

std::vector<int> assignment_min_cost(const std::vector<std::vector<double>>& cost) {
    const int n = int(cost.size());
    require(n > 0, "assignment: empty cost matrix");
    for (const auto& row : cost)
        require(int(row.size()) == n, "assignment: cost matrix must be square");
    const double inf = std::numeric_limits<double>::infinity();

    // Classical potentials method over a square matrix, O(n^3).
    std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(n) + 1, 0.0);
    std::vector<int> p(std::size_t(n) + 1, 0), way(std::size_t(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(std::size_t(n) + 1, inf);
        std::vector<char> used(std::size_t(n) + 1, 0);
        do {
            used[std::size_t(j0)] = 1;
            const int i0 = p[std::size_t(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[std::size_t(j)]) continue;
                const double cur = cost[std::size_t(i0) - 1][std::size_t(j) - 1] -
                                   u[std::size_t(i0)] - v[std::size_t(j)];
                if (cur < minv[std::size_t(j)]) {
                    minv[std::size_t(j)] = cur;
                    way[std::size_t(j)] = j0;
                }
                if (minv[std::size_t(j)] < delta) {
                    delta = minv[std::size_t(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[std::size_t(j)]) {
                    u[std::size_t(p[std::size_t(j)])] += delta;
                    v[std::size_t(j)] -= delta;
                } else {
                    minv[std::size_t(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[std::size_t(j0)] != 0);
        do {
            const int j1 = way[std::size_t(j0)];
            p[std::size_t(j0)] = p[std::size_t(j1)];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> assign(std::size_t(n), -1);
    for (int j = 1; j <= n; ++j)
        if (p[std::size_t(j)] > 0) assign[std::size_t(p[std::size_t(j)]) - 1] = j - 1;
    return assign;
}

MatchScore match_and_score(const Tensor& recovered, const Tensor& originals) {
    require(recovered.rank() == 4 && originals.rank() == 4,
            "match_and_score: expected [M, C, H, W] tensors");
    require(recovered.shape() == originals.shape(),
            "match_and_score: recovered/original counts or shapes differ");
    const Index m = recovered.dim(0);
    const Index chw = recovered.size() / m;
    const Shape img_shape = {recovered.dim(1), recovered.dim(2), recovered.dim(3)};

    auto slice = [&](const Tensor& t, Index i, bool clip) {
        Vec v = t.values().segment(i * chw, chw);
        if (clip) v = v.cwiseMax(0.0).cwiseMin(1.0);
        return Tensor(std::move(v), img_shape);
    };

    std::vector<std::vector<double>> psnr_ij(std::size_t(m),
                                             std::vector<double>(std::size_t(m), 0.0));
    std::vector<std::vector<double>> cost = psnr_ij;
    for (Index i = 0; i < m; ++i) {
        Tensor ri = slice(recovered, i, true);
        for (Index j = 0; j < m; ++j) {
            const double p = psnr(ri, slice(originals, j, false));
            psnr_ij[std::size_t(i)][std::size_t(j)] = p;
            cost[std::size_t(i)][std::size_t(j)] = -p;
        }
    }

    MatchScore score;
    score.assignment = assignment_min_cost(cost);
    for (Index i = 0; i < m; ++i) {
        const int j = score.assignment[std::size_t(i)];
        Tensor ri = slice(recovered, i, true);
        Tensor oj = slice(originals, Index(j), false);
        score.psnr_db.push_back(psnr_ij[std::size_t(i)][std::size_t(j)]);
        score.ssim_val.push_back(ssim(ri, oj));
        score.mean_psnr += score.psnr_db.back();
        score.mean_ssim += score.ssim_val.back();
    }
    score.mean_psnr /= double(m);
    score.mean_ssim /= double(m);
    return score;
}

} // namespace fedlab
