#include "fedlab/gradcheck.hpp"

#include <cmath>

namespace fedlab {

GradCheckResult finite_diff_check(const std::function<Var(Graph&, Var)>& build,
                                  const Tensor& at, double h, double floor) {
    require(h > 0.0 && floor > 0.0, "finite_diff_check: h and floor must be positive");

    Vec analytic;
    {
        Graph g;
        Var x = g.leaf(at);
        Var y = build(g, x);
        require(y.val().size() == 1, "finite_diff_check: expression must be scalar");
        analytic = g.grad(y, x).val().values();
    }

    auto eval_at = [&](const Vec& v) {
        Graph g;
        Var x = g.leaf(Tensor(v, at.shape()));
        return build(g, x).val().item();
    };

    GradCheckResult r;
    Vec probe = at.values();
    for (Index i = 0; i < probe.size(); ++i) {
        const Scalar keep = probe[i];
        probe[i] = keep + h;
        const double up = eval_at(probe);
        probe[i] = keep - h;
        const double dn = eval_at(probe);
        probe[i] = keep;
        const double fd = (up - dn) / (2.0 * h);
        const double ad = analytic[i];
        const double rel =
            std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
        if (rel >= r.max_rel_error) {
            r.max_rel_error = rel;
            r.worst_index = i;
            r.ad = ad;
            r.fd = fd;
        }
    }
    return r;
}

} // namespace fedlab
