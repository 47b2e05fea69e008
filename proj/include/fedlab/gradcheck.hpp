#pragma once

// Central-finite-difference verification of reverse-mode gradients.
//
// The builder rebuilds the expression from scratch for every probe, so the
// check is independent of the tape it verifies: it only trusts forward
// evaluation. Reported error is |ad - fd| / max(|ad|, |fd|, floor) taken over
// all elements; the floor keeps near-zero coordinates from dominating.

#include "fedlab/graph.hpp"

#include <functional>

namespace fedlab {

struct GradCheckResult {
    double max_rel_error = 0.0;
    Index worst_index = -1;
    double ad = 0.0, fd = 0.0; // values at the worst coordinate
};

// build: given a fresh graph and a leaf made from the probe tensor, return a
// scalar expression. The leaf's gradient is compared against central
// differences of the rebuilt forward value.
GradCheckResult finite_diff_check(const std::function<Var(Graph&, Var)>& build,
                                  const Tensor& at, double h = 1e-5, double floor = 1e-3);

} // namespace fedlab
