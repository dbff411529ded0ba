#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dmt/nn.hpp"

namespace dmt {

// Central finite differences against analytic gradients.
//
// `eval` computes the scalar objective; when handed a GradMap it must also
// accumulate analytic gradients for every checked tensor. The checker samples
// up to `max_coords` coordinates per tensor (all of them when the tensor is
// small), perturbs them by +-h, and reports the worst relative error, with the
// denominator floored at 1 so near-zero gradients are compared absolutely.
double fd_check(std::vector<TensorRef>& params, const std::function<double(GradMap*)>& eval,
                double h, int max_coords, std::uint64_t seed);

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  bool ok(double tol = 1e-4) const { return worst <= tol; }
};

// Full suite across the differentiable operations: dense, batch norm,
// activations, set max-pool, LSTM (single step and 10-step BPTT), the three
// losses, the voting stack, and the fusion stack on an 8-point instance.
// `corrupt` deliberately breaks one analytic gradient (negative control).
GradCheckReport run_gradcheck_suite(std::uint64_t seed, bool corrupt = false);

}  // namespace dmt
