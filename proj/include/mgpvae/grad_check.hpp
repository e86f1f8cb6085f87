#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mgpvae/tensor.hpp"

namespace mgpvae::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradCheckOptions {
  double step = 1e-2;
  double tolerance = 1e-3;
  /// Coordinates probed per tensor; tensors at or below this size are probed exhaustively.
  std::size_t max_probes = 24;
  std::uint64_t seed = 0;
};

/// Comparison over the probed coordinates of one tensor (or a pooled group).
/// Relative error is |a - n| / (|a| + |n|) with Euclidean norms over the
/// probed analytic (a) and central-difference (n) gradients.
struct GradCheckEntry {
  std::string name;
  std::size_t probes = 0;
  double max_abs_error = 0.0;
  double sq_error = 0.0, sq_analytic = 0.0, sq_numeric = 0.0;
  std::string failure;  // set when the objective was non-finite at a probe

  double rel_error() const;
  bool ok(double tolerance) const { return failure.empty() && rel_error() < tolerance; }
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed() const;
  double max_rel_error() const;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences. `f` must rebuild its graph on every call and be
/// deterministic. Parameters are restored to their original values.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> params,
                           const GradCheckOptions& options = {});

/// Merges entries sharing `key(name)`, in order of first appearance.
std::vector<GradCheckEntry> pool(const std::vector<GradCheckEntry>& entries,
                                 const std::function<std::string(const std::string&)>& key);

}  // namespace mgpvae::ad
