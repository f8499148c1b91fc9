#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ascnet {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double tolerance = 1e-3;
  double layer_step = 1e-3;      // central-difference step for single layers
  double network_step = 1e-3;    // initial step for the end-to-end check; shrunk near kinks
  int network_size = 16;         // 1 x 1 x size x size input
  int samples_per_tensor = 6;    // parameter entries probed per network tensor
  bool corrupt_conv_backward = false;  // fault injection for detector tests
};

struct GradCheckRow {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool pass = false;
};

/// Max-normalized relative error: max|a - n| / max(max|a|, max|n|, 1e-6).
double max_normalized_error(const std::vector<double>& analytic, const std::vector<double>& numeric);

/// Per-layer checks on random 2x3x8x8 tensors plus the end-to-end default
/// network, all in double precision.
std::vector<GradCheckRow> run_gradcheck(const GradCheckOptions& opt);

}  // namespace ascnet
