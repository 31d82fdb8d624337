#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dslab/model_zoo.hpp"

namespace dslab {

enum class InitKind { He, Xavier, LionDG, Lsuv, Hybrid, Fixup, ReZero, ZeroAll };

InitKind parse_init_scheme(const std::string& name);
std::string init_scheme_str(InitKind kind);

struct LsuvOptions {
  int samples = 256;
  double target_var = 1.0;
  double tol = 0.01;
  int max_iter = 10;
  // When calibrating without the zero-aux protocol, aux heads are treated
  // like any other layer. Hybrid always ignores this and skips them.
  bool include_aux = true;
};

struct InitScheme {
  InitKind kind = InitKind::He;
  std::uint64_t seed = 0;
  LsuvOptions lsuv;
};

// One calibrated layer: the output variance it settled at, how many rescales
// that took, and the cumulative factor applied to its weight.
struct LayerCalibration {
  std::string label;
  double variance = 0.0;
  int iterations = 0;
  double scale = 1.0;
};

struct InitReport {
  std::string scheme;
  std::vector<std::string> notices;             // fallbacks and degenerations
  std::vector<LayerCalibration> calibrations;   // empty for data-free schemes
};

inline double he_std(std::size_t fan_in) {
  return std::sqrt(2.0 / static_cast<double>(fan_in));
}
inline double xavier_std(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

// Data-free schemes. Each one fully determines every parameter: weights from
// the per-name stream of `seed`, biases zero, norm scale/shift to 1/0,
// residual gates neutral (1) unless the scheme says otherwise.
InitReport he_init(ModelGraph& model, std::uint64_t seed);
InitReport xavier_init(ModelGraph& model, std::uint64_t seed);
InitReport lion_dg_init(ModelGraph& model, std::uint64_t seed);
InitReport fixup_init(ModelGraph& model, std::uint64_t seed);
InitReport rezero_init(ModelGraph& model, std::uint64_t seed);
InitReport zero_all_init(ModelGraph& model);

// Data-driven calibration: starting from the weights as they are, walks the
// weighted layers in topological order and rescales each until its output
// variance on `calib` is within tol of the target. Skips aux-head layers
// when include_aux is off. Throws if a layer's output variance is zero.
std::vector<LayerCalibration> lsuv_calibrate(ModelGraph& model,
                                             const Tensor& calib,
                                             const LsuvOptions& opts,
                                             bool include_aux);

// He restart followed by calibration over every weighted layer (aux heads
// included by default, see LsuvOptions).
InitReport lsuv_init(ModelGraph& model, std::uint64_t seed, const Tensor& calib,
                     const LsuvOptions& opts = {});
// He restart, zeroed aux heads, calibration over backbone and main head only.
InitReport hybrid_init(ModelGraph& model, std::uint64_t seed, const Tensor& calib,
                       const LsuvOptions& opts = {});

// Dispatch by scheme. `calib` may be undefined for data-free schemes and is
// required for Lsuv and Hybrid.
InitReport apply_init(ModelGraph& model, const InitScheme& scheme,
                      const Tensor& calib = {});

// Construction switches a scheme needs: gate parameters for ReZero, no
// normalization layers for the residual-branch-zeroing schemes.
BuildOptions suggested_build_options(InitKind kind);

}  // namespace dslab
