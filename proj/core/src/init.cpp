#include "dslab/init.hpp"

#include <cmath>
#include <cstdlib>

#include "dslab/rng.hpp"

namespace dslab {

namespace {

void fill_normal(Parameter& p, std::uint64_t seed, double stddev) {
  Rng rng(seed, p.name);
  for (double& v : p.tensor.values()) v = stddev * rng.normal();
}

void fill_constant(Parameter& p, double value) {
  for (double& v : p.tensor.values()) v = value;
}

// Baseline treatment shared by the gaussian schemes: weights from the
// parameter's own named stream, biases zero, norm layers at identity,
// residual gates neutral.
void gaussian_fill(Parameter& p, std::uint64_t seed, bool xavier) {
  switch (p.kind) {
    case ParamKind::Weight:
      if (p.fan_in == 0) {
        throw Error("init: parameter " + p.name + " has no fan_in");
      }
      fill_normal(p, seed,
                  xavier ? xavier_std(p.fan_in, p.fan_out) : he_std(p.fan_in));
      break;
    case ParamKind::Bias:
      fill_constant(p, 0.0);
      break;
    case ParamKind::BnScale:
      fill_constant(p, 1.0);
      break;
    case ParamKind::BnShift:
      fill_constant(p, 0.0);
      break;
    case ParamKind::ResidualGate:
      fill_constant(p, 1.0);
      break;
  }
}

bool has_norm_params(const ModelGraph& m) {
  for (const Parameter& p : m.params()) {
    if (p.kind == ParamKind::BnScale) return true;
  }
  return false;
}

double population_variance(const Tensor& t) {
  const std::vector<double>& v = t.values();
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return var / static_cast<double>(v.size());
}

Tensor take_rows(const Tensor& x, std::size_t n) {
  if (x.dim(0) == n) return x;
  Shape s = x.shape();
  s[0] = n;
  const std::size_t per_row = x.numel() / x.dim(0);
  std::vector<double> vals(x.values().begin(),
                           x.values().begin() + static_cast<long>(n * per_row));
  return Tensor(std::move(s), std::move(vals));
}

}  // namespace

InitKind parse_init_scheme(const std::string& name) {
  if (name == "he") return InitKind::He;
  if (name == "xavier") return InitKind::Xavier;
  if (name == "lion-dg") return InitKind::LionDG;
  if (name == "lsuv") return InitKind::Lsuv;
  if (name == "hybrid") return InitKind::Hybrid;
  if (name == "fixup") return InitKind::Fixup;
  if (name == "rezero") return InitKind::ReZero;
  if (name == "zero-all") return InitKind::ZeroAll;
  throw Error("unknown initialization scheme '" + name +
              "', expected one of "
              "he|xavier|lion-dg|lsuv|hybrid|fixup|rezero|zero-all");
}

std::string init_scheme_str(InitKind kind) {
  switch (kind) {
    case InitKind::He: return "he";
    case InitKind::Xavier: return "xavier";
    case InitKind::LionDG: return "lion-dg";
    case InitKind::Lsuv: return "lsuv";
    case InitKind::Hybrid: return "hybrid";
    case InitKind::Fixup: return "fixup";
    case InitKind::ReZero: return "rezero";
    case InitKind::ZeroAll: return "zero-all";
  }
  return "?";
}

InitReport he_init(ModelGraph& model, std::uint64_t seed) {
  InitReport r;
  r.scheme = "he";
  for (Parameter& p : model.params()) gaussian_fill(p, seed, false);
  return r;
}

InitReport xavier_init(ModelGraph& model, std::uint64_t seed) {
  InitReport r;
  r.scheme = "xavier";
  for (Parameter& p : model.params()) gaussian_fill(p, seed, true);
  return r;
}

InitReport lion_dg_init(ModelGraph& model, std::uint64_t seed) {
  InitReport r;
  r.scheme = "lion-dg";
  bool has_aux = false;
  for (const Parameter& p : model.params()) {
    has_aux |= (p.role.role == Role::AuxHead);
  }
  if (!has_aux) {
    r.notices.push_back(
        "lion-dg: model has no auxiliary heads, degenerating to plain he");
    for (Parameter& p : model.params()) gaussian_fill(p, seed, false);
    return r;
  }
  for (Parameter& p : model.params()) {
    if (p.role.role == Role::AuxHead) {
      fill_constant(p, 0.0);
    } else {
      gaussian_fill(p, seed, false);
    }
  }
  return r;
}

InitReport fixup_init(ModelGraph& model, std::uint64_t seed) {
  InitReport r;
  r.scheme = "fixup";
  if (has_norm_params(model)) {
    r.notices.push_back(
        "fixup: normalization layers present, the scheme assumes a norm-free "
        "network");
  }
  std::size_t branches = 0;
  for (const Parameter& p : model.params()) {
    if (p.is_final_in_branch) ++branches;
  }
  if (branches == 0) {
    r.notices.push_back("fixup: no residual-branch markers in " + model.name() +
                        ", falling back to he with a zeroed main classifier");
    for (Parameter& p : model.params()) {
      if (p.role.role == Role::MainHead) {
        fill_constant(p, 0.0);
      } else {
        gaussian_fill(p, seed, false);
      }
    }
    return r;
  }

  const double branch_scale = 1.0 / std::sqrt(static_cast<double>(branches));
  for (Parameter& p : model.params()) {
    if (p.role.role == Role::MainHead) {
      fill_constant(p, 0.0);
    } else if (p.kind == ParamKind::Weight && p.is_final_in_branch) {
      fill_constant(p, 0.0);
    } else if (p.kind == ParamKind::Weight && p.is_in_residual_branch) {
      fill_normal(p, seed, he_std(p.fan_in) * branch_scale);
    } else {
      gaussian_fill(p, seed, false);
    }
  }
  return r;
}

InitReport rezero_init(ModelGraph& model, std::uint64_t seed) {
  InitReport r;
  r.scheme = "rezero";
  if (has_norm_params(model)) {
    r.notices.push_back(
        "rezero: normalization layers present, the scheme assumes a norm-free "
        "network");
  }
  bool has_gates = false;
  for (const Parameter& p : model.params()) {
    has_gates |= p.is_residual_scale;
  }
  if (!has_gates) {
    r.notices.push_back("rezero: no residual gates in " + model.name() +
                        ", falling back to plain he");
  }
  for (Parameter& p : model.params()) {
    if (p.is_residual_scale) {
      fill_constant(p, 0.0);
    } else {
      gaussian_fill(p, seed, false);
    }
  }
  return r;
}

InitReport zero_all_init(ModelGraph& model) {
  InitReport r;
  r.scheme = "zero-all";
  for (Parameter& p : model.params()) fill_constant(p, 0.0);
  return r;
}

std::vector<LayerCalibration> lsuv_calibrate(ModelGraph& model,
                                             const Tensor& calib,
                                             const LsuvOptions& opts,
                                             bool include_aux) {
  if (!calib.defined()) {
    throw Error("lsuv: calibration batch required");
  }
  bool shaped = calib.rank() == model.sample_shape().size() + 1;
  for (std::size_t d = 0; shaped && d < model.sample_shape().size(); ++d) {
    shaped = calib.dim(d + 1) == model.sample_shape()[d];
  }
  if (!shaped) {
    throw Error("lsuv: calibration batch must be batched " +
                shape_str(model.sample_shape()) + " samples, got " +
                shape_str(calib.shape()));
  }
  if (opts.samples < 2) {
    throw Error("lsuv: needs at least 2 calibration samples");
  }
  if (calib.dim(0) < static_cast<std::size_t>(opts.samples)) {
    throw Error("lsuv: calibration batch has " + std::to_string(calib.dim(0)) +
                " rows, needs at least " + std::to_string(opts.samples));
  }

  const Tensor batch = take_rows(calib, static_cast<std::size_t>(opts.samples));
  const ForwardOptions fo{.training = true, .update_bn_running = false};

  std::vector<Tensor> slots(model.slot_count());
  slots[0] = batch;
  std::vector<LayerCalibration> report;

  const std::vector<LayerStep>& steps = model.steps();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const LayerStep& s = steps[i];
    Tensor y = model.eval_step(i, slots, fo);

    const bool weighted =
        (s.kind == StepKind::Conv || s.kind == StepKind::Linear) && s.weight >= 0;
    if (weighted) {
      const Parameter& w = model.params()[static_cast<std::size_t>(s.weight)];
      if (include_aux || w.role.role != Role::AuxHead) {
        LayerCalibration cal;
        cal.label = s.label;
        double var = population_variance(y);
        while (std::abs(var - opts.target_var) > opts.tol &&
               cal.iterations < opts.max_iter) {
          if (var < 1e-18) {
            throw Error("lsuv: layer " + s.label +
                        " produced zero-variance output, cannot calibrate a "
                        "dead layer");
          }
          const double factor = std::sqrt(opts.target_var / var);
          for (double& v :
               model.params()[static_cast<std::size_t>(s.weight)].tensor.values()) {
            v *= factor;
          }
          cal.scale *= factor;
          ++cal.iterations;
          y = model.eval_step(i, slots, fo);
          var = population_variance(y);
        }
        cal.variance = var;
        report.push_back(std::move(cal));
      }
    }
    slots[static_cast<std::size_t>(s.output)] = std::move(y);
  }
  return report;
}

InitReport lsuv_init(ModelGraph& model, std::uint64_t seed, const Tensor& calib,
                     const LsuvOptions& opts) {
  InitReport r = he_init(model, seed);
  r.scheme = "lsuv";
  r.calibrations = lsuv_calibrate(model, calib, opts, opts.include_aux);
  return r;
}

InitReport hybrid_init(ModelGraph& model, std::uint64_t seed, const Tensor& calib,
                       const LsuvOptions& opts) {
  InitReport r = he_init(model, seed);
  r.scheme = "hybrid";
  for (Parameter& p : model.params()) {
    if (p.role.role == Role::AuxHead) fill_constant(p, 0.0);
  }
  r.calibrations = lsuv_calibrate(model, calib, opts, /*include_aux=*/false);
  return r;
}

InitReport apply_init(ModelGraph& model, const InitScheme& scheme,
                      const Tensor& calib) {
  switch (scheme.kind) {
    case InitKind::He:
      return he_init(model, scheme.seed);
    case InitKind::Xavier:
      return xavier_init(model, scheme.seed);
    case InitKind::LionDG:
      return lion_dg_init(model, scheme.seed);
    case InitKind::Lsuv:
      if (!calib.defined()) {
        throw Error("init: scheme lsuv needs a calibration batch");
      }
      return lsuv_init(model, scheme.seed, calib, scheme.lsuv);
    case InitKind::Hybrid:
      if (!calib.defined()) {
        throw Error("init: scheme hybrid needs a calibration batch");
      }
      return hybrid_init(model, scheme.seed, calib, scheme.lsuv);
    case InitKind::Fixup:
      return fixup_init(model, scheme.seed);
    case InitKind::ReZero:
      return rezero_init(model, scheme.seed);
    case InitKind::ZeroAll:
      return zero_all_init(model);
  }
  throw Error("init: unknown scheme");
}

BuildOptions suggested_build_options(InitKind kind) {
  BuildOptions o;
  if (kind == InitKind::Fixup || kind == InitKind::ReZero) {
    o.with_bn = false;
  }
  if (kind == InitKind::ReZero) {
    o.rezero_gates = true;
  }
  return o;
}

}  // namespace dslab
