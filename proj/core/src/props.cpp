#include "dslab/props.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>

#include "dslab/model_zoo.hpp"
#include "dslab/stats.hpp"
#include "dslab/train.hpp"

namespace dslab {

namespace {

Tensor random_images(std::size_t n, std::uint64_t seed) {
  Tensor x({n, 3, 32, 32});
  Rng rng(seed, "verify_images");
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

std::vector<int> round_robin_labels(std::size_t n, int classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(i) % classes;
  }
  return labels;
}

double max_abs_backbone_grad(const ModelGraph& m) {
  double worst = 0.0;
  for (const Parameter& p : m.params()) {
    if (p.role.role != Role::Backbone || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) worst = std::max(worst, std::fabs(g));
  }
  return worst;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << v;
  return out.str();
}

struct ArchProbe {
  std::string name;
  std::function<ModelGraph()> build;
  Tensor images;
  std::vector<int> labels;
};

std::vector<ArchProbe> probe_archs() {
  std::vector<ArchProbe> archs;
  {
    ArchProbe a;
    a.name = "mlp_ds";
    a.build = [] { return build_mlp_ds(20, {32, 32}, 10); };
    const Dataset blobs = make_synthetic(10, 20, 64, 77);
    a.images = leading_images(blobs, 64);
    a.labels.assign(blobs.labels.begin(), blobs.labels.begin() + 64);
    archs.push_back(std::move(a));
  }
  {
    ArchProbe a;
    a.name = "densenet_ds";
    a.build = [] { return build_densenet_ds(10); };
    a.images = random_images(16, 77);
    a.labels = round_robin_labels(16, 10);
    archs.push_back(std::move(a));
  }
  {
    ArchProbe a;
    a.name = "resnet_ds";
    a.build = [] { return build_resnet_ds(10, ResVariant::SideTap); };
    a.images = random_images(16, 78);
    a.labels = round_robin_labels(16, 10);
    archs.push_back(std::move(a));
  }
  return archs;
}

// Max-abs backbone gradient of the summed aux losses at initialization.
double aux_backbone_grad(ModelGraph& model, const ArchProbe& probe) {
  Graph g;
  ModelOutput out = model.forward(probe.images);
  CompositeLoss loss = composite_loss(out, probe.labels, 0.3);
  model.zero_grads();
  g.backward(loss.aux_sum);
  return max_abs_backbone_grad(model);
}

InitScheme calibrated(InitKind kind, std::uint64_t seed, int samples) {
  InitScheme scheme{kind, seed};
  scheme.lsuv.samples = samples;
  return scheme;
}

PropResult prop_decoupling() {
  PropResult r;
  r.name = "decoupling";
  double zeroed_worst = 0.0;
  double dense_best = 1e300;
  for (ArchProbe& probe : probe_archs()) {
    const int rows = static_cast<int>(probe.images.dim(0));
    const Tensor calib = probe.images.clone();
    for (InitKind kind : {InitKind::LionDG, InitKind::Hybrid}) {
      ModelGraph m = probe.build();
      apply_init(m, calibrated(kind, 11, rows), calib);
      zeroed_worst = std::max(zeroed_worst, aux_backbone_grad(m, probe));
    }
    ModelGraph m = probe.build();
    apply_init(m, {InitKind::He, 11});
    dense_best = std::min(dense_best, aux_backbone_grad(m, probe));
  }
  r.measured = zeroed_worst;
  r.pass = zeroed_worst <= 1e-15 && dense_best >= 1e-6;
  r.detail = "max |backbone grad| with zero heads " + fmt(zeroed_worst) +
             ", min with dense heads " + fmt(dense_best);
  return r;
}

PropResult prop_growth() {
  PropResult r;
  r.name = "growth";
  ModelGraph m = build_mlp_ds(16, {24, 24}, 4);
  const Dataset blobs = make_synthetic(4, 16, 256, 33);
  const AwakeningRecord rec =
      measure_awakening(m, {InitKind::LionDG, 19}, blobs, 10, 1e-3);

  const double diff =
      std::fabs(rec.points[1].aux_w_norm - rec.lr * rec.c_estimate);
  std::vector<double> ts, ws;
  for (const AwakeningPoint& pt : rec.points) {
    ts.push_back(static_cast<double>(pt.step));
    ws.push_back(pt.aux_w_norm);
  }
  const LinearFit fit = linear_fit(ts, ws);
  r.measured = diff;
  r.pass = diff <= 1e-10 && fit.r2 >= 0.99;
  r.detail = "|w(1) - lr*c| = " + fmt(diff) + ", growth fit r2 = " +
             fmt(fit.r2);
  return r;
}

PropResult prop_warmup() {
  PropResult r;
  r.name = "warmup";
  const Dataset blobs = make_synthetic(5, 14, 64, 23);
  const Tensor images = leading_images(blobs, 64);
  const std::vector<int> labels(blobs.labels.begin(),
                                blobs.labels.begin() + 64);

  auto backbone_grads = [&](InitKind kind, double alpha) {
    ModelGraph m = build_mlp_ds(14, {24, 24}, 5);
    apply_init(m, {kind, 31});
    Graph g;
    ModelOutput out = m.forward(images);
    CompositeLoss loss = composite_loss(out, labels, alpha);
    m.zero_grads();
    g.backward(loss.total);
    std::vector<double> flat;
    for (const Parameter& p : m.params()) {
      if (p.role.role != Role::Backbone) continue;
      const std::vector<double>& grad = p.tensor.grad();
      flat.insert(flat.end(), grad.begin(), grad.end());
    }
    return flat;
  };

  const WarmupConfig ramp{true, 100};
  const std::vector<double> zero_heads = backbone_grads(InitKind::LionDG, 0.3);
  const std::vector<double> zero_weight =
      backbone_grads(InitKind::He, alpha_eff(0.3, ramp, 0));

  std::size_t mismatched = zero_heads.size() == zero_weight.size()
                               ? 0
                               : zero_heads.size() + zero_weight.size();
  if (mismatched == 0) {
    for (std::size_t i = 0; i < zero_heads.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(zero_heads[i]) !=
          std::bit_cast<std::uint64_t>(zero_weight[i])) {
        ++mismatched;
      }
    }
  }
  r.measured = static_cast<double>(mismatched);
  r.pass = mismatched == 0;
  r.detail = std::to_string(mismatched) + " of " +
             std::to_string(zero_heads.size()) +
             " backbone gradient elements differ bitwise";
  return r;
}

PropResult prop_purity() {
  PropResult r;
  r.name = "purity";
  const ForwardOptions eval{.training = false, .update_bn_running = false};
  double tap_worst = 0.0;

  // Perturbing side-tap head weights must leave the main logits untouched.
  for (ArchProbe& probe : probe_archs()) {
    ModelGraph m = probe.build();
    apply_init(m, {InitKind::He, 41});
    const Tensor before = m.forward(probe.images, eval).main;
    for (Parameter& p : m.params()) {
      if (p.role.role == Role::AuxHead && p.kind == ParamKind::Weight) {
        for (double& v : p.tensor.values()) v += 0.37;
      }
    }
    const Tensor after = m.forward(probe.images, eval).main;
    for (std::size_t i = 0; i < before.numel(); ++i) {
      tap_worst = std::max(tap_worst,
                           std::fabs(before.values()[i] - after.values()[i]));
    }
  }

  // An additive aux projection is the opposite: zeroed it must reproduce the
  // projection-free network, and once nonzero it must bend the main path.
  const Tensor images = random_images(16, 79);
  ModelGraph side = build_resnet_ds(10, ResVariant::SideTap);
  ModelGraph path = build_resnet_ds(10, ResVariant::OnPath);
  apply_init(side, {InitKind::He, 41});
  apply_init(path, {InitKind::He, 41});
  for (Parameter& p : path.params()) {
    if (p.name.find("aux_path") != std::string::npos) {
      for (double& v : p.tensor.values()) v = 0.0;
    }
  }
  const Tensor side_main = side.forward(images, eval).main;
  const Tensor zeroed_main = path.forward(images, eval).main;
  double inject_zero_diff = 0.0;
  for (std::size_t i = 0; i < side_main.numel(); ++i) {
    inject_zero_diff =
        std::max(inject_zero_diff,
                 std::fabs(side_main.values()[i] - zeroed_main.values()[i]));
  }
  apply_init(path, {InitKind::He, 41});  // restore live projections
  const Tensor live_main = path.forward(images, eval).main;
  double inject_live_diff = 0.0;
  for (std::size_t i = 0; i < side_main.numel(); ++i) {
    inject_live_diff =
        std::max(inject_live_diff,
                 std::fabs(side_main.values()[i] - live_main.values()[i]));
  }

  r.measured = std::max(tap_worst, inject_zero_diff);
  r.pass = tap_worst <= 1e-15 && inject_zero_diff <= 1e-15 &&
           inject_live_diff > 1e-6;
  r.detail = "side-tap main drift " + fmt(tap_worst) +
             ", zeroed projection drift " + fmt(inject_zero_diff) +
             ", live projection drift " + fmt(inject_live_diff);
  return r;
}

PropResult prop_determinism() {
  PropResult r;
  r.name = "determinism";
  const Dataset blobs = make_synthetic(4, 10, 96, 17);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_steps = 10;
  cfg.stop_at_threshold = false;

  auto run_once = [&] {
    ModelGraph m = build_mlp_ds(10, {20, 20}, 4);
    apply_init(m, {InitKind::LionDG, 13});
    return train(m, blobs, blobs, cfg, 13);
  };
  const RunMetrics a = run_once();
  const RunMetrics b = run_once();

  std::size_t mismatched = 0;
  if (a.steps.size() != b.steps.size() ||
      a.steps_to_threshold != b.steps_to_threshold ||
      std::bit_cast<std::uint64_t>(a.final_val_accuracy) !=
          std::bit_cast<std::uint64_t>(b.final_val_accuracy)) {
    ++mismatched;
  } else {
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      if (std::bit_cast<std::uint64_t>(a.steps[t].loss_total) !=
          std::bit_cast<std::uint64_t>(b.steps[t].loss_total)) {
        ++mismatched;
      }
    }
  }
  r.measured = static_cast<double>(mismatched);
  r.pass = mismatched == 0;
  r.detail = std::to_string(mismatched) + " of " +
             std::to_string(a.steps.size()) +
             " repeated-run records differ bitwise";
  return r;
}

}  // namespace

const std::vector<std::string>& property_names() {
  static const std::vector<std::string> names = {
      "decoupling", "growth", "warmup", "purity", "determinism"};
  return names;
}

PropResult run_property(const std::string& name) {
  if (name == "decoupling") return prop_decoupling();
  if (name == "growth") return prop_growth();
  if (name == "warmup") return prop_warmup();
  if (name == "purity") return prop_purity();
  if (name == "determinism") return prop_determinism();
  throw Error("verify: unknown property '" + name +
              "', expected one of decoupling|growth|warmup|purity|determinism");
}

std::vector<PropResult> run_properties(const std::vector<std::string>& names) {
  std::vector<PropResult> results;
  for (const std::string& name : names.empty() ? property_names() : names) {
    results.push_back(run_property(name));
  }
  return results;
}

}  // namespace dslab
