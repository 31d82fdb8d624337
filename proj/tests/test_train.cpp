#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "dslab/model_zoo.hpp"
#include "dslab/train.hpp"

using namespace dslab;

namespace {

Parameter make_param(ParamKind kind, std::vector<double> values) {
  Parameter p;
  p.name = "p";
  p.kind = kind;
  p.tensor = Tensor(Shape{values.size()});
  p.tensor.values() = std::move(values);
  p.tensor.set_requires_grad(true);
  return p;
}

void set_grad(Parameter& p, const std::vector<double>& g) {
  p.tensor.grad() = g;
}

double backbone_grad_mass(const ModelGraph& m) {
  double sq = 0.0;
  for (const Parameter& p : m.params()) {
    if (p.role.role != Role::Backbone || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

// Matches the deployed update rule operation for operation so trajectories
// agree bitwise.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  long t = 0;

  void step(double& theta, double g, double lr, double b1, double b2,
            double eps, double wd, bool decay) {
    ++t;
    if (decay && wd > 0.0) theta *= 1.0 - lr * wd;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mhat = m / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double vhat = v / (1.0 - std::pow(b2, static_cast<double>(t)));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
  }
};

std::string temp_metrics_path() {
  static int counter = 0;
  return (std::filesystem::temp_directory_path() /
          ("dslab_train_" + std::to_string(getpid()) + "_" +
           std::to_string(counter++) + ".jsonl"))
      .string();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("optimizer names round-trip") {
  CHECK(parse_optimizer("adamw") == Optimizer::AdamW);
  CHECK(parse_optimizer("sgd") == Optimizer::Sgd);
  CHECK(optimizer_str(Optimizer::AdamW) == "adamw");
  CHECK(optimizer_str(Optimizer::Sgd) == "sgd");
  CHECK_THROWS_WITH(parse_optimizer("adam"),
                    doctest::Contains("unknown optimizer"));
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  TrainConfig bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.beta2 = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.batch_size = 129;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.aux_weight = -0.1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.convergence_threshold = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.convergence_threshold = 0.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.warmup = {true, 0};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("aux weight ramps linearly under warmup") {
  const WarmupConfig off{false, 0};
  CHECK(alpha_eff(0.3, off, 0) == 0.3);
  CHECK(alpha_eff(0.3, off, 5000) == 0.3);

  const WarmupConfig ramp{true, 100};
  CHECK(alpha_eff(0.3, ramp, 0) == 0.0);
  CHECK(alpha_eff(0.3, ramp, 50) == 0.15);
  CHECK(alpha_eff(0.3, ramp, 100) == 0.3);
  CHECK(alpha_eff(0.3, ramp, 2500) == 0.3);
}

TEST_CASE("composite loss combines the parts") {
  // Three identical logit tensors make every cross-entropy term equal, so
  // the composite must equal (1 + 2 * alpha) times the shared value.
  Tensor logits({2, 3});
  logits.values() = {0.2, -1.0, 0.5, 1.5, 0.0, -0.3};
  ModelOutput out;
  out.main = logits;
  out.aux = {logits.clone(), logits.clone()};
  const std::vector<int> labels = {2, 0};

  CompositeLoss both = composite_loss(out, labels, 0.3);
  REQUIRE(both.aux.size() == 2);
  CHECK(both.aux[0] == both.main);
  CHECK(both.aux[1] == both.main);
  CHECK(both.total.item() ==
        doctest::Approx(1.6 * both.main).epsilon(1e-14));

  CompositeLoss mained = composite_loss(out, labels, 0.0);
  CHECK(mained.total.item() == mained.main);

  ModelOutput bare;
  bare.main = logits;
  CompositeLoss alone = composite_loss(bare, labels, 0.7);
  CHECK(alone.total.item() == alone.main);
  CHECK(alone.aux.empty());
}

TEST_CASE("adamw matches a scalar reference on a quadratic") {
  // f(theta) = 0.5 * (theta0^2 + 2 theta1^2), decay 0.5, 100 steps.
  TrainConfig cfg;
  cfg.lr = 0.3;
  cfg.weight_decay = 0.5;

  std::vector<Parameter> params;
  params.push_back(make_param(ParamKind::Weight, {0.6, 0.8}));
  AdamState state(params);

  double ref[2] = {0.6, 0.8};
  ScalarAdam sa[2];
  for (int t = 0; t < 100; ++t) {
    std::vector<double>& theta = params[0].tensor.values();
    set_grad(params[0], {theta[0], 2.0 * theta[1]});
    adamw_step(params, state, cfg);
    for (int j = 0; j < 2; ++j) {
      const double g = j == 0 ? ref[0] : 2.0 * ref[1];
      sa[j].step(ref[j], g, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps,
                 cfg.weight_decay, true);
    }
    CHECK(params[0].tensor.values()[0] == ref[0]);
    CHECK(params[0].tensor.values()[1] == ref[1]);
  }
  const double norm = std::hypot(ref[0], ref[1]);
  CHECK(norm < 1e-3);
}

TEST_CASE("adamw decays weights before the update, and only weights") {
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;

  std::vector<Parameter> params;
  params.push_back(make_param(ParamKind::Weight, {1.0}));
  params.push_back(make_param(ParamKind::Bias, {1.0}));
  params.push_back(make_param(ParamKind::BnScale, {1.0}));
  params.push_back(make_param(ParamKind::BnShift, {1.0}));
  params.push_back(make_param(ParamKind::ResidualGate, {1.0}));
  AdamState state(params);
  for (Parameter& p : params) set_grad(p, {0.0});

  adamw_step(params, state, cfg);
  // Zero gradient means zero adaptive update; only the decay can move theta.
  CHECK(params[0].tensor.values()[0] == 1.0 - 0.1 * 0.5);
  for (std::size_t i = 1; i < params.size(); ++i) {
    CHECK(params[i].tensor.values()[0] == 1.0);
  }

  // And with decay off, a zero-gradient step is a strict no-op.
  TrainConfig frozen = cfg;
  frozen.weight_decay = 0.0;
  std::vector<Parameter> still;
  still.push_back(make_param(ParamKind::Weight, {0.37}));
  AdamState state2(still);
  set_grad(still[0], {0.0});
  adamw_step(still, state2, frozen);
  CHECK(still[0].tensor.values()[0] == 0.37);
}

TEST_CASE("adamw first step moves by about lr against the gradient sign") {
  TrainConfig cfg;
  cfg.lr = 0.3;
  cfg.weight_decay = 0.0;

  std::vector<Parameter> params;
  params.push_back(make_param(ParamKind::Weight, {0.0, 0.0}));
  AdamState state(params);
  set_grad(params[0], {0.04, -2.5});
  adamw_step(params, state, cfg);
  CHECK(params[0].tensor.values()[0] ==
        doctest::Approx(-cfg.lr).epsilon(1e-6));
  CHECK(params[0].tensor.values()[1] ==
        doctest::Approx(cfg.lr).epsilon(1e-6));
}

TEST_CASE("sgd takes exact gradient steps") {
  std::vector<Parameter> params;
  params.push_back(make_param(ParamKind::Weight, {2.0, -3.0}));
  set_grad(params[0], {0.5, 1.0});
  sgd_step(params, 0.1);
  CHECK(params[0].tensor.values()[0] == 2.0 - 0.1 * 0.5);
  CHECK(params[0].tensor.values()[1] == -3.0 - 0.1 * 1.0);

  set_grad(params[0], {0.0, 0.0});
  const std::vector<double> before = params[0].tensor.values();
  sgd_step(params, 0.1);
  CHECK(params[0].tensor.values() == before);

  // Hand trajectory on f = theta^2: theta <- theta - lr * 2 theta.
  std::vector<Parameter> quad;
  quad.push_back(make_param(ParamKind::Weight, {1.0}));
  double ref = 1.0;
  for (int t = 0; t < 2; ++t) {
    set_grad(quad[0], {2.0 * quad[0].tensor.values()[0]});
    sgd_step(quad, 0.1);
    ref -= 0.1 * (2.0 * ref);
    CHECK(quad[0].tensor.values()[0] == ref);
  }
  CHECK(ref == doctest::Approx(0.64).epsilon(1e-15));
}

TEST_CASE("zeroed aux heads leave backbone gradients of the aux loss at zero") {
  const Dataset blobs = make_synthetic(5, 16, 64, 21);
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch batch = take_batch(blobs, idx);

  auto backbone_mass_for = [&](InitKind kind) {
    ModelGraph m = build_mlp_ds(16, {24, 24}, 5);
    InitScheme scheme{kind, 3};
    scheme.lsuv.samples = 48;
    const Tensor calib = leading_images(blobs, 48);
    apply_init(m, scheme, calib);
    Graph g;
    ModelOutput out = m.forward(batch.images);
    CompositeLoss loss = composite_loss(out, batch.labels, 0.3);
    m.zero_grads();
    g.backward(scalar_mul(loss.aux_sum, 0.3));
    return backbone_grad_mass(m);
  };

  CHECK(backbone_mass_for(InitKind::LionDG) == 0.0);
  CHECK(backbone_mass_for(InitKind::Hybrid) == 0.0);
  CHECK(backbone_mass_for(InitKind::He) > 1e-6);
}

TEST_CASE("awakening trace grows linearly from zero") {
  ModelGraph m = build_mlp_ds(12, {16, 16}, 4);
  const Dataset blobs = make_synthetic(4, 12, 256, 9);
  const AwakeningRecord rec =
      measure_awakening(m, {InitKind::LionDG, 7}, blobs, 12, 1e-3);

  REQUIRE(rec.points.size() == 13);
  CHECK(rec.points[0].aux_w_norm == 0.0);
  CHECK(rec.points[0].backbone_grad_norm == 0.0);
  CHECK(rec.c_estimate > 0.0);
  CHECK(std::abs(rec.points[1].aux_w_norm - 1e-3 * rec.c_estimate) <= 1e-10);

  for (int t = 0; t < 10; ++t) {
    CHECK(rec.points[t + 1].aux_w_norm > rec.points[t].aux_w_norm);
  }

  // Backbone gradients through the heads stay proportional to the head
  // norm while the trunk has barely moved.
  double lo = 1e300, hi = 0.0;
  for (int t = 2; t <= 10; ++t) {
    const double ratio =
        rec.points[t].backbone_grad_norm / rec.points[t].aux_w_norm;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  CHECK(hi / lo < 1.2);
}

TEST_CASE("awakening rejects schemes that do not start the heads at zero") {
  ModelGraph m = build_mlp_ds(12, {16, 16}, 4);
  const Dataset blobs = make_synthetic(4, 12, 64, 9);
  CHECK_THROWS_WITH(measure_awakening(m, {InitKind::He, 7}, blobs, 5),
                    doctest::Contains("does not zero-initialize"));
}

TEST_CASE("training converges on synthetic blobs and streams metrics") {
  const Dataset blobs = make_synthetic(3, 8, 640, 11);
  const Dataset train_split = slice_dataset(blobs, 0, 512);
  const Dataset val_split = slice_dataset(blobs, 512, 128);

  ModelGraph m = build_mlp_ds(8, {16, 16}, 3);
  apply_init(m, {InitKind::LionDG, 5});

  TrainConfig cfg;
  cfg.batch_size = 64;
  const std::string path = temp_metrics_path();
  const RunMetrics run = train(m, train_split, val_split, cfg, 5, path, "smoke");

  REQUIRE(run.steps_to_threshold.has_value());
  CHECK(*run.steps_to_threshold >= 1);
  CHECK(*run.steps_to_threshold <= cfg.max_steps);
  CHECK(run.final_val_accuracy > 0.8);
  CHECK_FALSE(run.aborted_nan);
  REQUIRE(run.ck.size() == 1);
  CHECK(run.ck[0] > 0.0);

  // With zero-started heads the aux-to-main gradient ratio begins at
  // exactly zero; the head norm is zero at step 0 and grows after.
  REQUIRE(run.steps.size() >= 2);
  CHECK(run.steps[0].grad_ratio == 0.0);
  CHECK(run.steps[0].aux_w_norm[0] == 0.0);
  CHECK(run.steps[1].grad_ratio < 0.0);  // off-cadence, not measured
  CHECK(run.steps[1].aux_w_norm[0] > 0.0);

  // One record per step plus a summary, all valid JSON.
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::vector<nlohmann::json> lines;
  while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
  REQUIRE(lines.size() == run.steps.size() + 1);
  CHECK(lines[0]["kind"] == "step");
  CHECK(lines[0]["run"] == "smoke");
  CHECK(lines[0]["loss_main"] == run.steps[0].loss_main);
  CHECK(lines[0]["grad_ratio"] == 0.0);
  CHECK_FALSE(lines[1].contains("grad_ratio"));
  const nlohmann::json& summary = lines.back();
  CHECK(summary["kind"] == "summary");
  CHECK(summary["steps_to_threshold"] == *run.steps_to_threshold);
  CHECK(summary["final_val_accuracy"] == run.final_val_accuracy);
  CHECK(summary["aborted_nan"] == false);
  CHECK(summary["abort_step"].is_null());
  std::remove(path.c_str());
}

TEST_CASE("the gradient ratio starts positive for dense heads") {
  const Dataset blobs = make_synthetic(3, 8, 256, 11);
  ModelGraph m = build_mlp_ds(8, {16, 16}, 3);
  apply_init(m, {InitKind::He, 5});

  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_steps = 3;
  cfg.stop_at_threshold = false;
  const RunMetrics run = train(m, blobs, blobs, cfg, 5);
  CHECK(run.steps[0].grad_ratio > 0.0);
  CHECK(run.steps[0].aux_w_norm[0] > 0.0);
}

TEST_CASE("identical seeds and configs reproduce the run exactly") {
  const Dataset blobs = make_synthetic(4, 10, 96, 17);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_steps = 10;  // crosses an epoch boundary, 96 rows / 32 per batch
  cfg.stop_at_threshold = false;

  auto run_once = [&] {
    ModelGraph m = build_mlp_ds(10, {20, 20}, 4);
    apply_init(m, {InitKind::LionDG, 13});
    return train(m, blobs, blobs, cfg, 13);
  };
  const RunMetrics a = run_once();
  const RunMetrics b = run_once();

  REQUIRE(a.steps.size() == 10);
  REQUIRE(b.steps.size() == 10);
  CHECK(a.steps_to_threshold == b.steps_to_threshold);
  CHECK(a.final_val_accuracy == b.final_val_accuracy);
  for (std::size_t t = 0; t < a.steps.size(); ++t) {
    CHECK(a.steps[t].loss_total == b.steps[t].loss_total);
    CHECK(a.steps[t].run_acc == b.steps[t].run_acc);
    CHECK(a.steps[t].aux_w_norm == b.steps[t].aux_w_norm);
  }
}

TEST_CASE("warmup at step zero reproduces the zero-head backbone gradient") {
  // A ramp that has not started weights the aux losses by zero; that must
  // give the same backbone gradient as heads that output zero, bit for bit.
  const Dataset blobs = make_synthetic(5, 14, 64, 23);
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Batch batch = take_batch(blobs, idx);

  auto grads_for = [&](InitKind kind, double alpha) {
    ModelGraph m = build_mlp_ds(14, {24, 24}, 5);
    apply_init(m, {kind, 31});
    Graph g;
    ModelOutput out = m.forward(batch.images);
    CompositeLoss loss = composite_loss(out, batch.labels, alpha);
    m.zero_grads();
    g.backward(loss.total);
    std::vector<std::vector<double>> grads;
    for (const Parameter& p : m.params()) {
      if (p.role.role == Role::Backbone) grads.push_back(p.tensor.grad());
    }
    return grads;
  };

  const WarmupConfig ramp{true, 100};
  const auto implicit = grads_for(InitKind::LionDG, 0.3);
  const auto explicit_ramp = grads_for(InitKind::He, alpha_eff(0.3, ramp, 0));
  REQUIRE(implicit.size() == explicit_ramp.size());
  for (std::size_t i = 0; i < implicit.size(); ++i) {
    REQUIRE(implicit[i].size() == explicit_ramp[i].size());
    for (std::size_t j = 0; j < implicit[i].size(); ++j) {
      CHECK(implicit[i][j] == explicit_ramp[i][j]);
    }
  }
}

TEST_CASE("a non-finite loss aborts and keeps the earlier records") {
  const Dataset blobs = make_synthetic(3, 8, 128, 11);
  ModelGraph m = build_mlp_ds(8, {16, 16}, 3);
  apply_init(m, {InitKind::He, 5});
  // Poison the classifier so the first loss is already non-finite. Hidden
  // weights will not do: a NaN pre-activation dies at the relu.
  for (Parameter& p : m.params()) {
    if (p.name == "head_main/linear/weight") p.tensor.values()[0] = std::nan("");
  }

  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_steps = 20;
  const RunMetrics run = train(m, blobs, blobs, cfg, 5);
  CHECK(run.aborted_nan);
  CHECK(run.abort_step == 0);
  CHECK(run.steps.empty());
  CHECK_FALSE(run.steps_to_threshold.has_value());
  CHECK(run.final_val_accuracy == 0.0);
}

}  // TEST_SUITE
