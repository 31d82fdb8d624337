#include "dslab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstddef>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <utility>

#include "json.hpp"

namespace dslab {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

bool is_aux(const Parameter& p) { return p.role.role == Role::AuxHead; }

// l2 norm of the gradients of every parameter passing `pred`; parameters the
// backward pass never touched count as zero.
template <typename Pred>
double grad_norm(const ModelGraph& model, Pred pred) {
  double sq = 0.0;
  for (const Parameter& p : model.params()) {
    if (!pred(p) || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double backbone_grad_norm(const ModelGraph& model) {
  return grad_norm(model,
                   [](const Parameter& p) { return p.role.role == Role::Backbone; });
}

// l2 norm of aux weight values, either one head or all of them (head = 0).
double aux_weight_norm(const ModelGraph& model, int head = 0) {
  double sq = 0.0;
  for (const Parameter& p : model.params()) {
    if (!is_aux(p) || p.kind != ParamKind::Weight) continue;
    if (head != 0 && p.role.aux_index != head) continue;
    for (double v : p.tensor.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

double batch_accuracy(const Tensor& logits, std::span<const int> labels) {
  const std::vector<int> pred = argmax_rows(logits);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Ratio of backbone gradient norms, aux over main, on one fixed batch.
// Separate backward passes per part keep the measurement exact.
double probe_grad_ratio(ModelGraph& model, const Batch& probe) {
  Graph g;
  ModelOutput out =
      model.forward(probe.images, {.training = true, .update_bn_running = false});
  CompositeLoss loss = composite_loss(out, probe.labels, 0.0);
  model.zero_grads();
  g.backward(loss.main_term);
  const double denom = backbone_grad_norm(model);
  model.zero_grads();
  if (loss.aux_sum.defined()) g.backward(loss.aux_sum);
  const double numer = backbone_grad_norm(model);
  model.zero_grads();
  if (denom > 0.0) return numer / denom;
  return numer > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

nlohmann::json step_json(const StepRecord& rec, const std::string& label) {
  nlohmann::json j{{"kind", "step"},
                   {"step", rec.step},
                   {"loss_main", rec.loss_main},
                   {"loss_aux", rec.loss_aux},
                   {"loss_total", rec.loss_total},
                   {"run_acc", rec.run_acc},
                   {"aux_w_norm", rec.aux_w_norm}};
  if (!label.empty()) j["run"] = label;
  if (rec.grad_ratio >= 0.0) j["grad_ratio"] = rec.grad_ratio;
  return j;
}

nlohmann::json summary_json(const RunMetrics& m, const std::string& label) {
  nlohmann::json j{{"kind", "summary"},
                   {"steps_logged", m.steps.size()},
                   {"wall_time_sec", m.wall_time_sec},
                   {"final_val_accuracy", m.final_val_accuracy},
                   {"ck", m.ck},
                   {"aborted_nan", m.aborted_nan}};
  if (!label.empty()) j["run"] = label;
  j["steps_to_threshold"] =
      m.steps_to_threshold ? nlohmann::json(*m.steps_to_threshold)
                           : nlohmann::json(nullptr);
  j["abort_step"] =
      m.aborted_nan ? nlohmann::json(m.abort_step) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

Optimizer parse_optimizer(const std::string& s) {
  if (s == "adamw") return Optimizer::AdamW;
  if (s == "sgd") return Optimizer::Sgd;
  throw Error("unknown optimizer '" + s + "', expected adamw|sgd");
}

std::string optimizer_str(Optimizer opt) {
  return opt == Optimizer::AdamW ? "adamw" : "sgd";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("config: learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("config: betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error("config: adam epsilon must be positive");
  if (weight_decay < 0.0) throw Error("config: weight decay must be nonnegative");
  if (batch_size == 0 || batch_size > 128) {
    throw Error("config: batch size must lie in [1, 128]");
  }
  if (aux_weight < 0.0) throw Error("config: aux weight must be nonnegative");
  if (max_steps < 1) throw Error("config: need at least one step");
  if (!(convergence_threshold > 0.0 && convergence_threshold < 1.0)) {
    throw Error("config: convergence threshold must lie in (0, 1)");
  }
  if (warmup.enabled && warmup.steps < 1) {
    throw Error("config: warmup needs a positive step count");
  }
  if (ratio_every < 0) throw Error("config: ratio cadence must be nonnegative");
}

double alpha_eff(double aux_weight, const WarmupConfig& warmup, int step) {
  if (!warmup.enabled) return aux_weight;
  const double ramp = static_cast<double>(step) / static_cast<double>(warmup.steps);
  return aux_weight * std::min(1.0, ramp);
}

CompositeLoss composite_loss(const ModelOutput& out,
                             std::span<const int> labels, double alpha) {
  CompositeLoss loss;
  loss.main_term = softmax_cross_entropy(out.main, labels);
  loss.main = loss.main_term.item();
  for (const Tensor& logits : out.aux) {
    Tensor term = softmax_cross_entropy(logits, labels);
    loss.aux.push_back(term.item());
    loss.aux_sum = loss.aux_sum.defined() ? add(loss.aux_sum, term) : term;
    loss.aux_terms.push_back(std::move(term));
  }
  loss.total = loss.aux_sum.defined()
                   ? add(loss.main_term, scalar_mul(loss.aux_sum, alpha))
                   : loss.main_term;
  return loss;
}

AdamState::AdamState(const std::vector<Parameter>& params) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Parameter& p : params) {
    m.emplace_back(p.tensor.numel(), 0.0);
    v.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adamw_step(std::vector<Parameter>& params, AdamState& state,
                const TrainConfig& cfg) {
  if (state.m.size() != params.size()) {
    throw Error("adamw: moment buffers do not match the parameter list");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    std::vector<double>& theta = p.tensor.values();
    const std::vector<double>& g = p.tensor.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    const bool decay = p.kind == ParamKind::Weight && cfg.weight_decay > 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      if (decay) theta[j] *= 1.0 - cfg.lr * cfg.weight_decay;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

void sgd_step(std::vector<Parameter>& params, double lr) {
  for (Parameter& p : params) {
    std::vector<double>& theta = p.tensor.values();
    const std::vector<double>& g = p.tensor.grad();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= lr * g[j];
  }
}

RunMetrics train(ModelGraph& model, const Dataset& train_data,
                 const Dataset& val_data, const TrainConfig& cfg,
                 std::uint64_t seed, const std::string& metrics_path,
                 const std::string& run_label) {
  cfg.validate();
  const auto start = Clock::now();
  const Normalization norm = compute_normalization(train_data);
  Rng aug_rng(seed, "augment");

  std::ofstream stream;
  if (!metrics_path.empty()) {
    stream.open(metrics_path, std::ios::trunc);
    if (!stream) throw Error("cannot open metrics file " + metrics_path);
  }

  RunMetrics out;
  const int heads = static_cast<int>(model.aux_count());
  const std::size_t n = train_data.size();
  std::vector<std::size_t> order = epoch_order(n, seed, 0);
  std::size_t epoch = 0;
  std::size_t pos = 0;
  std::deque<double> window;
  double window_sum = 0.0;
  Batch probe;
  AdamState adam(model.params());

  for (int t = 0; t < cfg.max_steps; ++t) {
    if (pos >= order.size()) {
      order = epoch_order(n, seed, ++epoch);
      pos = 0;
    }
    const std::size_t take = std::min(cfg.batch_size, order.size() - pos);
    const Batch raw =
        take_batch(train_data, {order.data() + pos, order.data() + pos + take});
    pos += take;
    Batch batch = augment(raw, Split::Train, norm, aug_rng);
    if (t == 0) probe = Batch{batch.images.clone(), batch.labels};

    StepRecord rec;
    rec.step = t;
    for (int k = 1; k <= heads; ++k) {
      rec.aux_w_norm.push_back(aux_weight_norm(model, k));
    }

    Graph g;
    ModelOutput logits = model.forward(batch.images);
    CompositeLoss loss =
        composite_loss(logits, batch.labels, alpha_eff(cfg.aux_weight, cfg.warmup, t));
    rec.loss_main = loss.main;
    rec.loss_aux = loss.aux;
    rec.loss_total = loss.total.item();

    bool finite = std::isfinite(rec.loss_total) && std::isfinite(rec.loss_main);
    for (double a : rec.loss_aux) finite = finite && std::isfinite(a);
    if (!finite) {
      out.aborted_nan = true;
      out.abort_step = t;
      break;
    }

    window.push_back(batch_accuracy(logits.main, batch.labels));
    window_sum += window.back();
    if (window.size() > 100) {
      window_sum -= window.front();
      window.pop_front();
    }
    rec.run_acc = window_sum / static_cast<double>(window.size());

    if (t == 0) {
      for (const Tensor& term : loss.aux_terms) {
        model.zero_grads();
        g.backward(term);
        out.ck.push_back(grad_norm(model, [&](const Parameter& p) {
          return is_aux(p) && p.kind == ParamKind::Weight;
        }));
      }
    }
    if (cfg.ratio_every > 0 && t % cfg.ratio_every == 0) {
      rec.grad_ratio = probe_grad_ratio(model, probe);
    }

    model.zero_grads();
    g.backward(loss.total);
    if (cfg.optimizer == Optimizer::AdamW) {
      adamw_step(model.params(), adam, cfg);
    } else {
      sgd_step(model.params(), cfg.lr);
    }

    if (stream) stream << step_json(rec, run_label).dump() << '\n';
    out.steps.push_back(std::move(rec));

    if (!out.steps_to_threshold &&
        out.steps.back().run_acc >= cfg.convergence_threshold) {
      out.steps_to_threshold = t + 1;
      if (cfg.stop_at_threshold) break;
    }
  }

  if (!out.aborted_nan) {
    out.final_val_accuracy = evaluate_accuracy(model, val_data, norm);
  }
  out.wall_time_sec = seconds_since(start);
  if (stream) stream << summary_json(out, run_label).dump() << '\n';
  return out;
}

double evaluate_accuracy(ModelGraph& model, const Dataset& data,
                         const Normalization& norm) {
  Rng unused(0, "eval");
  std::size_t hit = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += 128) {
    const std::size_t count = std::min<std::size_t>(128, data.size() - begin);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), begin);
    const Batch raw = take_batch(data, idx);
    const Batch batch = augment(raw, Split::Val, norm, unused);
    ModelOutput out = model.forward(
        batch.images, {.training = false, .update_bn_running = false});
    const std::vector<int> pred = argmax_rows(out.main);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == batch.labels[i]) ++hit;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

AwakeningRecord measure_awakening(ModelGraph& model, const InitScheme& scheme,
                                  const Dataset& data, int steps, double lr,
                                  double alpha, const Tensor& calib) {
  if (steps < 1) throw Error("awakening: need at least one step");
  if (!(lr > 0.0)) throw Error("awakening: learning rate must be positive");
  apply_init(model, scheme, calib);
  if (aux_weight_norm(model) != 0.0) {
    throw Error("awakening: scheme '" + init_scheme_str(scheme.kind) +
                "' does not zero-initialize auxiliary heads, growth trace "
                "is undefined");
  }

  const Normalization norm = compute_normalization(data);
  std::vector<std::size_t> idx(std::min<std::size_t>(data.size(), 128));
  std::iota(idx.begin(), idx.end(), 0);
  const Batch raw = take_batch(data, idx);
  Rng unused(0, "awakening");
  const Batch batch = augment(raw, Split::Val, norm, unused);

  AwakeningRecord record;
  record.lr = lr;
  for (int t = 0; t <= steps; ++t) {
    AwakeningPoint pt;
    pt.step = t;
    pt.aux_w_norm = aux_weight_norm(model);

    Graph g;
    ModelOutput out = model.forward(batch.images);
    CompositeLoss loss = composite_loss(out, batch.labels, alpha);
    model.zero_grads();
    if (loss.aux_sum.defined()) g.backward(loss.aux_sum);
    pt.backbone_grad_norm = backbone_grad_norm(model);
    record.points.push_back(pt);

    model.zero_grads();
    g.backward(loss.total);
    if (t == 0) {
      record.c_estimate = grad_norm(model, [](const Parameter& p) {
        return is_aux(p) && p.kind == ParamKind::Weight;
      });
    }
    if (t < steps) sgd_step(model.params(), lr);
  }
  return record;
}

}  // namespace dslab
