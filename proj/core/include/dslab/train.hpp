#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dslab/data.hpp"
#include "dslab/init.hpp"
#include "dslab/layers.hpp"

namespace dslab {

enum class Optimizer { AdamW, Sgd };
Optimizer parse_optimizer(const std::string& s);
std::string optimizer_str(Optimizer opt);

// Linear ramp of the auxiliary weight over the first `steps` updates.
struct WarmupConfig {
  bool enabled = false;
  int steps = 0;
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.05;
  std::size_t batch_size = 128;
  double aux_weight = 0.3;
  int max_steps = 3000;
  double convergence_threshold = 0.70;
  Optimizer optimizer = Optimizer::AdamW;
  WarmupConfig warmup;
  // Cadence (in steps) of the aux-to-main backbone-gradient ratio probe;
  // 0 disables the probe.
  int ratio_every = 10;
  // Stop once the running accuracy first crosses the threshold. Full-length
  // runs only matter when the post-convergence tail is itself under study.
  bool stop_at_threshold = true;

  void validate() const;
};

// Effective auxiliary weight at 0-based step t.
double alpha_eff(double aux_weight, const WarmupConfig& warmup, int step);

struct CompositeLoss {
  Tensor total;
  Tensor main_term;               // CE(main), for part-wise backward passes
  std::vector<Tensor> aux_terms;  // unweighted CE(aux_k)
  Tensor aux_sum;                 // sum of aux_terms; undefined without heads
  double main = 0.0;
  std::vector<double> aux;
};

// total = CE(main) + alpha * sum_k CE(aux_k), recorded on the active tape.
CompositeLoss composite_loss(const ModelOutput& out,
                             std::span<const int> labels, double alpha);

// First and second moment buffers, one pair per parameter.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;

  explicit AdamState(const std::vector<Parameter>& params);
};

// Decoupled weight decay: weights (only) shrink by lr*decay before the
// moment-scaled update. Parameters without a gradient buffer count as
// zero-gradient.
void adamw_step(std::vector<Parameter>& params, AdamState& state,
                const TrainConfig& cfg);

// Plain theta -= lr * grad.
void sgd_step(std::vector<Parameter>& params, double lr);

struct StepRecord {
  int step = 0;  // 0-based
  double loss_main = 0.0;
  std::vector<double> loss_aux;
  double loss_total = 0.0;
  double run_acc = 0.0;  // mean batch accuracy over the last <=100 steps
  // ||grad_backbone sum_k L_aux|| / ||grad_backbone L_main|| on the fixed
  // probe batch; negative when not measured this step.
  double grad_ratio = -1.0;
  std::vector<double> aux_w_norm;  // per-head aux weight norm, pre-update
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  // 1-based count of the first step whose running accuracy reached the
  // threshold; empty when the run ended without converging.
  std::optional<int> steps_to_threshold;
  double wall_time_sec = 0.0;
  double final_val_accuracy = 0.0;
  // Per-head gradient magnitude ||d CE(aux_k) / d W_aux_k|| at step 0.
  std::vector<double> ck;
  bool aborted_nan = false;
  int abort_step = -1;
};

// Runs the composite-loss training loop on a pre-initialized model. Streams
// one structured record per step (plus a summary record) to `metrics_path`
// when non-empty; `run_label` tags the stream. Deterministic in
// (model state, config, dataset, seed). A non-finite loss aborts the run,
// keeping every record before the bad step.
RunMetrics train(ModelGraph& model, const Dataset& train_data,
                 const Dataset& val_data, const TrainConfig& cfg,
                 std::uint64_t seed, const std::string& metrics_path = "",
                 const std::string& run_label = "");

// Mean argmax accuracy over a dataset, evaluated with frozen statistics and
// the same per-channel normalization the training stream used.
double evaluate_accuracy(ModelGraph& model, const Dataset& data,
                         const Normalization& norm);

struct AwakeningPoint {
  int step = 0;
  double aux_w_norm = 0.0;        // ||W_aux(t)|| over every aux weight
  double backbone_grad_norm = 0.0;  // ||grad_backbone sum_k CE(aux_k)||
};

struct AwakeningRecord {
  std::vector<AwakeningPoint> points;  // t = 0..steps
  // ||d L / d W_aux|| at t = 0; under SGD, ||W_aux(1)|| = lr * c_estimate.
  double c_estimate = 0.0;
  double lr = 0.0;
};

// Traces how zero-initialized aux heads grow under plain SGD on one fixed,
// unshuffled batch. The scheme must zero every aux weight (the trace is
// undefined otherwise). `alpha` weights the aux losses in the trained
// objective; the logged gradient norms are always unweighted.
AwakeningRecord measure_awakening(ModelGraph& model, const InitScheme& scheme,
                                  const Dataset& data, int steps,
                                  double lr = 1e-3, double alpha = 1.0,
                                  const Tensor& calib = {});

}  // namespace dslab
