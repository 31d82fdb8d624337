#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dslab/ops.hpp"
#include "dslab/tensor.hpp"

namespace dslab {

enum class Role { Backbone, AuxHead, MainHead };

// Every trainable parameter belongs to exactly one role. Auxiliary heads are
// numbered contiguously from 1.
struct RoleTag {
  Role role = Role::Backbone;
  int aux_index = 0;

  static RoleTag backbone() { return {Role::Backbone, 0}; }
  static RoleTag aux(int index) { return {Role::AuxHead, index}; }
  static RoleTag main_head() { return {Role::MainHead, 0}; }
  bool operator==(const RoleTag&) const = default;
};
std::string role_str(RoleTag tag);

enum class ParamKind { Weight, Bias, BnScale, BnShift, ResidualGate };

struct Parameter {
  std::string name;  // unique within a model
  Tensor tensor;
  RoleTag role;
  ParamKind kind = ParamKind::Weight;
  std::size_t fan_in = 0;   // receptive dimensions feeding one output unit
  std::size_t fan_out = 0;
  bool is_residual_scale = false;    // ReZero-style gate
  bool is_in_residual_branch = false;
  bool is_final_in_branch = false;   // last weight inside a residual branch
};

enum class StepKind {
  Conv,
  Linear,
  BatchNorm,
  Relu,
  Concat,
  Add,
  GlobalAvgPool,
  GateScale
};
std::string step_kind_str(StepKind kind);

// One node of the architecture: either a parameterized layer (Conv, Linear,
// BatchNorm, GateScale) or a structural edge (Relu, Concat, Add, pooling).
// Slots are activation registers; steps are topologically ordered by
// construction.
struct LayerStep {
  StepKind kind;
  std::string label;
  std::vector<int> inputs;  // slot ids
  int output = -1;          // slot id
  int weight = -1;          // indices into the parameter list, -1 if absent
  int bias = -1;
  int scale = -1;
  int shift = -1;
  int gate = -1;
  int stride = 1;
  int padding = 0;
  int bn_state = -1;
  // Aux-role parameters are normally confined to side branches; a step that
  // deliberately injects them into the main path (additive residual designs)
  // must carry this flag to pass structural validation.
  bool on_path_aux = false;
};

struct ForwardOptions {
  bool training = true;
  bool update_bn_running = true;
};

struct ModelOutput {
  Tensor main;
  std::vector<Tensor> aux;  // aux head k at index k-1
};

enum class ArchKind { DenseNetDS, ResNetDS_SideTap, ResNetDS_OnPath, MlpDS };
std::string arch_str(ArchKind kind);

struct Census {
  std::map<std::string, std::size_t> by_name;
  std::vector<std::pair<std::string, std::size_t>> by_layer;  // label -> count
  std::size_t backbone = 0;
  std::size_t main_head = 0;
  std::vector<std::size_t> per_aux;  // aux head k at index k-1
  std::size_t aux_total = 0;
  std::size_t total = 0;
  double aux_fraction = 0.0;
};

struct BranchMark {
  bool in_branch = false;
  bool final_in_branch = false;
};

// An executable architecture description: an ordered list of steps over
// activation slots, plus tagged parameters and declared outputs. Construction
// is two-phase (builder calls, then finalize()); forward() interprets the
// steps. Immutable after finalize() except parameter tensors and BN state.
class ModelGraph {
 public:
  ModelGraph(ArchKind arch, std::string name, Shape sample_shape);

  // -- builder surface -------------------------------------------------
  int input_slot() const { return 0; }
  int conv(const std::string& label, int in, std::size_t out_channels,
           std::size_t kernel, int stride, int padding, bool with_bias,
           RoleTag role, BranchMark mark = {}, bool on_path_aux = false);
  int linear_layer(const std::string& label, int in, std::size_t out_features,
                   bool with_bias, RoleTag role);
  int batchnorm(const std::string& label, int in, RoleTag role);
  int relu_step(const std::string& label, int in);
  int concat_step(const std::string& label, const std::vector<int>& ins);
  int add_step(const std::string& label, const std::vector<int>& ins);
  int gap_step(const std::string& label, int in);
  int gate_step(const std::string& label, int in, RoleTag role);
  void declare_aux_output(int aux_index, int slot);
  void declare_main_output(int slot);
  // Validates output declarations, role partition, aux-index contiguity, and
  // main-path purity (aux parameters off the main path unless flagged).
  void finalize();

  // -- execution ---------------------------------------------------------
  ModelOutput forward(const Tensor& x, const ForwardOptions& opts = {});
  // Runs forward and returns every slot activation (input included).
  std::vector<Tensor> forward_slots(const Tensor& x,
                                    const ForwardOptions& opts = {});
  // Evaluates a single step against already-populated input slots. Lets
  // calibration passes re-run one layer without replaying the prefix.
  Tensor eval_step(std::size_t step_index, const std::vector<Tensor>& slots,
                   const ForwardOptions& opts = {});

  // -- introspection -----------------------------------------------------
  ArchKind arch() const { return arch_; }
  const std::string& name() const { return name_; }
  const Shape& sample_shape() const { return sample_shape_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(std::size_t i) { return params_[i]; }
  const std::vector<LayerStep>& steps() const { return steps_; }
  std::size_t aux_count() const { return aux_output_slots_.size(); }
  const std::vector<int>& aux_output_slots() const { return aux_output_slots_; }
  int main_output_slot() const { return main_output_slot_; }
  const Shape& slot_shape(int slot) const;  // per-sample shape
  std::size_t slot_count() const { return slot_shapes_.size(); }
  BatchNormState& bn_state(int i) { return bn_states_[static_cast<std::size_t>(i)]; }
  // Steps (by index) whose output feeds the main logits.
  const std::vector<int>& main_path_steps() const { return main_path_steps_; }

  Census census() const;
  void zero_grads();
  std::size_t param_count() const;

 private:
  int new_slot(Shape per_sample_shape);
  int add_param(Parameter p);
  const Shape& in_shape(int slot, const std::string& label) const;
  void check_open(const std::string& label) const;

  ArchKind arch_;
  std::string name_;
  Shape sample_shape_;
  std::vector<Shape> slot_shapes_;
  std::vector<LayerStep> steps_;
  std::vector<Parameter> params_;
  std::vector<BatchNormState> bn_states_;
  std::vector<int> aux_output_slots_;  // aux k at index k-1
  int main_output_slot_ = -1;
  std::vector<int> main_path_steps_;
  bool finalized_ = false;
};

// GAP followed by a bias-free classifier reading `slot`; parameters carry
// `role` (an aux tag or the main-head tag). Declares the model output for
// aux roles. Returns the logits slot.
int attach_pooled_head(ModelGraph& m, const std::string& label, int slot,
                       int classes, RoleTag role);

}  // namespace dslab
