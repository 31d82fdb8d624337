#include "dslab/layers.hpp"

#include <algorithm>

namespace dslab {

std::string role_str(RoleTag tag) {
  switch (tag.role) {
    case Role::Backbone:
      return "backbone";
    case Role::AuxHead:
      return "aux" + std::to_string(tag.aux_index);
    case Role::MainHead:
      return "main_head";
  }
  return "?";
}

std::string step_kind_str(StepKind kind) {
  switch (kind) {
    case StepKind::Conv: return "conv";
    case StepKind::Linear: return "linear";
    case StepKind::BatchNorm: return "batchnorm";
    case StepKind::Relu: return "relu";
    case StepKind::Concat: return "concat";
    case StepKind::Add: return "add";
    case StepKind::GlobalAvgPool: return "global_avg_pool";
    case StepKind::GateScale: return "gate_scale";
  }
  return "?";
}

std::string arch_str(ArchKind kind) {
  switch (kind) {
    case ArchKind::DenseNetDS: return "densenet-ds";
    case ArchKind::ResNetDS_SideTap: return "resnet-ds/side-tap";
    case ArchKind::ResNetDS_OnPath: return "resnet-ds/on-path";
    case ArchKind::MlpDS: return "mlp-ds";
  }
  return "?";
}

ModelGraph::ModelGraph(ArchKind arch, std::string name, Shape sample_shape)
    : arch_(arch), name_(std::move(name)), sample_shape_(std::move(sample_shape)) {
  if (sample_shape_.empty() || shape_numel(sample_shape_) == 0) {
    throw Error(name_ + ": invalid sample shape " + shape_str(sample_shape_));
  }
  slot_shapes_.push_back(sample_shape_);
}

int ModelGraph::new_slot(Shape per_sample_shape) {
  slot_shapes_.push_back(std::move(per_sample_shape));
  return static_cast<int>(slot_shapes_.size()) - 1;
}

const Shape& ModelGraph::slot_shape(int slot) const {
  if (slot < 0 || slot >= static_cast<int>(slot_shapes_.size())) {
    throw Error(name_ + ": slot " + std::to_string(slot) + " out of range");
  }
  return slot_shapes_[static_cast<std::size_t>(slot)];
}

const Shape& ModelGraph::in_shape(int slot, const std::string& label) const {
  if (slot < 0 || slot >= static_cast<int>(slot_shapes_.size())) {
    throw Error(name_ + "/" + label + ": input slot " + std::to_string(slot) +
                " does not exist");
  }
  return slot_shapes_[static_cast<std::size_t>(slot)];
}

void ModelGraph::check_open(const std::string& label) const {
  if (finalized_) {
    throw Error(name_ + "/" + label + ": model already finalized");
  }
}

int ModelGraph::add_param(Parameter p) {
  for (const Parameter& q : params_) {
    if (q.name == p.name) {
      throw Error(name_ + ": duplicate parameter name " + p.name);
    }
  }
  if (p.fan_in == 0) {
    throw Error(name_ + ": parameter " + p.name + " has no fan_in");
  }
  p.tensor.set_requires_grad(true);
  params_.push_back(std::move(p));
  return static_cast<int>(params_.size()) - 1;
}

int ModelGraph::conv(const std::string& label, int in, std::size_t out_channels,
                     std::size_t kernel, int stride, int padding, bool with_bias,
                     RoleTag role, BranchMark mark, bool on_path_aux) {
  check_open(label);
  const Shape& s = in_shape(in, label);
  if (s.size() != 3) {
    throw Error(name_ + "/" + label + ": conv expects (C,H,W) input, got " +
                shape_str(s));
  }
  const std::size_t Ci = s[0], H = s[1], W = s[2];
  const long ho = (static_cast<long>(H) + 2L * padding - static_cast<long>(kernel)) / stride + 1;
  const long wo = (static_cast<long>(W) + 2L * padding - static_cast<long>(kernel)) / stride + 1;
  if (ho < 1 || wo < 1) {
    throw Error(name_ + "/" + label + ": kernel does not fit input " + shape_str(s));
  }

  LayerStep step;
  step.kind = StepKind::Conv;
  step.label = label;
  step.inputs = {in};
  step.stride = stride;
  step.padding = padding;
  step.on_path_aux = on_path_aux;

  Parameter w;
  w.name = label + "/weight";
  w.tensor = Tensor({out_channels, Ci, kernel, kernel});
  w.role = role;
  w.kind = ParamKind::Weight;
  w.fan_in = Ci * kernel * kernel;
  w.fan_out = out_channels * kernel * kernel;
  w.is_in_residual_branch = mark.in_branch;
  w.is_final_in_branch = mark.final_in_branch;
  step.weight = add_param(std::move(w));

  if (with_bias) {
    Parameter b;
    b.name = label + "/bias";
    b.tensor = Tensor({out_channels});
    b.role = role;
    b.kind = ParamKind::Bias;
    b.fan_in = Ci * kernel * kernel;
    b.fan_out = out_channels;
    b.is_in_residual_branch = mark.in_branch;
    step.bias = add_param(std::move(b));
  }

  step.output = new_slot({out_channels, static_cast<std::size_t>(ho),
                          static_cast<std::size_t>(wo)});
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::linear_layer(const std::string& label, int in,
                             std::size_t out_features, bool with_bias,
                             RoleTag role) {
  check_open(label);
  const Shape& s = in_shape(in, label);
  if (s.size() != 1) {
    throw Error(name_ + "/" + label + ": linear expects flat input, got " +
                shape_str(s));
  }
  LayerStep step;
  step.kind = StepKind::Linear;
  step.label = label;
  step.inputs = {in};

  Parameter w;
  w.name = label + "/weight";
  w.tensor = Tensor({out_features, s[0]});
  w.role = role;
  w.kind = ParamKind::Weight;
  w.fan_in = s[0];
  w.fan_out = out_features;
  step.weight = add_param(std::move(w));

  if (with_bias) {
    Parameter b;
    b.name = label + "/bias";
    b.tensor = Tensor({out_features});
    b.role = role;
    b.kind = ParamKind::Bias;
    b.fan_in = s[0];
    b.fan_out = out_features;
    step.bias = add_param(std::move(b));
  }

  step.output = new_slot({out_features});
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::batchnorm(const std::string& label, int in, RoleTag role) {
  check_open(label);
  const Shape& s = in_shape(in, label);
  if (s.size() != 3) {
    throw Error(name_ + "/" + label + ": batchnorm expects (C,H,W) input, got " +
                shape_str(s));
  }
  const std::size_t C = s[0];
  LayerStep step;
  step.kind = StepKind::BatchNorm;
  step.label = label;
  step.inputs = {in};

  Parameter g;
  g.name = label + "/scale";
  g.tensor = Tensor::full({C}, 1.0);
  g.role = role;
  g.kind = ParamKind::BnScale;
  g.fan_in = C;
  g.fan_out = C;
  step.scale = add_param(std::move(g));

  Parameter b;
  b.name = label + "/shift";
  b.tensor = Tensor({C});
  b.role = role;
  b.kind = ParamKind::BnShift;
  b.fan_in = C;
  b.fan_out = C;
  step.shift = add_param(std::move(b));

  bn_states_.emplace_back(C);
  step.bn_state = static_cast<int>(bn_states_.size()) - 1;

  step.output = new_slot(s);
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::relu_step(const std::string& label, int in) {
  check_open(label);
  LayerStep step;
  step.kind = StepKind::Relu;
  step.label = label;
  step.inputs = {in};
  step.output = new_slot(in_shape(in, label));
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::concat_step(const std::string& label, const std::vector<int>& ins) {
  check_open(label);
  if (ins.size() < 2) {
    throw Error(name_ + "/" + label + ": concat needs at least 2 inputs");
  }
  Shape out = in_shape(ins[0], label);
  if (out.size() < 2) {
    throw Error(name_ + "/" + label + ": concat expects channeled input");
  }
  for (std::size_t i = 1; i < ins.size(); ++i) {
    const Shape& s = in_shape(ins[i], label);
    if (s.size() != out.size()) {
      throw Error(name_ + "/" + label + ": concat rank mismatch");
    }
    for (std::size_t d = 1; d < s.size(); ++d) {
      if (s[d] != out[d]) {
        throw Error(name_ + "/" + label + ": concat spatial mismatch " +
                    shape_str(out) + " vs " + shape_str(s));
      }
    }
    out[0] += s[0];
  }
  LayerStep step;
  step.kind = StepKind::Concat;
  step.label = label;
  step.inputs = ins;
  step.output = new_slot(std::move(out));
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::add_step(const std::string& label, const std::vector<int>& ins) {
  check_open(label);
  if (ins.size() < 2) {
    throw Error(name_ + "/" + label + ": add needs at least 2 inputs");
  }
  const Shape& out = in_shape(ins[0], label);
  for (std::size_t i = 1; i < ins.size(); ++i) {
    if (in_shape(ins[i], label) != out) {
      throw Error(name_ + "/" + label + ": add shape mismatch " + shape_str(out) +
                  " vs " + shape_str(in_shape(ins[i], label)));
    }
  }
  LayerStep step;
  step.kind = StepKind::Add;
  step.label = label;
  step.inputs = ins;
  step.output = new_slot(out);
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::gap_step(const std::string& label, int in) {
  check_open(label);
  const Shape& s = in_shape(in, label);
  if (s.size() != 3) {
    throw Error(name_ + "/" + label + ": pooling expects (C,H,W) input, got " +
                shape_str(s));
  }
  LayerStep step;
  step.kind = StepKind::GlobalAvgPool;
  step.label = label;
  step.inputs = {in};
  step.output = new_slot({s[0]});
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

int ModelGraph::gate_step(const std::string& label, int in, RoleTag role) {
  check_open(label);
  LayerStep step;
  step.kind = StepKind::GateScale;
  step.label = label;
  step.inputs = {in};

  Parameter g;
  g.name = label + "/gate";
  g.tensor = Tensor::full({1}, 1.0);
  g.role = role;
  g.kind = ParamKind::ResidualGate;
  g.fan_in = 1;
  g.fan_out = 1;
  g.is_residual_scale = true;
  step.gate = add_param(std::move(g));

  step.output = new_slot(in_shape(in, label));
  steps_.push_back(std::move(step));
  return steps_.back().output;
}

void ModelGraph::declare_aux_output(int aux_index, int slot) {
  check_open("aux_output");
  if (aux_index != static_cast<int>(aux_output_slots_.size()) + 1) {
    throw Error(name_ + ": aux head indices must be declared contiguously from 1, got " +
                std::to_string(aux_index));
  }
  (void)in_shape(slot, "aux_output");
  aux_output_slots_.push_back(slot);
}

void ModelGraph::declare_main_output(int slot) {
  check_open("main_output");
  if (main_output_slot_ >= 0) {
    throw Error(name_ + ": main output already declared");
  }
  (void)in_shape(slot, "main_output");
  main_output_slot_ = slot;
}

void ModelGraph::finalize() {
  if (finalized_) throw Error(name_ + ": finalize called twice");
  if (main_output_slot_ < 0) throw Error(name_ + ": no main output declared");
  if (aux_output_slots_.empty()) {
    throw Error(name_ + ": deeply-supervised model needs at least one aux output");
  }
  const int K = static_cast<int>(aux_output_slots_.size());
  for (const Parameter& p : params_) {
    if (p.role.role == Role::AuxHead &&
        (p.role.aux_index < 1 || p.role.aux_index > K)) {
      throw Error(name_ + ": parameter " + p.name + " tagged aux" +
                  std::to_string(p.role.aux_index) + " but model has " +
                  std::to_string(K) + " aux heads");
    }
  }

  // Steps feeding the main logits, found by walking producers backwards.
  std::vector<int> producer(slot_shapes_.size(), -1);
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    producer[static_cast<std::size_t>(steps_[i].output)] = static_cast<int>(i);
  }
  std::vector<bool> on_main(steps_.size(), false);
  std::vector<int> stack = {main_output_slot_};
  while (!stack.empty()) {
    int slot = stack.back();
    stack.pop_back();
    int p = producer[static_cast<std::size_t>(slot)];
    if (p < 0 || on_main[static_cast<std::size_t>(p)]) continue;
    on_main[static_cast<std::size_t>(p)] = true;
    for (int in : steps_[static_cast<std::size_t>(p)].inputs) stack.push_back(in);
  }
  main_path_steps_.clear();
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (on_main[i]) main_path_steps_.push_back(static_cast<int>(i));
  }

  // Main-path purity: aux-role parameters may only sit on the main path in
  // steps explicitly marked as on-path contributions; head parameters may
  // only sit on it.
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const LayerStep& s = steps_[i];
    for (int pi : {s.weight, s.bias, s.scale, s.shift, s.gate}) {
      if (pi < 0) continue;
      const Parameter& p = params_[static_cast<std::size_t>(pi)];
      if (on_main[i] && p.role.role == Role::AuxHead && !s.on_path_aux) {
        throw Error(name_ + ": side-tap violation, aux parameter " + p.name +
                    " feeds the main path");
      }
      if (!on_main[i] && p.role.role == Role::MainHead) {
        throw Error(name_ + ": main-head parameter " + p.name +
                    " is not on the main path");
      }
    }
  }
  finalized_ = true;
}

std::vector<Tensor> ModelGraph::forward_slots(const Tensor& x,
                                              const ForwardOptions& opts) {
  if (!finalized_) throw Error(name_ + ": forward before finalize");
  if (!x.defined() || x.rank() != sample_shape_.size() + 1) {
    throw Error(name_ + ": input must be batched " + shape_str(sample_shape_) +
                ", got " + (x.defined() ? shape_str(x.shape()) : "<undefined>"));
  }
  for (std::size_t d = 0; d < sample_shape_.size(); ++d) {
    if (x.dim(d + 1) != sample_shape_[d]) {
      throw Error(name_ + ": input shape " + shape_str(x.shape()) +
                  " does not match sample shape " + shape_str(sample_shape_));
    }
  }

  std::vector<Tensor> slots(slot_shapes_.size());
  slots[0] = x;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    slots[static_cast<std::size_t>(steps_[i].output)] = eval_step(i, slots, opts);
  }
  return slots;
}

Tensor ModelGraph::eval_step(std::size_t step_index,
                             const std::vector<Tensor>& slots,
                             const ForwardOptions& opts) {
  if (step_index >= steps_.size()) {
    throw Error(name_ + ": step index " + std::to_string(step_index) +
                " out of range");
  }
  const LayerStep& s = steps_[step_index];
  switch (s.kind) {
    case StepKind::Conv:
      return conv2d(slots[static_cast<std::size_t>(s.inputs[0])],
                    params_[static_cast<std::size_t>(s.weight)].tensor,
                    s.bias >= 0 ? params_[static_cast<std::size_t>(s.bias)].tensor
                                : Tensor(),
                    s.stride, s.padding);
    case StepKind::Linear:
      return linear(slots[static_cast<std::size_t>(s.inputs[0])],
                    params_[static_cast<std::size_t>(s.weight)].tensor,
                    s.bias >= 0 ? params_[static_cast<std::size_t>(s.bias)].tensor
                                : Tensor());
    case StepKind::BatchNorm:
      return batchnorm2d(slots[static_cast<std::size_t>(s.inputs[0])],
                         params_[static_cast<std::size_t>(s.scale)].tensor,
                         params_[static_cast<std::size_t>(s.shift)].tensor,
                         bn_states_[static_cast<std::size_t>(s.bn_state)],
                         opts.training, opts.update_bn_running);
    case StepKind::Relu:
      return relu(slots[static_cast<std::size_t>(s.inputs[0])]);
    case StepKind::Concat: {
      std::vector<Tensor> parts;
      parts.reserve(s.inputs.size());
      for (int in : s.inputs) parts.push_back(slots[static_cast<std::size_t>(in)]);
      return concat(parts, 1);
    }
    case StepKind::Add: {
      Tensor out = slots[static_cast<std::size_t>(s.inputs[0])];
      for (std::size_t i = 1; i < s.inputs.size(); ++i) {
        out = add(out, slots[static_cast<std::size_t>(s.inputs[i])]);
      }
      return out;
    }
    case StepKind::GlobalAvgPool:
      return global_avg_pool(slots[static_cast<std::size_t>(s.inputs[0])]);
    case StepKind::GateScale:
      return gate_mul(slots[static_cast<std::size_t>(s.inputs[0])],
                      params_[static_cast<std::size_t>(s.gate)].tensor);
  }
  throw Error(name_ + ": unknown step kind");
}

ModelOutput ModelGraph::forward(const Tensor& x, const ForwardOptions& opts) {
  std::vector<Tensor> slots = forward_slots(x, opts);
  ModelOutput out;
  out.main = slots[static_cast<std::size_t>(main_output_slot_)];
  out.aux.reserve(aux_output_slots_.size());
  for (int s : aux_output_slots_) {
    out.aux.push_back(slots[static_cast<std::size_t>(s)]);
  }
  return out;
}

Census ModelGraph::census() const {
  Census c;
  c.per_aux.assign(aux_output_slots_.size(), 0);
  for (const Parameter& p : params_) {
    const std::size_t n = p.tensor.numel();
    c.by_name[p.name] = n;
    c.total += n;
    switch (p.role.role) {
      case Role::Backbone:
        c.backbone += n;
        break;
      case Role::MainHead:
        c.main_head += n;
        break;
      case Role::AuxHead:
        c.aux_total += n;
        c.per_aux[static_cast<std::size_t>(p.role.aux_index - 1)] += n;
        break;
    }
  }
  for (const LayerStep& s : steps_) {
    std::size_t n = 0;
    for (int pi : {s.weight, s.bias, s.scale, s.shift, s.gate}) {
      if (pi >= 0) n += params_[static_cast<std::size_t>(pi)].tensor.numel();
    }
    if (n > 0) c.by_layer.emplace_back(s.label, n);
  }
  c.aux_fraction = c.total ? static_cast<double>(c.aux_total) /
                                 static_cast<double>(c.total)
                           : 0.0;
  return c;
}

void ModelGraph::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

std::size_t ModelGraph::param_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.numel();
  return n;
}

int attach_pooled_head(ModelGraph& m, const std::string& label, int slot,
                       int classes, RoleTag role) {
  if (classes < 2) throw Error(label + ": need at least 2 classes");
  int pooled = m.gap_step(label + "/pool", slot);
  int logits = m.linear_layer(label + "/linear", pooled,
                              static_cast<std::size_t>(classes), false, role);
  if (role.role == Role::AuxHead) {
    m.declare_aux_output(role.aux_index, logits);
  } else if (role.role == Role::MainHead) {
    m.declare_main_output(logits);
  }
  return logits;
}

}  // namespace dslab
