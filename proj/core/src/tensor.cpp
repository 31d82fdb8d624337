#include "dslab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dslab {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ", ";
    out << s[i];
  }
  out << ")";
  return out.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape) {
  data_ = std::make_shared<TensorData>();
  data_->shape = std::move(shape);
  data_->values.assign(shape_numel(data_->shape), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw Error("tensor: " + std::to_string(values.size()) +
                " values do not fill shape " + shape_str(shape));
  }
  data_ = std::make_shared<TensorData>();
  data_->shape = std::move(shape);
  data_->values = std::move(values);
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = value;
  return t;
}

double Tensor::item() const {
  if (!defined() || numel() != 1) {
    throw Error("item: expected a single element, got shape " +
                (defined() ? shape_str(shape()) : std::string("<undefined>")));
  }
  return data_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  data_->requires_grad = on;
  if (!on) data_->grad.clear();
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (!data_->requires_grad) {
    throw Error("grad: tensor does not require grad");
  }
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!data_->requires_grad) {
    throw Error("grad: tensor does not require grad");
  }
  if (data_->grad.empty()) {
    throw Error("grad: no gradient has been accumulated");
  }
  return data_->grad;
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t;
  t.data_ = std::make_shared<TensorData>();
  t.data_->shape = data_->shape;
  t.data_->values = data_->values;
  return t;
}

std::optional<std::size_t> find_nonfinite(const Tensor& t) {
  const auto& v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) return i;
  }
  return std::nullopt;
}

void assert_finite(const Tensor& t, std::string_view what) {
  if (auto i = find_nonfinite(t)) {
    throw Error(std::string(what) + ": non-finite value at flat index " +
                std::to_string(*i) + " of shape " + shape_str(t.shape()));
  }
}

namespace {
thread_local Graph* g_active = nullptr;
}

Graph::Graph() {
  prev_ = g_active;
  g_active = this;
}

Graph::~Graph() { g_active = prev_; }

Graph* Graph::current() { return g_active; }

int Graph::record(const char* op, std::vector<std::shared_ptr<TensorData>> inputs,
                  const std::shared_ptr<TensorData>& output,
                  std::function<void()> backward) {
  int id = static_cast<int>(nodes_.size());
  output->requires_grad = true;
  output->node_id = id;
  nodes_.push_back(GraphNode{op, std::move(inputs), output, std::move(backward)});
  return id;
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error("backward: loss must be a scalar, got shape " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw Error("backward: loss does not require grad; nothing to differentiate");
  }
  // Node outputs get fresh gradients on every call; leaves keep accumulating.
  for (auto& n : nodes_) {
    n.output->grad.assign(n.output->values.size(), 0.0);
  }
  auto& ld = *loss.ptr();
  if (ld.grad.empty()) ld.grad.assign(1, 0.0);
  ld.grad[0] += 1.0;
  int start = ld.node_id >= 0 ? ld.node_id : static_cast<int>(nodes_.size()) - 1;
  for (int i = start; i >= 0; --i) {
    nodes_[static_cast<std::size_t>(i)].backward();
  }
}

void Graph::clear() { nodes_.clear(); }

double* grad_sink(TensorData& t) {
  if (!t.requires_grad) return nullptr;
  if (t.grad.empty()) t.grad.assign(t.values.size(), 0.0);
  return t.grad.data();
}

}  // namespace dslab
