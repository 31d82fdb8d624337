#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dslab {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until touched by backward or grad()
  bool requires_grad = false;
  int node_id = -1;  // index of the producing graph node, -1 for leaves
};

// Value-semantic handle over shared storage. Copies alias the same buffer;
// clone() makes an independent one.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t i) const { return data_->shape[i]; }
  std::size_t numel() const { return data_->values.size(); }

  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }
  double& operator[](std::size_t i) { return data_->values[i]; }
  double operator[](std::size_t i) const { return data_->values[i]; }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return defined() && !data_->grad.empty(); }
  // Allocates a zeroed buffer on first access; rejects tensors that do not
  // require grad so silent no-op reads cannot hide a wiring bug.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  Tensor clone() const;  // detached deep copy of the values

  const std::shared_ptr<TensorData>& ptr() const { return data_; }

 private:
  std::shared_ptr<TensorData> data_;
};

std::optional<std::size_t> find_nonfinite(const Tensor& t);
void assert_finite(const Tensor& t, std::string_view what = "tensor");

struct GraphNode {
  const char* op;
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  std::function<void()> backward;
};

// Append-only tape for reverse-mode differentiation. Constructing a Graph
// makes it the active tape on this thread (nesting restores the previous one
// on destruction); ops record onto the active tape when an input requires
// grad. backward() replays nodes in strictly decreasing insertion order, so
// every node runs after all of its consumers.
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* current();

  int record(const char* op, std::vector<std::shared_ptr<TensorData>> inputs,
             const std::shared_ptr<TensorData>& output,
             std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every leaf
  // reachable from `loss` that requires grad. Gradients of intermediate node
  // outputs are reset on each call; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const GraphNode& node(std::size_t i) const { return nodes_[i]; }
  void clear();

 private:
  std::vector<GraphNode> nodes_;
  Graph* prev_ = nullptr;
};

// Grad buffer of `t`, sized and ready for accumulation, or nullptr when the
// tensor does not participate in differentiation.
double* grad_sink(TensorData& t);

}  // namespace dslab
