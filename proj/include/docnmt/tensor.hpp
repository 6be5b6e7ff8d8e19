#pragma once

// Dense row-major tensors of doubles with define-by-run reverse-mode
// differentiation. Every op that touches a grad-requiring input records a
// node holding its parents and a backward closure; backward() replays the
// reachable nodes in reverse creation order.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace docnmt {

using Shape = std::vector<std::size_t>;

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

std::uint64_t next_node_id();

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Direct write access; reserved for leaves (optimizer updates, loading).
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();
  void clear_grad() { node_->grad.clear(); }

  std::uint64_t node_id() const { return node_->id; }
  const char* op_name() const { return node_->op; }

  // Rank-2 view; higher ranks fold leading axes into rows.
  ConstMatrixMap matrix() const;

  // Same values, fresh leaf with no history.
  Tensor detach() const;

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Recording is on by default; NoGradGuard disables it for the current
// thread, so inference builds no graph.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// The recorded operations reachable from a root, in topological order.
class Tape {
 public:
  struct Record {
    std::uint64_t node_id;
    const char* op;
    std::vector<std::uint64_t> parents;
  };

  static Tape record(const Tensor& root);

  std::span<const Record> records() const { return records_; }
  bool topologically_ordered() const;

  // Seeds the root gradient with one and runs every closure in reverse.
  void run_backward();

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<Record> records_;
};

// Accumulates d(loss)/d(leaf) into every grad-requiring leaf reachable
// from the scalar loss.
void backward(const Tensor& loss);

}  // namespace docnmt
