#include "docnmt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "docnmt/errors.hpp"

namespace docnmt {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> data,
                                        bool requires_grad) {
  if (numel(shape) != data.size()) {
    fail(ErrorKind::kDimension, "tensor data of length " +
                                    std::to_string(data.size()) +
                                    " does not fit shape " + to_string(shape));
  }
  for (auto extent : shape) {
    if (extent == 0) fail(ErrorKind::kDimension, "zero extent in shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_node_id();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}
}  // namespace

std::uint64_t detail::next_node_id() { return g_next_id.fetch_add(1); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    fail(ErrorKind::kDimension,
         "axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  }
  return node_->shape[axis];
}

double Tensor::item() const {
  if (size() != 1) fail(ErrorKind::kContract, "item() on non-scalar " + to_string(shape()));
  return node_->value[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
  return *this;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

ConstMatrixMap Tensor::matrix() const {
  const auto& s = shape();
  const Eigen::Index cols = s.empty() ? 1 : static_cast<Eigen::Index>(s.back());
  const Eigen::Index rows = static_cast<Eigen::Index>(size()) / cols;
  return ConstMatrixMap(node_->value.data(), rows, cols);
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), node_->value, false));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node_ptr()};
  seen.insert(root.node_ptr().get());
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    for (const auto& parent : node->parents) {
      if (parent->requires_grad && seen.insert(parent.get()).second) {
        stack.push_back(parent);
      }
    }
    tape.nodes_.push_back(std::move(node));
  }
  // Ids are issued at creation, so ascending id order is a topological order.
  std::sort(tape.nodes_.begin(), tape.nodes_.end(),
            [](const auto& a, const auto& b) { return a->id < b->id; });
  tape.records_.reserve(tape.nodes_.size());
  for (const auto& node : tape.nodes_) {
    Record record{node->id, node->op, {}};
    for (const auto& parent : node->parents) record.parents.push_back(parent->id);
    tape.records_.push_back(std::move(record));
  }
  return tape;
}

bool Tape::topologically_ordered() const {
  std::unordered_set<std::uint64_t> done;
  for (const auto& record : records_) {
    for (auto parent : record.parents) {
      if (!done.contains(parent)) return false;
    }
    done.insert(record.node_id);
  }
  return true;
}

void Tape::run_backward() {
  if (nodes_.empty()) return;
  auto& root = *nodes_.back();
  auto& seed = root.grad_buffer();
  std::fill(seed.begin(), seed.end(), 0.0);
  seed[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    fail(ErrorKind::kContract, "backward() needs a scalar loss, got " +
                                   (loss.defined() ? to_string(loss.shape())
                                                   : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    fail(ErrorKind::kContract, "backward() on a loss with no recorded operations");
  }
  auto tape = Tape::record(loss);
  tape.run_backward();
}

}  // namespace docnmt
