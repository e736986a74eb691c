#include "ctgv/tensor.hpp"

#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
namespace {
// Tensor buffers churn through megabyte blocks; keep them on the heap
// free-list instead of bouncing every one through mmap and a fresh set of
// zeroed pages.
const bool malloc_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
  return true;
}();
}  // namespace
#endif

namespace ctgv {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

void Node::accumulate(const double* g, int64_t n) {
  check(n == size, "gradient size mismatch");
  if (grad.empty()) {
    grad.assign(g, g + n);
    return;
  }
  for (int64_t i = 0; i < n; ++i) grad[static_cast<size_t>(i)] += g[i];
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(values))) {
  check(numel_of(shape_) == static_cast<int64_t>(data_->size()),
        "tensor shape " + shape_str(shape_) + " does not match value count");
}

Tensor::Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
               std::shared_ptr<Node> node)
    : shape_(std::move(shape)), data_(std::move(data)), node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape) {
  int64_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

double Tensor::item() const {
  check(defined() && numel() == 1, "item() needs a single element tensor");
  return (*data_)[0];
}

Tensor& Tensor::requires_grad_() {
  check(defined(), "requires_grad_ on undefined tensor");
  if (!node_) node_ = std::make_shared<Node>(numel(), true);
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> empty;
  return node_ ? node_->grad : empty;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

namespace {
thread_local ComputeTape* g_tape = nullptr;
}  // namespace

ComputeTape* ComputeTape::current() { return g_tape; }

void ComputeTape::record(std::shared_ptr<Node> output, std::function<void()> fn) {
  records_.push_back({std::move(output), std::move(fn)});
}

void ComputeTape::backward(const Tensor& root, double seed) {
  check(root.tracked(), "backward root is not tracked");
  check(root.numel() == 1, "backward root must be scalar");
  auto& root_grad = root.node()->grad;
  if (root_grad.empty()) root_grad.assign(static_cast<size_t>(root.numel()), 0.0);
  for (double& g : root_grad) g += seed;
  for (size_t i = records_.size(); i-- > 0;) {
    OpRecord& rec = records_[i];
    if (!rec.output->grad.empty()) {
      rec.fn();
      if (!rec.output->leaf) rec.output->grad.clear();
    }
  }
}

TapeScope::TapeScope(ComputeTape* tape) : prev_(g_tape) { g_tape = tape; }

TapeScope::~TapeScope() { g_tape = prev_; }

}  // namespace ctgv
