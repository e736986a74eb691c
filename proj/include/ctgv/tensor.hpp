#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctgv {

using Shape = std::vector<int64_t>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

[[noreturn]] void fail(const std::string& msg);

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

// Gradient slot for one tensor. `grad` is empty until something accumulates
// into it; empty means zero everywhere. Leaf slots (parameters, grad_check
// probes) keep their gradient until zero_grad; interior slots are drained by
// the tape during backward.
struct Node {
  Node(int64_t size, bool leaf) : size(size), leaf(leaf) {}

  void accumulate(const double* g, int64_t n);

  int64_t size;
  bool leaf;
  std::vector<double> grad;
};

// Immutable dense tensor of doubles, row-major. Copies are cheap (shared
// data). A tensor participates in autodiff when it carries a Node: leaves
// get one from requires_grad_(), op outputs get one when a tape is recording
// and at least one input is tracked.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data,
         std::shared_ptr<Node> node);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

  const std::vector<double>& values() const { return *data_; }
  const std::shared_ptr<const std::vector<double>>& data_ptr() const { return data_; }
  double item() const;

  Tensor& requires_grad_();
  bool tracked() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Leaf gradient accumulated so far. Empty vector means zero.
  const std::vector<double>& grad() const;
  void zero_grad();

  Tensor detach() const { return Tensor(shape_, data_, nullptr); }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  std::shared_ptr<Node> node_;
};

// Records one backward closure per op, in execution order. backward() walks
// the records in reverse, so every consumer of a value has already deposited
// its contribution when the producing op runs. Interior gradients are
// released as soon as they have been propagated; leaf gradients accumulate
// across backward() calls until zero_grad.
class ComputeTape {
 public:
  ComputeTape() = default;
  ComputeTape(const ComputeTape&) = delete;
  ComputeTape& operator=(const ComputeTape&) = delete;

  void record(std::shared_ptr<Node> output, std::function<void()> fn);
  // Seeds d(root)/d(root) = seed on every element of root and propagates.
  void backward(const Tensor& root, double seed = 1.0);
  int64_t size() const { return static_cast<int64_t>(records_.size()); }
  void clear() { records_.clear(); }

  static ComputeTape* current();

 private:
  struct OpRecord {
    std::shared_ptr<Node> output;
    std::function<void()> fn;
  };
  std::vector<OpRecord> records_;
  friend class TapeScope;
};

// Makes a tape the recording target for the current thread while in scope.
class TapeScope {
 public:
  explicit TapeScope(ComputeTape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  ComputeTape* prev_;
};

}  // namespace ctgv
