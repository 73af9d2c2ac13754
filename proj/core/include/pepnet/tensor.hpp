#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pepnet {

// Dense row-major f64 tensor. data().size() always equals the product of
// shape() dimensions; every op in this library keeps values finite.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  bool empty() const { return data_.empty(); }

  // 2-D accessors; rows()/cols() also treat rank-1 tensors as a single row.
  int64_t rows() const;
  int64_t cols() const;
  // Size of the last axis, and the product of all leading axes.
  int64_t last_dim() const;
  int64_t outer_dim() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  void fill(double v);

  std::string shape_str() const;

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// Which optimizer family has touched a parameter; used to assert the
// split-optimizer routing (dense params via Adam, embeddings via AdaGrad).
enum class UpdatedBy : uint8_t { kNone, kAdam, kAdagrad };

// Named trainable tensor with a persistent gradient accumulator. Gradients
// accumulate across backward calls until zero_grad().
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  UpdatedBy updated_by = UpdatedBy::kNone;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace pepnet
