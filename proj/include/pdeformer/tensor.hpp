#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pdeformer/errors.hpp"

namespace pdeformer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit reals. Treated as immutable once handed
// to a DiffGraph. Constructing from data rejects NaN/Inf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t extent(std::size_t i) const { return shape_[i]; }
  std::size_t rows() const { assert(rank() == 2); return shape_[0]; }
  std::size_t cols() const { assert(rank() == 2); return shape_[1]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  double scalar_value() const;  // requires size() == 1

  // Throws NumericError naming `context` if any element is NaN/Inf.
  void check_finite(const std::string& context) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Non-taped kernels. The DiffGraph ops call these, so taped and untaped
// paths compute bit-identical values.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);

// Second central difference along the sequence (row) axis with Dirichlet-zero
// ghost rows at both ends. Requires at least 2 rows.
Tensor laplacian(const Tensor& u, double dx);

// Largest singular value by power iteration on m^T m. Deterministic start
// vector derived from `seed`.
double spectral_norm(const Tensor& m, std::uint64_t seed, int iters = 50,
                     double tol = 1e-10);

double max_abs(const Tensor& t);
double l2_norm(const Tensor& t);

}  // namespace pdeformer
