#include "pdeformer/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pdeformer/rng.hpp"

namespace pdeformer {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {
std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e == 0) throw ShapeError("tensor extent must be positive, shape " + shape_str(s));
    n *= e;
  }
  return n;
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
  }
  check_finite("tensor construction");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  t.check_finite("tensor construction");
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("expected scalar, got shape " + shape_str(shape_));
  return data_[0];
}

void Tensor::check_finite(const std::string& context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(context + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c.data()[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      const double* brow = &b.data()[p * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("transpose expects rank-2, got " + shape_str(m.shape()));
  Tensor t({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Tensor laplacian(const Tensor& u, double dx) {
  if (u.rank() != 2 || u.rows() < 2) {
    throw ShapeError("laplacian needs a rank-2 field with >= 2 rows, got " +
                     shape_str(u.shape()));
  }
  if (!(dx > 0.0)) throw ShapeError("laplacian requires dx > 0");
  const std::size_t s = u.rows(), d = u.cols();
  const double inv = 1.0 / (dx * dx);
  Tensor out({s, d});
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double up = (i + 1 < s) ? u(i + 1, j) : 0.0;
      const double dn = (i > 0) ? u(i - 1, j) : 0.0;
      out(i, j) = (up - 2.0 * u(i, j) + dn) * inv;
    }
  }
  return out;
}

double spectral_norm(const Tensor& m, std::uint64_t seed, int iters, double tol) {
  if (m.rank() != 2) throw ShapeError("spectral_norm expects rank-2");
  const std::size_t n = m.cols();
  Rng rng = Rng::derive(seed, "spectral_norm");
  std::vector<double> v(n);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.gaussian();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) return 0.0;
  for (auto& x : v) x /= norm;

  double sigma = 0.0;
  std::vector<double> mv(m.rows()), w(n);
  for (int it = 0; it < iters; ++it) {
    // w = m^T (m v)
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += m(i, j) * v[j];
      mv[i] = acc;
    }
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) acc += m(i, j) * mv[i];
      w[j] = acc;
    }
    double wnorm = 0.0;
    for (double x : w) wnorm += x * x;
    wnorm = std::sqrt(wnorm);
    if (wnorm == 0.0) return 0.0;
    const double next = std::sqrt(wnorm);
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / wnorm;
    if (std::abs(next - sigma) < tol) return next;
    sigma = next;
  }
  return sigma;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double x : t.data()) m = std::max(m, std::abs(x));
  return m;
}

double l2_norm(const Tensor& t) {
  double s = 0.0;
  for (double x : t.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace pdeformer
