#ifndef EXCURSIM_KERNELS_HPP
#define EXCURSIM_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace excursim {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// Piecewise-linear table on a sorted grid, zero outside the grid span.
struct PiecewiseLinear {
  std::vector<double> grid;
  std::vector<double> values;

  double operator()(double x) const {
    if (grid.size() < 2 || x <= grid.front() || x >= grid.back()) {
      // endpoints carry their tabulated value; beyond them the table is 0
      if (!grid.empty() && x == grid.front()) return values.front();
      if (!grid.empty() && x == grid.back()) return values.back();
      return 0.0;
    }
    const auto it = std::upper_bound(grid.begin(), grid.end(), x);
    const std::size_t i = static_cast<std::size_t>(it - grid.begin()) - 1;
    const double w = (x - grid[i]) / (grid[i + 1] - grid[i]);
    return values[i] + w * (values[i + 1] - values[i]);
  }
};

// The smoothing kernel h.  Gaussian form h(y) = exp(-y^2 / 2 width^2) keeps
// the induced correlation in closed form; the tabulated form covers anything
// square-integrable that decays to zero at the grid ends.
struct SmoothingKernel {
  enum class Form { gaussian, tabulated };

  Form form = Form::gaussian;
  double width = 1.0;
  PiecewiseLinear table;

  static SmoothingKernel gaussian(double width) {
    if (!(width > 0.0)) throw std::invalid_argument("kernel: width must be positive");
    SmoothingKernel k;
    k.form = Form::gaussian;
    k.width = width;
    return k;
  }

  static SmoothingKernel tabulated(std::vector<double> grid, std::vector<double> values) {
    if (grid.size() < 2 || grid.size() != values.size())
      throw std::invalid_argument("kernel: table needs >= 2 aligned grid points");
    if (!std::is_sorted(grid.begin(), grid.end()))
      throw std::invalid_argument("kernel: table grid must be sorted");
    SmoothingKernel k;
    k.form = Form::tabulated;
    k.table = PiecewiseLinear{std::move(grid), std::move(values)};
    return k;
  }

  double operator()(double y) const {
    if (form == Form::gaussian) return std::exp(-y * y / (2.0 * width * width));
    return table(y);
  }
};

// rho(x) = int h(y - x) h(y) dy.  Gaussian kernels use the closed form
// width * sqrt(pi) * exp(-x^2 / 4 width^2); tables use the trapezoid rule on
// their own grid with h(y - x) interpolated.
inline double rho_from_h(const SmoothingKernel& kernel, double x) {
  if (kernel.form == SmoothingKernel::Form::gaussian) {
    const double w = kernel.width;
    return w * std::sqrt(kPi) * std::exp(-x * x / (4.0 * w * w));
  }
  const auto& g = kernel.table.grid;
  const auto& v = kernel.table.values;
  if (g.size() < 2) throw std::invalid_argument("rho_from_h: invalid tabulated kernel");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    const double f0 = kernel.table(g[i] - x) * v[i];
    const double f1 = kernel.table(g[i + 1] - x) * v[i + 1];
    acc += 0.5 * (f0 + f1) * (g[i + 1] - g[i]);
  }
  return acc;
}

// The pair correlation rho of the flow.  Evaluation must be cheap (it is hit
// k^2 times per flow step), so tabulated kernels precompute rho on a dense
// grid at construction and interpolate afterwards.
struct CorrelationFunction {
  double rho0 = 0.0;
  double second_derivative_bound = 0.0;
  bool gaussian = true;
  double width = 1.0;
  PiecewiseLinear rho_table;  // tabulated branch only; holds rho, not h

  static CorrelationFunction from_kernel(const SmoothingKernel& kernel) {
    CorrelationFunction c;
    if (kernel.form == SmoothingKernel::Form::gaussian) {
      c.gaussian = true;
      c.width = kernel.width;
      c.rho0 = rho_from_h(kernel, 0.0);
      // |rho''| peaks at the origin for the Gaussian family
      c.second_derivative_bound = c.rho0 / (2.0 * kernel.width * kernel.width);
      return c;
    }
    c.gaussian = false;
    const auto& g = kernel.table.grid;
    const double span = g.back() - g.front();
    const std::size_t n = std::max<std::size_t>(4 * g.size(), 256);
    std::vector<double> xs(2 * n + 1), ys(2 * n + 1);
    for (std::size_t i = 0; i <= 2 * n; ++i) {
      // symmetrize: average rho(x) and rho(-x) so the table is even even if
      // the kernel grid is not
      const double x = -span + static_cast<double>(i) * (span / static_cast<double>(n));
      xs[i] = x;
      ys[i] = 0.5 * (rho_from_h(kernel, x) + rho_from_h(kernel, -x));
    }
    c.rho_table = PiecewiseLinear{std::move(xs), std::move(ys)};
    c.rho0 = c.rho_table(0.0);
    if (!(c.rho0 > 0.0)) throw std::invalid_argument("correlation: rho(0) must be positive");
    double bound = 0.0;
    const double h2 = (span / static_cast<double>(n));
    for (std::size_t i = 1; i + 1 < c.rho_table.grid.size(); ++i) {
      const double d2 = (c.rho_table.values[i + 1] - 2.0 * c.rho_table.values[i] +
                         c.rho_table.values[i - 1]) /
                        (h2 * h2);
      bound = std::max(bound, std::fabs(d2));
    }
    c.second_derivative_bound = bound;
    return c;
  }

  double operator()(double x) const {
    if (gaussian) return rho0 * std::exp(-x * x / (4.0 * width * width));
    return rho_table(x);
  }
};

// Dense symmetric matrix, row-major.  Small: flow ensembles rarely exceed a
// few hundred distinct positions.
struct Matrix {
  std::size_t n = 0;
  std::vector<double> a;

  Matrix() = default;
  explicit Matrix(std::size_t size) : n(size), a(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

inline Matrix correlation_matrix(const CorrelationFunction& rho,
                                 const std::vector<double>& positions) {
  const std::size_t n = positions.size();
  Matrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    m(i, i) = rho.rho0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double r = rho(positions[i] - positions[j]);
      m(i, j) = r;
      m(j, i) = r;
    }
  }
  return m;
}

// Lower-triangular Cholesky factor of a PSD matrix.  Duplicate positions make
// the correlation matrix exactly singular; the flow dedups those first, so a
// failure here gets the jitter treatment: eps = 1e-10 rho(0) on the diagonal,
// doubled up to three times, then a hard error naming the positions.
inline bool cholesky_in_place(Matrix& m) {
  const std::size_t n = m.n;
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= m(j, k) * m(j, k);
    if (!(d > 0.0)) return false;
    const double root = std::sqrt(d);
    m(j, j) = root;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= m(i, k) * m(j, k);
      m(i, j) = s / root;
    }
    for (std::size_t k = j + 1; k < n; ++k) m(j, k) = 0.0;
  }
  return true;
}

inline Matrix cholesky_psd(const Matrix& input, double rho0,
                           const std::vector<double>* positions = nullptr) {
  Matrix m = input;
  if (cholesky_in_place(m)) return m;
  double eps = 1e-10 * rho0;
  for (int attempt = 0; attempt < 4; ++attempt, eps *= 2.0) {
    m = input;
    for (std::size_t i = 0; i < m.n; ++i) m(i, i) += eps;
    if (cholesky_in_place(m)) return m;
  }
  std::ostringstream msg;
  msg << "cholesky_psd: matrix not PSD after jitter retries";
  if (positions) {
    msg << "; positions =";
    for (double p : *positions) msg << ' ' << p;
  }
  throw std::runtime_error(msg.str());
}

}  // namespace excursim

#endif  // EXCURSIM_KERNELS_HPP
