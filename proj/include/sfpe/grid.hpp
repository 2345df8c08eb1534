#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sfpe/error.hpp"
#include "sfpe/expr.hpp"

namespace sfpe {

// Uniform tensor grid: time knots tau_k = k T / K, k = 0..K, and per-axis
// spatial knots lo_i + j (hi_i - lo_i) / (n_i - 1).
struct GridSpec {
  double T = 1.0;
  std::size_t K = 10;
  std::vector<std::size_t> n;
  std::vector<double> lo;
  std::vector<double> hi;

  static constexpr std::size_t kMaxDim = 3;

  void validate() const {
    if (!(T > 0.0)) throw Error("grid horizon must be positive");
    if (K == 0) throw Error("grid needs at least one time interval");
    if (n.empty() || n.size() > kMaxDim) throw Error("tensor grids support 1 <= d <= 3");
    if (lo.size() != n.size() || hi.size() != n.size()) throw Error("grid bounds must have d entries");
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (n[i] < 2) throw Error("grid needs at least two knots per axis");
      if (!(lo[i] < hi[i])) throw Error("grid box needs lo < hi");
    }
  }

  std::size_t d() const noexcept { return n.size(); }
  std::size_t spatial_size() const noexcept {
    std::size_t s = 1;
    for (auto ni : n) s *= ni;
    return s;
  }
  std::size_t size() const noexcept { return (K + 1) * spatial_size(); }

  double time(std::size_t k) const noexcept { return k == K ? T : T * static_cast<double>(k) / static_cast<double>(K); }
  double step(std::size_t axis) const noexcept { return (hi[axis] - lo[axis]) / static_cast<double>(n[axis] - 1); }
  double knot(std::size_t axis, std::size_t j) const noexcept {
    return j + 1 == n[axis] ? hi[axis] : lo[axis] + static_cast<double>(j) * step(axis);
  }

  // Spatial coordinates of flat spatial index j (x1 varies slowest).
  void point(std::size_t j, std::span<double> x) const {
    for (std::size_t axis = n.size(); axis-- > 0;) {
      x[axis] = knot(axis, j % n[axis]);
      j /= n[axis];
    }
  }
};

// Values on a GridSpec with multilinear interpolation in space, linear in
// time, and queries clamped to the grid box. Evaluation at a knot returns the
// stored value exactly.
class GridFunction {
 public:
  // Time cell and weight of a query time; reusable across queries at that time.
  struct TimeSlot {
    std::size_t k = 0;
    double w = 0.0;
  };

  GridFunction() = default;
  explicit GridFunction(GridSpec spec, double fill = 0.0) : spec_(std::move(spec)) {
    spec_.validate();
    values_.assign(spec_.size(), fill);
    stride_ = spec_.spatial_size();
    for (std::size_t a = 0; a < spec_.d(); ++a) inv_h_[a] = 1.0 / spec_.step(a);
  }

  template <typename Fn>
  static GridFunction sample(const GridSpec& spec, Fn&& fn) {
    GridFunction u(spec);
    std::vector<double> x(spec.d());
    for (std::size_t k = 0; k <= spec.K; ++k)
      for (std::size_t j = 0; j < spec.spatial_size(); ++j) {
        spec.point(j, x);
        u.at(k, j) = fn(spec.time(k), std::span<const double>(x));
      }
    return u;
  }

  const GridSpec& spec() const noexcept { return spec_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double& at(std::size_t k, std::size_t j) { return values_[k * stride_ + j]; }
  double at(std::size_t k, std::size_t j) const { return values_[k * stride_ + j]; }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  TimeSlot time_slot(double t) const {
    TimeSlot ts;
    const double K = static_cast<double>(spec_.K);
    locate(std::clamp(t, 0.0, spec_.T) * K / spec_.T, spec_.K + 1, ts.k, ts.w);
    return ts;
  }

  double operator()(double t, std::span<const double> x) const { return (*this)(time_slot(t), x); }

  double operator()(TimeSlot ts, std::span<const double> x) const {
    std::array<std::size_t, GridSpec::kMaxDim> cell{};
    std::array<double, GridSpec::kMaxDim> w{};
    for (std::size_t a = 0; a < spec_.d(); ++a) {
      const double s = (x[a] - spec_.lo[a]) * inv_h_[a];
      locate(std::clamp(s, 0.0, static_cast<double>(spec_.n[a] - 1)), spec_.n[a], cell[a], w[a]);
    }
    const double lower = spatial(ts.k, cell, w);
    if (ts.w == 0.0) return lower;
    return (1.0 - ts.w) * lower + ts.w * spatial(ts.k + 1, cell, w);
  }

  void write_csv(std::ostream& os) const {
    os << "t";
    for (std::size_t a = 0; a < spec_.d(); ++a) os << ",x" << (a + 1);
    os << ",u\n";
    std::vector<double> x(spec_.d());
    for (std::size_t k = 0; k <= spec_.K; ++k)
      for (std::size_t j = 0; j < spec_.spatial_size(); ++j) {
        spec_.point(j, x);
        os << expr::detail::format_number(spec_.time(k));
        for (double xi : x) os << ',' << expr::detail::format_number(xi);
        os << ',' << expr::detail::format_number(at(k, j)) << '\n';
      }
  }

  friend GridFunction operator-(const GridFunction& a, const GridFunction& b) {
    GridFunction out(a.spec_);
    for (std::size_t i = 0; i < out.values_.size(); ++i) out.values_[i] = a.values_[i] - b.values_[i];
    return out;
  }

 private:
  // Cell index and weight for a fractional knot index s in [0, n - 1].
  // Positions within 1e-12 of a knot snap to it, so knots are reproduced exactly.
  static void locate(double s, std::size_t n, std::size_t& cell, double& w) {
    const double f = std::floor(s);
    std::size_t j = static_cast<std::size_t>(f);
    double frac = s - f;
    const double tol = 1e-12 * std::max(1.0, s);
    if (frac <= tol) {
      frac = 0.0;
    } else if (1.0 - frac <= tol) {
      frac = 0.0;
      ++j;
    }
    if (j + 1 >= n) {
      cell = n - 2;
      w = 1.0;
    } else {
      cell = j;
      w = frac;
    }
  }

  double spatial(std::size_t k, const std::array<std::size_t, GridSpec::kMaxDim>& cell,
                 const std::array<double, GridSpec::kMaxDim>& w) const {
    const std::size_t d = spec_.d();
    const double* base = values_.data() + k * stride_;
    if (d == 1) {
      if (w[0] == 0.0) return base[cell[0]];
      if (w[0] == 1.0) return base[cell[0] + 1];
      return (1.0 - w[0]) * base[cell[0]] + w[0] * base[cell[0] + 1];
    }
    double acc = 0.0;
    for (std::size_t corner = 0; corner < (std::size_t{1} << d); ++corner) {
      double weight = 1.0;
      std::size_t idx = 0;
      for (std::size_t a = 0; a < d; ++a) {
        const bool up = (corner >> (d - 1 - a)) & 1u;
        const double wa = up ? w[a] : 1.0 - w[a];
        if (wa == 0.0) {
          weight = 0.0;
          break;
        }
        weight *= wa;
        idx = idx * spec_.n[a] + cell[a] + (up ? 1 : 0);
      }
      if (weight != 0.0) acc += weight * base[idx];
    }
    return acc;
  }

  GridSpec spec_;
  std::vector<double> values_;
  std::size_t stride_ = 0;
  std::array<double, GridSpec::kMaxDim> inv_h_{};
};

}  // namespace sfpe
