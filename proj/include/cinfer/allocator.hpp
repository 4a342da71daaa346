#ifndef CINFER_ALLOCATOR_HPP
#define CINFER_ALLOCATOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cinfer::allocator {

/// Per-service cycle demand Lambda_m: offloaded task cycles, one backlog
/// charge per member device, and half of every other member's offloaded
/// cycles as waiting time. `offload[i] == 0` means device i offloads.
inline double service_load(std::span<const int> offload, std::span<const double> task_bits,
                           double edge_backlog_bits, double eta_uncompressed) {
  double offered = 0;
  for (std::size_t i = 0; i < offload.size(); ++i)
    if (offload[i] == 0) offered += task_bits[i];
  double load = 0;
  for (std::size_t n = 0; n < offload.size(); ++n) {
    const double own = offload[n] == 0 ? task_bits[n] : 0.0;
    load += eta_uncompressed * own + edge_backlog_bits * eta_uncompressed +
            0.5 * eta_uncompressed * (offered - own);
  }
  return load;
}

struct allocation {
  std::vector<double> shares;
  bool degenerate = false;  // every load was zero; shares are uniform
};

/// Square-root proportional split c_m = sqrt(L_m) / sum_j sqrt(L_j). Services
/// with zero load get nothing.
inline allocation optimal_allocation(std::span<const double> loads) {
  allocation out;
  out.shares.assign(loads.size(), 0.0);
  double total = 0;
  for (double l : loads) {
    if (!(l >= 0)) throw std::invalid_argument("optimal_allocation: negative load");
    if (l > 0) total += std::sqrt(l);
  }
  if (total == 0) {
    out.degenerate = true;
    std::fill(out.shares.begin(), out.shares.end(), 1.0 / static_cast<double>(loads.size()));
    return out;
  }
  for (std::size_t m = 0; m < loads.size(); ++m)
    if (loads[m] > 0) out.shares[m] = std::sqrt(loads[m]) / total;
  return out;
}

/// Objective sum_m L_m / (c_m f_b); services with zero load contribute zero.
inline double edge_objective(std::span<const double> loads, std::span<const double> shares,
                             double edge_cpu_hz) {
  double obj = 0;
  for (std::size_t m = 0; m < loads.size(); ++m) {
    if (loads[m] == 0) continue;
    if (shares[m] <= 0) return std::numeric_limits<double>::infinity();
    obj += loads[m] / (shares[m] * edge_cpu_hz);
  }
  return obj;
}

class oracle_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Euclidean projection of v onto {x >= floor, sum x = 1}.
inline std::vector<double> project_simplex(std::vector<double> v, double floor) {
  const std::size_t n = v.size();
  const double mass = 1.0 - floor * static_cast<double>(n);
  for (double& x : v) x -= floor;
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumsum = 0, theta = 0;
  for (std::size_t i = 0; i < n; ++i) {
    cumsum += sorted[i];
    const double t = (cumsum - mass) / static_cast<double>(i + 1);
    if (sorted[i] - t > 0) theta = t;
  }
  for (double& x : v) x = std::max(x - theta, 0.0) + floor;
  return v;
}

}  // namespace detail

struct oracle_options {
  double tolerance = 1e-9;      // relative duality gap at exit
  std::size_t max_iterations = 100000;
};

/// Independent numerical solution of the edge allocation problem by projected
/// gradient descent with backtracking. The exit test is the Frank-Wolfe gap
/// sum_m c_m g_m - min_m g_m, an upper bound on the objective suboptimality.
inline std::vector<double> oracle_allocation(std::span<const double> loads,
                                             oracle_options opts = {}) {
  std::vector<std::size_t> active;
  for (std::size_t m = 0; m < loads.size(); ++m) {
    if (!(loads[m] >= 0)) throw std::invalid_argument("oracle_allocation: negative load");
    if (loads[m] > 0) active.push_back(m);
  }
  std::vector<double> result(loads.size(), 0.0);
  if (active.empty()) {
    std::fill(result.begin(), result.end(), 1.0 / static_cast<double>(loads.size()));
    return result;
  }

  const std::size_t n = active.size();
  std::vector<double> w(n);
  double scale = 0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, loads[active[i]]);
  for (std::size_t i = 0; i < n; ++i) w[i] = loads[active[i]] / scale;

  auto objective = [&](const std::vector<double>& c) {
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) f += w[i] / c[i];
    return f;
  };
  const double floor = 1e-12;
  std::vector<double> c(n, 1.0 / static_cast<double>(n)), grad(n);
  double f = objective(c);
  double gap = std::numeric_limits<double>::infinity();

  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    double lin = 0, gmin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      grad[i] = -w[i] / (c[i] * c[i]);
      lin += c[i] * grad[i];
      gmin = std::min(gmin, grad[i]);
    }
    gap = lin - gmin;
    if (gap <= opts.tolerance * f) {
      for (std::size_t i = 0; i < n; ++i) result[active[i]] = c[i];
      return result;
    }

    // Newton step on the affine hull of the simplex: the Hessian is the
    // diagonal 2 w_i / c_i^3, and the multiplier keeps the step summing to
    // zero. The step length stays below half the distance to the boundary.
    std::vector<double> d(n);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double inv_h = c[i] * c[i] * c[i] / (2.0 * w[i]);
      num += grad[i] * inv_h;
      den += inv_h;
    }
    const double mu = num / den;
    double slope = 0, step = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = -(grad[i] - mu) * c[i] * c[i] * c[i] / (2.0 * w[i]);
      slope += grad[i] * d[i];
      if (d[i] < 0) step = std::min(step, -0.5 * c[i] / d[i]);
    }
    std::vector<double> trial(n);
    for (;;) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = std::max(c[i] + step * d[i], floor);
      const double ft = objective(trial);
      // a predicted decrease below the rounding of f is accepted as is
      if (ft <= f + 1e-4 * step * slope || -step * slope <= 1e-15 * f) {
        c = trial;
        f = ft;
        break;
      }
      step *= 0.5;
    }
  }

  std::ostringstream msg;
  msg << "oracle_allocation: no convergence after " << opts.max_iterations
      << " iterations (relative gap " << gap / f << ", loads:";
  for (double l : loads) msg << ' ' << l;
  msg << ')';
  throw oracle_error(msg.str());
}

}  // namespace cinfer::allocator

#endif  // CINFER_ALLOCATOR_HPP
