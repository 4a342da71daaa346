#ifndef CINFER_LYAPUNOV_HPP
#define CINFER_LYAPUNOV_HPP

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace cinfer::lyapunov {

/// Accuracy deficit queues, one per service. A backlog that stays bounded
/// certifies the long-term accuracy constraint.
struct deficit_state {
  std::vector<double> z;
  std::vector<double> acc_min;
  std::vector<double> drift_const;  // C_m = (A_th - A_min)^2 / 2
  double v = 0.05;
};

inline double update_deficit(double z, double threshold, double accuracy) {
  return std::max(threshold - accuracy + z, 0.0);
}

inline double lyapunov_value(double z) { return 0.5 * z * z; }

inline double drift_constant(double threshold, double acc_min) {
  const double gap = threshold - acc_min;
  return 0.5 * gap * gap;
}

struct drift_check {
  double drift = 0;
  double bound = 0;
  bool holds = false;
};

inline constexpr double drift_tolerance = 1e-12;

/// One-slot drift against its upper bound C + Z (A_th - A). Diagnostic only;
/// accuracy below the configured floor means the accuracy model and the
/// constant disagree.
inline drift_check drift_bound_check(double z, double accuracy, double threshold,
                                     double drift_const, double acc_min) {
  if (accuracy < acc_min - 1e-12)
    throw std::domain_error("drift_bound_check: accuracy below configured minimum");
  const double next = update_deficit(z, threshold, accuracy);
  drift_check out;
  out.drift = lyapunov_value(next) - lyapunov_value(z);
  out.bound = drift_const + z * (threshold - accuracy);
  out.holds = out.drift <= out.bound + drift_tolerance;
  return out;
}

/// Drift-plus-cost reward. The constant sum of C_m is left out.
inline double reward(double delay, std::span<const double> z, std::span<const double> accuracy,
                     std::span<const double> threshold, double v) {
  double r = -v * delay;
  for (std::size_t m = 0; m < z.size(); ++m) r -= z[m] * (threshold[m] - accuracy[m]);
  return r;
}

/// -V D minus the realized drift sum_m (Z'_m^2 - Z_m^2) / 2.
inline double exact_drift_reward(double delay, std::span<const double> z,
                                 std::span<const double> z_next, double v) {
  double r = -v * delay;
  for (std::size_t m = 0; m < z.size(); ++m) r -= lyapunov_value(z_next[m]) - lyapunov_value(z[m]);
  return r;
}

}  // namespace cinfer::lyapunov

#endif  // CINFER_LYAPUNOV_HPP
