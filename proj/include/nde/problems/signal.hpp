#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nde/error.hpp"

namespace nde {

/// Sampled exogenous input held constant over each cell [kΔ, (k+1)Δ).
/// Before t = 0 the first sample applies; past the end, the last one.
class ControlSignal {
 public:
  ControlSignal() = default;
  ControlSignal(std::vector<double> samples, double period)
      : samples_(std::move(samples)), period_(period) {
    if (samples_.empty()) throw InputError("ControlSignal: no samples");
    if (!(period_ > 0.0)) throw InputError("ControlSignal: period must be positive");
    prefix_.resize(samples_.size() + 1);
    prefix_[0] = 0.0;
    for (std::size_t k = 0; k < samples_.size(); ++k) prefix_[k + 1] = prefix_[k] + period_ * samples_[k];
  }

  const std::vector<double>& samples() const { return samples_; }
  double period() const { return period_; }
  std::size_t size() const { return samples_.size(); }
  /// S_k = Δ·Σ_{j<k} u_j.
  const std::vector<double>& prefix() const { return prefix_; }

  double value(double t) const { return samples_[cell(t)]; }

  /// Exact ∫_0^t u, extended linearly with u_0 below 0 and u_last past the end.
  double running_integral(double t) const {
    if (t < 0.0) return samples_.front() * t;
    const double end = period_ * static_cast<double>(samples_.size());
    if (t >= end) return prefix_.back() + samples_.back() * (t - end);
    const std::size_t k = cell(t);
    return prefix_[k] + samples_[k] * (t - period_ * static_cast<double>(k));
  }

  /// ∫_{t−window}^{t} u.
  double integral(double t, double window) const {
    if (window < 0.0) throw InputError("ControlSignal::integral: negative window");
    if (window == 0.0) return 0.0;
    return running_integral(t) - running_integral(t - window);
  }

 private:
  std::size_t cell(double t) const {
    if (t < 0.0) return 0;
    const auto k = static_cast<std::size_t>(std::floor(t / period_));
    return std::min(k, samples_.size() - 1);
  }

  std::vector<double> samples_;
  double period_ = 1.0;
  std::vector<double> prefix_;
};

}  // namespace nde
