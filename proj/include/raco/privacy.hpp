#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "raco/dataset.hpp"
#include "raco/error.hpp"
#include "raco/model.hpp"
#include "raco/rng.hpp"

namespace raco {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Q x K matrix of accumulated soft predictions over one mini-batch. The
/// exact variant has nonnegative entries whose row sums equal the per-cell
/// batch counts; the noisy variant has independent Laplace noise added and
/// carries no sign guarantee.
struct PredictionHistogram {
  Eigen::MatrixXd values;  // Q x K
  bool noisy = false;
  double noise_scale = 0.0;
};

/// Exact histogram H[q][k] = sum of the class-k tempered-softmax prediction
/// over batch records in partition cell q. An empty batch yields all zeros.
inline PredictionHistogram compute_histogram(const PartitionedDataset& data,
                                             std::span<const int> batch,
                                             const LinearModel& m, double tau,
                                             SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  PredictionHistogram h;
  h.values = Eigen::MatrixXd::Zero(data.num_cells, data.num_classes);
  for (int r : batch) {
    h.values.row(data.cell[r]) +=
        soft_predict(m, data.features.row(r).transpose(), tau, sign).transpose();
  }
  return h;
}

/// Laplace mechanism on the histogram: adds i.i.d. Laplace(scale) noise per
/// entry. The histogram's L1 sensitivity to one record is 1 (each record
/// lives in one cell and its softmax mass sums to 1), so scale b yields
/// (1/b)-DP per release before subsampling amplification.
inline PredictionHistogram privatize_histogram(const PredictionHistogram& h,
                                               double scale, RngStream& rng) {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ConfigError("privatize_histogram: scale must be positive and finite");
  PredictionHistogram out;
  out.values = h.values;
  out.noisy = true;
  out.noise_scale = scale;
  for (Eigen::Index q = 0; q < out.values.rows(); ++q)
    for (Eigen::Index k = 0; k < out.values.cols(); ++k)
      out.values(q, k) += rng.laplace(scale);
  return out;
}

/// Empirically probes the histogram's L1 sensitivity: draws random batches,
/// removes (or adds) one record, and returns the max L1 difference between
/// neighboring histograms. Must come out <= 1 up to rounding.
inline double histogram_sensitivity_check(const PartitionedDataset& data,
                                          const LinearModel& m, double tau,
                                          int trials, RngStream& rng,
                                          SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  if (trials < 1) throw ConfigError("histogram_sensitivity_check: trials must be >= 1");
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const double rate = 0.05 + 0.9 * rng.uniform();
    MiniBatch batch = poisson_sample(data, rate, rng);
    const auto base = compute_histogram(data, batch.indices, m, tau, sign);
    // Neighbor: flip one random record's membership.
    const int victim = static_cast<int>(rng.below(static_cast<std::uint64_t>(data.n())));
    std::vector<int> neighbor = batch.indices;
    const auto it = std::find(neighbor.begin(), neighbor.end(), victim);
    if (it != neighbor.end()) neighbor.erase(it);
    else neighbor.push_back(victim);
    const auto alt = compute_histogram(data, neighbor, m, tau, sign);
    worst = std::max(worst, (base.values - alt.values).cwiseAbs().sum());
  }
  return worst;
}

/// L2-norm clipping: returns g unchanged if ||g|| <= bound, else rescales to
/// norm `bound`. The rescale loops until the recomputed norm actually sits
/// at or below the bound (one extra ulp-sized multiply at most), which makes
/// clipping exactly idempotent. bound may be +inf (no-op).
template <typename Derived>
void clip_in_place(Eigen::MatrixBase<Derived>& g, double bound) {
  if (!(bound > 0.0)) throw ConfigError("clip: bound must be > 0");
  double norm = g.norm();
  while (norm > bound) {
    g *= (bound / norm);
    norm = g.norm();
  }
}

template <typename Derived>
Eigen::MatrixXd clip(const Eigen::MatrixBase<Derived>& g, double bound) {
  Eigen::MatrixXd out = g;
  clip_in_place(out, bound);
  return out;
}

/// i.i.d. N(0, sigma^2) vector; sigma = 0 yields exact zeros.
inline Eigen::VectorXd gaussian_noise(Eigen::Index dim, double sigma, RngStream& rng) {
  if (sigma < 0.0) throw ConfigError("gaussian_noise: sigma must be >= 0");
  Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
  if (sigma == 0.0) return z;
  for (Eigen::Index i = 0; i < dim; ++i) z[i] = rng.gaussian(sigma);
  return z;
}

// --- privacy accounting -------------------------------------------------------

/// All Algorithm inputs that the privacy guarantee depends on. `b` is the
/// Laplace scale on the histogram; the special value +inf means histogram
/// noise is off (the run is NOT differentially private). Likewise sigma = 0
/// and clip = +inf are the non-private settings.
struct PrivacyConfig {
  double epsilon = 0.0;        // target budget (0 = not certified)
  double delta = 0.0;
  double sigma = 0.0;          // Gaussian std-dev added to the clipped sum
  double b = kInf;             // Laplace scale on the histogram
  double clip = kInf;          // C: per-sample bound is C / (r |D|)
  double sampling_rate = 1.0;  // r
  std::int64_t steps = 1;      // T

  bool histogram_noise_on() const { return std::isfinite(b); }
  bool certified() const {
    return histogram_noise_on() && sigma > 0.0 && std::isfinite(clip) &&
           epsilon > 0.0;
  }
};

struct Calibration {
  double sigma_min = 0.0;
  double b_min = 0.0;
};

/// Smallest certified (sigma, b) for running T steps at sampling rate r with
/// clipping norm C on a dataset of size n under an (epsilon, delta) budget:
///   b     >= 2  max{ 1/eps, r sqrt(T log(T/delta)) / eps }
///   sigma >= 10 max{ C log(T/delta) / (r n eps), C sqrt(T) log(T/delta) / (n eps) }
/// Logs are natural. Any (sigma, b) dominating these is (epsilon, delta)-DP.
inline Calibration calibrate_closed_form(double epsilon, double delta, double r,
                                         std::int64_t steps, double clip_norm,
                                         std::int64_t dataset_size) {
  if (!(epsilon > 0.0)) throw ConfigError("calibrate: epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("calibrate: delta must be in (0,1)");
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("calibrate: r must be in (0,1]");
  if (steps < 1) throw ConfigError("calibrate: steps must be >= 1");
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm))
    throw ConfigError("calibrate: clip norm must be positive and finite");
  if (dataset_size < 1) throw ConfigError("calibrate: dataset size must be >= 1");

  const double t = static_cast<double>(steps);
  const double n = static_cast<double>(dataset_size);
  const double log_term = std::log(t / delta);
  Calibration c;
  c.b_min = 2.0 * std::max(1.0 / epsilon, r * std::sqrt(t * log_term) / epsilon);
  c.sigma_min = 10.0 * std::max(clip_norm * log_term / (r * n * epsilon),
                                clip_norm * std::sqrt(t) * log_term / (n * epsilon));
  return c;
}

/// Largest T whose calibration is dominated by the provided (sigma, b), or
/// nullopt when even T = 1 is infeasible. Both minima are nondecreasing in T,
/// so this is a monotone binary search.
inline std::optional<std::int64_t> steps_for_budget(double epsilon, double delta,
                                                    double r, double sigma, double b,
                                                    double clip_norm,
                                                    std::int64_t dataset_size) {
  const auto feasible = [&](std::int64_t t) {
    const Calibration c = calibrate_closed_form(epsilon, delta, r, t, clip_norm, dataset_size);
    return sigma >= c.sigma_min && b >= c.b_min;
  };
  if (!feasible(1)) return std::nullopt;
  std::int64_t lo = 1, hi = 2;
  constexpr std::int64_t kMaxSteps = std::int64_t(1) << 40;
  while (hi < kMaxSteps && feasible(hi)) {
    lo = hi;
    hi *= 2;
  }
  if (hi >= kMaxSteps) return kMaxSteps;
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    (feasible(mid) ? lo : hi) = mid;
  }
  return lo;
}

/// Privacy accountant interface. The closed-form accountant below implements
/// the composition bound this library certifies; tighter numerical
/// accountants can be plugged in behind the same interface.
class Accountant {
 public:
  virtual ~Accountant() = default;

  /// Minimal certified noise for T steps.
  virtual Calibration calibrate(std::int64_t steps) const = 0;

  /// Max steps the given noise supports, or nullopt if infeasible.
  virtual std::optional<std::int64_t> max_steps(double sigma, double b) const = 0;

  /// Smallest epsilon certified for the given noise after `steps` steps
  /// (holding delta fixed); +inf if the run is not certifiable.
  virtual double epsilon_spent(double sigma, double b, std::int64_t steps) const = 0;
};

class ClosedFormAccountant final : public Accountant {
 public:
  ClosedFormAccountant(double epsilon, double delta, double sampling_rate,
                       double clip_norm, std::int64_t dataset_size)
      : epsilon_(epsilon), delta_(delta), r_(sampling_rate), clip_(clip_norm),
        n_(dataset_size) {}

  Calibration calibrate(std::int64_t steps) const override {
    return calibrate_closed_form(epsilon_, delta_, r_, steps, clip_, n_);
  }

  std::optional<std::int64_t> max_steps(double sigma, double b) const override {
    return steps_for_budget(epsilon_, delta_, r_, sigma, b, clip_, n_);
  }

  double epsilon_spent(double sigma, double b, std::int64_t steps) const override {
    if (!(sigma > 0.0) || !std::isfinite(b) || !std::isfinite(clip_)) return kInf;
    // Both bounds scale as 1/epsilon, so the spent budget is the max of the
    // two rearranged constraints.
    const Calibration at_one = calibrate_closed_form(1.0, delta_, r_, steps, clip_, n_);
    return std::max(at_one.b_min / b, at_one.sigma_min / sigma);
  }

  double epsilon() const { return epsilon_; }
  double delta() const { return delta_; }

 private:
  double epsilon_, delta_, r_, clip_;
  std::int64_t n_;
};

}  // namespace raco
