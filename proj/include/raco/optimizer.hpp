#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raco/constraints.hpp"
#include "raco/dataset.hpp"
#include "raco/error.hpp"
#include "raco/model.hpp"
#include "raco/privacy.hpp"
#include "raco/rng.hpp"

namespace raco {

/// Dual variables and their box domain [0, lambda_max]^J.
struct DualState {
  Eigen::VectorXd lambda;
  double lambda_max = 10.0;

  void project() {
    lambda = lambda.cwiseMax(0.0).cwiseMin(lambda_max);
  }
};

/// How the dual ascent direction is computed. The private mode reads only
/// the (noisy) histogram -- free under DP post-processing. Hard rates read
/// raw batch records and are only legal when all noise is off.
enum class DualMode { kPrivateHistogram, kHardRates };

// --- per-sample gradient pieces ----------------------------------------------

/// Per-cell regularizer coefficients derived from the histogram: row q holds
/// the K-vector c with c[k] = sum over constraints j and subsets I containing
/// q of lambda_j * alpha(j, I, k) / max(total histogram mass of I, kappa).
/// A batch record in cell q then contributes sum_k c[k] * grad sigma_k.
inline Eigen::MatrixXd regularizer_coefficients(const Eigen::VectorXd& lambda,
                                                const Eigen::Ref<const Eigen::MatrixXd>& hist,
                                                const ConstraintSet& set,
                                                double kappa) {
  Eigen::MatrixXd coef = Eigen::MatrixXd::Zero(set.num_cells, set.num_classes);
  for (std::size_t j = 0; j < set.size(); ++j) {
    const double lj = lambda[static_cast<Eigen::Index>(j)];
    if (lj == 0.0) continue;
    const RateConstraint& c = set.constraints[j];
    for (std::size_t s = 0; s < c.subsets.size(); ++s) {
      double mass = 0.0;
      for (int q : c.subsets[s]) mass += hist.row(q).sum();
      const double w = lj / std::max(mass, kappa);
      for (int q : c.subsets[s])
        coef.row(q) += w * c.alpha.row(static_cast<Eigen::Index>(s));
    }
  }
  return coef;
}

/// Gradient of sum_k coef[k] * sigma_tau(Wx)_k with respect to W, exploiting
/// the softmax Jacobian structure: a rank-one K x d matrix.
inline Eigen::MatrixXd weighted_soft_prediction_grad(
    const LinearModel& m, const Eigen::Ref<const Eigen::VectorXd>& x,
    const Eigen::Ref<const Eigen::VectorXd>& coef, double tau, SoftmaxSign sign) {
  const Eigen::VectorXd p = soft_predict(m, x, tau, sign);
  const double s = (sign == SoftmaxSign::kScoreAsCost) ? -tau : tau;
  const double inner = coef.dot(p);
  const Eigen::VectorXd u = s * (p.array() * (coef.array() - inner)).matrix();
  return u * x.transpose();
}

/// The regularizer part of the per-sample gradient: the record's cell
/// membership resolves the subset indicators, the histogram supplies the
/// (noisy) local-dataset sizes in the denominators (floored at kappa).
/// With lambda = 0 this is exactly zero and plain DP-SGD is recovered.
inline Eigen::MatrixXd per_sample_regularizer_grad(
    const LinearModel& m, const Eigen::VectorXd& lambda,
    const Eigen::Ref<const Eigen::MatrixXd>& hist,
    const Eigen::Ref<const Eigen::VectorXd>& x, int cell,
    const ConstraintSet& set, double kappa) {
  if (cell < 0 || cell >= set.num_cells)
    throw ConfigError("per_sample_regularizer_grad: cell index out of range");
  const Eigen::MatrixXd coef = regularizer_coefficients(lambda, hist, set, kappa);
  return weighted_soft_prediction_grad(m, x, coef.row(cell).transpose(), set.tau,
                                       set.sign);
}

// --- update steps -------------------------------------------------------------

/// One private primal update: per-sample gradients (loss term scaled by
/// 1/(r|D|) plus the histogram-based regularizer term) are clipped to
/// C/(r|D|) individually, summed over the batch, Gaussian-noised and applied.
/// An empty batch applies pure noise.
inline void primal_step(LinearModel& m, const PartitionedDataset& data,
                        std::span<const int> batch, const Eigen::VectorXd& lambda,
                        const Eigen::Ref<const Eigen::MatrixXd>& hist,
                        const ConstraintSet& set, const PrivacyConfig& pcfg,
                        double eta_theta, double kappa, RngStream& noise) {
  const double denom = pcfg.sampling_rate * static_cast<double>(data.n());
  const double loss_scale = 1.0 / denom;
  const double bound = pcfg.clip / denom;

  const bool has_reg = lambda.size() > 0 && lambda.maxCoeff() > 0.0;
  Eigen::MatrixXd coef;
  if (has_reg) coef = regularizer_coefficients(lambda, hist, set, kappa);

  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(m.weights.rows(), m.weights.cols());
  for (int r : batch) {
    const auto x = data.features.row(r).transpose();
    Eigen::MatrixXd g = loss_scale * loss_and_grad(m, x, data.labels[r]).second;
    if (has_reg)
      g += weighted_soft_prediction_grad(m, x, coef.row(data.cell[r]).transpose(),
                                         set.tau, set.sign);
    clip_in_place(g, bound);
    total += g;
  }
  if (pcfg.sigma > 0.0) {
    const Eigen::VectorXd z =
        gaussian_noise(m.weights.size(), pcfg.sigma, noise);
    total += Eigen::Map<const Eigen::MatrixXd>(z.data(), m.weights.rows(),
                                               m.weights.cols());
  }
  if (!total.allFinite())
    throw NumericError("primal_step: non-finite gradient (|theta| = " +
                       std::to_string(m.weights.norm()) + ", |lambda| = " +
                       std::to_string(lambda.size() ? lambda.sum() : 0.0) + ")");
  m.weights -= eta_theta * total;
}

/// Dual ascent from the histogram alone. By construction this function has
/// no access to batch records -- the only data-dependent input is the
/// already-privatized histogram, so the update is free under DP
/// post-processing.
inline void dual_step(DualState& dual, const PredictionHistogram& hist,
                      const ConstraintSet& set, double kappa, double eta_lambda) {
  const Eigen::VectorXd gamma_post = evaluate_from_histogram(set, hist.values, kappa);
  dual.lambda += eta_lambda * (gamma_post - set.gammas());
  dual.project();
}

/// Dual ascent from hard rates on the raw batch. Outside the DP guarantee;
/// the trainer refuses to combine this with any noise. Constraints whose
/// local datasets are empty in the batch keep their multiplier unchanged;
/// an empty batch is a no-op.
inline void dual_step_hard(DualState& dual, const PartitionedDataset& data,
                           std::span<const int> batch, const LinearModel& m,
                           const ConstraintSet& set, double eta_lambda) {
  if (batch.empty()) return;
  const auto acc = detail::accumulate_cells(data, batch, m, set.tau, set.sign,
                                            RateMode::kHard);
  for (std::size_t j = 0; j < set.size(); ++j) {
    const RateConstraint& c = set.constraints[j];
    double value = 0.0;
    bool defined = true;
    for (std::size_t s = 0; s < c.subsets.size(); ++s) {
      double mass = 0.0;
      Eigen::VectorXd class_sum = Eigen::VectorXd::Zero(set.num_classes);
      for (int q : c.subsets[s]) {
        mass += acc.counts[q];
        class_sum += acc.sums.row(q).transpose();
      }
      if (mass == 0.0) {
        defined = false;
        break;
      }
      value += c.alpha.row(static_cast<Eigen::Index>(s)).dot(class_sum) / mass;
    }
    if (defined)
      dual.lambda[static_cast<Eigen::Index>(j)] += eta_lambda * (value - c.gamma);
  }
  dual.project();
}

// --- training loop ------------------------------------------------------------

struct TrainerOptions {
  double eta_theta = 0.05;
  double eta_lambda = 0.05;
  double kappa = 1.0;
  double lambda_max = 10.0;
  std::int64_t log_every = 10;
  DualMode dual_mode = DualMode::kPrivateHistogram;
  std::uint64_t seed = 1;
};

/// One logged evaluation of a model on a dataset split.
struct EvalReport {
  double error = 0.0;
  double avg_loss = 0.0;
  Eigen::VectorXd hard_gamma;  // per-constraint hard-rate values
  double max_violation = 0.0;  // max_j (hard_gamma_j - gamma_j)
};

inline EvalReport evaluate_model(const PartitionedDataset& data,
                                 const LinearModel& m, const ConstraintSet& set) {
  EvalReport rep;
  detail::CellAccumulation acc;
  acc.sums = Eigen::MatrixXd::Zero(data.num_cells, data.num_classes);
  acc.counts = Eigen::VectorXd::Zero(data.num_cells);
  std::size_t wrong = 0;
  for (Eigen::Index r = 0; r < data.n(); ++r) {
    const auto x = data.features.row(r).transpose();
    const Eigen::VectorXd z = scores(m, x);
    const int pred = hard_predict_scores(z);
    wrong += (pred != data.labels[r]) ? 1u : 0u;
    const Eigen::VectorXd p = detail::stable_softmax(z);
    rep.avg_loss += -std::log(std::max(p[data.labels[r]], 1e-300));
    acc.counts[data.cell[r]] += 1.0;
    acc.sums(data.cell[r], pred) += 1.0;
  }
  rep.error = static_cast<double>(wrong) / static_cast<double>(data.n());
  rep.avg_loss /= static_cast<double>(data.n());
  rep.hard_gamma.resize(static_cast<Eigen::Index>(set.size()));
  for (std::size_t j = 0; j < set.size(); ++j) {
    const RateConstraint& c = set.constraints[j];
    double value = 0.0;
    for (std::size_t s = 0; s < c.subsets.size(); ++s) {
      double mass = 0.0;
      Eigen::VectorXd class_sum = Eigen::VectorXd::Zero(set.num_classes);
      for (int q : c.subsets[s]) {
        mass += acc.counts[q];
        class_sum += acc.sums.row(q).transpose();
      }
      if (mass == 0.0)
        throw EmptyRateError("evaluate_model: constraint " + std::to_string(j) +
                                 " has an empty local dataset",
                             static_cast<int>(j), c.subsets[s]);
      value += c.alpha.row(static_cast<Eigen::Index>(s)).dot(class_sum) / mass;
    }
    rep.hard_gamma[static_cast<Eigen::Index>(j)] = value;
  }
  rep.max_violation = (rep.hard_gamma - set.gammas()).maxCoeff();
  return rep;
}

struct MetricSnapshot {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double train_error = 0.0;
  double train_max_violation = 0.0;
  double val_error = 0.0;
  double val_max_violation = 0.0;
  Eigen::VectorXd train_hard_gamma;
  Eigen::VectorXd lambda;
  double epsilon_spent = kInf;
};

struct TrainResult {
  LinearModel final_model;
  DualState final_dual;
  LinearModel selected_model;
  std::int64_t selected_step = 0;
  bool selection_satisfied = false;  // train-set hard constraints held there
  std::vector<MetricSnapshot> history;
};

/// The full training loop: per step, Poisson-sample a batch, build the exact
/// prediction histogram at the current parameters, privatize it, take the
/// private primal step with per-sample clipping and Gaussian noise, and
/// ascend the dual from the same histogram. Deterministic given (seed,
/// config, data). Checkpoint selection keeps the highest validation accuracy
/// among logged steps whose train-set hard constraints are satisfied.
class Trainer {
 public:
  Trainer(const PartitionedDataset& train, const PartitionedDataset* val,
          ConstraintSet set, PrivacyConfig pcfg, TrainerOptions opts)
      : train_(train), val_(val), set_(std::move(set)), pcfg_(pcfg), opts_(opts),
        streams_(opts.seed) {
    set_.validate();
    if (set_.num_cells != train_.num_cells || set_.num_classes != train_.num_classes)
      throw ConfigError("trainer: constraint set does not match dataset shape");
    const bool noise_on = pcfg_.sigma > 0.0 || pcfg_.histogram_noise_on();
    if (opts_.dual_mode == DualMode::kHardRates && noise_on)
      throw ConfigError(
          "trainer: hard-rate dual updates read raw batch records and are only "
          "allowed with all noise disabled (sigma = 0, b = inf)");
    if (!(pcfg_.sampling_rate > 0.0 && pcfg_.sampling_rate <= 1.0))
      throw ConfigError("trainer: sampling rate must be in (0, 1]");
    if (pcfg_.steps < 1) throw ConfigError("trainer: steps must be >= 1");
    if (opts_.lambda_max < 0.0) throw ConfigError("trainer: lambda_max must be >= 0");
  }

  TrainResult run() {
    const int k_classes = train_.num_classes;
    LinearModel model = LinearModel::zeros(k_classes, train_.dim());
    DualState dual{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(set_.size())),
                   opts_.lambda_max};

    std::optional<ClosedFormAccountant> accountant;
    if (pcfg_.delta > 0.0 && std::isfinite(pcfg_.clip))
      accountant.emplace(pcfg_.epsilon, pcfg_.delta, pcfg_.sampling_rate,
                         pcfg_.clip, train_.n());

    TrainResult result;
    double best_val_error = kInf;
    double best_fallback_violation = kInf;

    for (std::int64_t t = 0; t < pcfg_.steps; ++t) {
      RngStream sample_rng = streams_.at(static_cast<std::uint64_t>(t),
                                         StreamPurpose::kPoissonSample);
      const MiniBatch batch = poisson_sample(train_, pcfg_.sampling_rate, sample_rng);

      PredictionHistogram hist =
          compute_histogram(train_, batch.indices, model, set_.tau, set_.sign);
      if (pcfg_.histogram_noise_on()) {
        RngStream hist_rng = streams_.at(static_cast<std::uint64_t>(t),
                                         StreamPurpose::kHistogramNoise);
        hist = privatize_histogram(hist, pcfg_.b, hist_rng);
      }

      // Simultaneous update semantics: the primal step uses lambda^(t), the
      // dual gradient uses theta^(t) through the step-t histogram.
      const Eigen::VectorXd lambda_t = dual.lambda;
      if (opts_.dual_mode == DualMode::kPrivateHistogram) {
        dual_step(dual, hist, set_, opts_.kappa, opts_.eta_lambda);
      } else {
        dual_step_hard(dual, train_, batch.indices, model, set_, opts_.eta_lambda);
      }

      RngStream grad_rng = streams_.at(static_cast<std::uint64_t>(t),
                                       StreamPurpose::kGradientNoise);
      try {
        primal_step(model, train_, batch.indices, lambda_t, hist.values, set_,
                    pcfg_, opts_.eta_theta, opts_.kappa, grad_rng);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at step " + std::to_string(t));
      }

      const bool last = (t + 1 == pcfg_.steps);
      if ((t + 1) % opts_.log_every == 0 || last) {
        MetricSnapshot snap;
        snap.step = t + 1;
        const EvalReport train_rep = evaluate_model(train_, model, set_);
        snap.train_loss = train_rep.avg_loss;
        snap.train_error = train_rep.error;
        snap.train_max_violation = train_rep.max_violation;
        snap.train_hard_gamma = train_rep.hard_gamma;
        if (val_ != nullptr) {
          const EvalReport val_rep = evaluate_model(*val_, model, set_);
          snap.val_error = val_rep.error;
          snap.val_max_violation = val_rep.max_violation;
        } else {
          snap.val_error = train_rep.error;
          snap.val_max_violation = train_rep.max_violation;
        }
        snap.lambda = dual.lambda;
        snap.epsilon_spent =
            accountant ? accountant->epsilon_spent(pcfg_.sigma, pcfg_.b, t + 1) : kInf;
        result.history.push_back(snap);

        const bool satisfied = train_rep.max_violation <= 1e-12;
        if (satisfied && (!result.selection_satisfied || snap.val_error < best_val_error)) {
          result.selection_satisfied = true;
          best_val_error = snap.val_error;
          result.selected_model = model;
          result.selected_step = snap.step;
        } else if (!result.selection_satisfied &&
                   train_rep.max_violation < best_fallback_violation) {
          best_fallback_violation = train_rep.max_violation;
          result.selected_model = model;
          result.selected_step = snap.step;
        }
      }
    }

    result.final_model = std::move(model);
    result.final_dual = std::move(dual);
    if (result.selected_model.weights.size() == 0) {
      result.selected_model = result.final_model;
      result.selected_step = pcfg_.steps;
    }
    return result;
  }

 private:
  const PartitionedDataset& train_;
  const PartitionedDataset* val_;
  ConstraintSet set_;
  PrivacyConfig pcfg_;
  TrainerOptions opts_;
  NoiseStreams streams_;
};

}  // namespace raco
