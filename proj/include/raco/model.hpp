#pragma once

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <string>
#include <utility>

#include "json.hpp"

#include "raco/error.hpp"

namespace raco {

/// Orientation of the tempered softmax used for prediction rates.
///
/// kScoreAsCost follows the published formula sigma_tau(z)_k =
/// exp(-tau z_k) / sum_l exp(-tau z_l) verbatim: the *smallest* score gets
/// the largest probability, so the tau -> inf limit concentrates on the
/// argmin of the scores. kScoreAsReward flips the sign so the limit
/// concentrates on the argmax, consistent with hard predictions. Both are
/// supported; hard_predict always takes the argmax.
enum class SoftmaxSign { kScoreAsCost, kScoreAsReward };

/// Linear multiclass classifier. Prediction scores are h(theta; x) = W x,
/// one row of W per class; the bias is carried by the constant feature the
/// preprocessor appends.
struct LinearModel {
  Eigen::MatrixXd weights;  // K x d

  int num_classes() const { return static_cast<int>(weights.rows()); }
  Eigen::Index dim() const { return weights.cols(); }

  static LinearModel zeros(int k, Eigen::Index d) {
    return {Eigen::MatrixXd::Zero(k, d)};
  }
};

inline Eigen::VectorXd scores(const LinearModel& m,
                              const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != m.weights.cols())
    throw ConfigError("scores: feature dimension " + std::to_string(x.size()) +
                      " != model dimension " + std::to_string(m.weights.cols()));
  return m.weights * x;
}

namespace detail {

/// Stabilized softmax of `u` (max subtracted before exponentiation).
inline Eigen::VectorXd stable_softmax(Eigen::VectorXd u) {
  const double m = u.maxCoeff();
  u.array() -= m;
  Eigen::VectorXd e = u.array().exp();
  return e / e.sum();
}

}  // namespace detail

/// Tempered softmax of the prediction scores. With kScoreAsCost this is the
/// published orientation (probability mass on low scores).
inline Eigen::VectorXd soft_predict_scores(const Eigen::VectorXd& z, double tau,
                                           SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  if (!(tau > 0.0)) throw ConfigError("soft_predict: tau must be > 0");
  if (!z.allFinite()) throw NumericError("soft_predict: non-finite scores");
  const double s = (sign == SoftmaxSign::kScoreAsCost) ? -tau : tau;
  return detail::stable_softmax(s * z);
}

inline Eigen::VectorXd soft_predict(const LinearModel& m,
                                    const Eigen::Ref<const Eigen::VectorXd>& x,
                                    double tau,
                                    SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  return soft_predict_scores(scores(m, x), tau, sign);
}

/// Argmax of the prediction scores; ties break toward the lowest class index.
inline int hard_predict_scores(const Eigen::VectorXd& z) {
  int best = 0;
  for (int k = 1; k < z.size(); ++k)
    if (z[k] > z[best]) best = k;
  return best;
}

inline int hard_predict(const LinearModel& m,
                        const Eigen::Ref<const Eigen::VectorXd>& x) {
  return hard_predict_scores(scores(m, x));
}

/// Cross-entropy of the standard softmax (temperature 1, reward orientation)
/// against label y, with its analytic gradient d loss / d W.
inline std::pair<double, Eigen::MatrixXd> loss_and_grad(
    const LinearModel& m, const Eigen::Ref<const Eigen::VectorXd>& x, int y) {
  if (y < 0 || y >= m.num_classes())
    throw ConfigError("loss_and_grad: label out of range");
  const Eigen::VectorXd z = scores(m, x);
  Eigen::VectorXd p = detail::stable_softmax(z);
  const double loss = -std::log(std::max(p[y], 1e-300));
  p[y] -= 1.0;  // p - e_y
  return {loss, p * x.transpose()};
}

/// Analytic Jacobian of the tempered softmax probability of class k with
/// respect to the weights: d sigma_tau(Wx)_k / dW, a K x d matrix.
inline Eigen::MatrixXd soft_prediction_grad(
    const LinearModel& m, const Eigen::Ref<const Eigen::VectorXd>& x,
    double tau, int k, SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  if (k < 0 || k >= m.num_classes())
    throw ConfigError("soft_prediction_grad: class out of range");
  const Eigen::VectorXd p = soft_predict(m, x, tau, sign);
  const double s = (sign == SoftmaxSign::kScoreAsCost) ? -tau : tau;
  // d p_k / d z_a = s * p_k (1[k==a] - p_a); d z_a / d W_ab = x_b.
  Eigen::VectorXd v = -p * p[k];
  v[k] += p[k];
  v *= s;
  return v * x.transpose();
}

// --- checkpoint serialization (versioned JSON) ------------------------------

inline constexpr const char* kModelFormat = "raco-model/1";

inline void save_model(const LinearModel& m, const std::string& path) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["classes"] = m.num_classes();
  j["dim"] = m.dim();
  std::vector<double> flat(m.weights.data(), m.weights.data() + m.weights.size());
  j["weights"] = flat;  // column-major
  std::ofstream out(path);
  if (!out) throw DataError("save_model: cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

inline LinearModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_model: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  if (j.value("format", "") != kModelFormat)
    throw DataError("load_model: '" + path + "' has unsupported format '" +
                    j.value("format", "<none>") + "'");
  const int k = j.at("classes").get<int>();
  const Eigen::Index d = j.at("dim").get<Eigen::Index>();
  const auto flat = j.at("weights").get<std::vector<double>>();
  if (flat.size() != static_cast<std::size_t>(k) * static_cast<std::size_t>(d))
    throw DataError("load_model: weight count does not match shape header");
  LinearModel m = LinearModel::zeros(k, d);
  std::copy(flat.begin(), flat.end(), m.weights.data());
  return m;
}

}  // namespace raco
