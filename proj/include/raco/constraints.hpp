#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "raco/dataset.hpp"
#include "raco/error.hpp"
#include "raco/model.hpp"

namespace raco {

/// One generalized rate constraint: a linear combination of per-class
/// prediction rates over local datasets, each local dataset being a union of
/// global partition cells. The constraint is
///   sum_{I in subsets} sum_k alpha(I, k) * P_k(union of cells in I) <= gamma.
struct RateConstraint {
  std::vector<std::vector<int>> subsets;  // families of cell indices
  Eigen::MatrixXd alpha;                  // |subsets| x K weights
  double gamma = 0.0;

  /// sum |alpha|; the constant bounding this constraint's contribution to
  /// gradients.
  double alpha_l1() const { return alpha.cwiseAbs().sum(); }
};

enum class RateMode { kSoft, kHard };

/// A full constraint system over a global partition of Q cells and K
/// classes, together with the softmax temperature and orientation used for
/// its soft rates. Immutable after construction.
struct ConstraintSet {
  std::vector<RateConstraint> constraints;
  int num_cells = 0;    // Q
  int num_classes = 0;  // K
  double tau = 1.0;
  SoftmaxSign sign = SoftmaxSign::kScoreAsCost;

  std::size_t size() const { return constraints.size(); }

  Eigen::VectorXd gammas() const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(constraints.size()));
    for (std::size_t j = 0; j < constraints.size(); ++j) g[static_cast<Eigen::Index>(j)] = constraints[j].gamma;
    return g;
  }

  void validate() const {
    if (constraints.empty()) throw ConfigError("constraint set is empty");
    if (num_cells < 1 || num_classes < 1)
      throw ConfigError("constraint set has invalid partition/class counts");
    if (!(tau > 0.0)) throw ConfigError("constraint set: tau must be > 0");
    for (std::size_t j = 0; j < constraints.size(); ++j) {
      const RateConstraint& c = constraints[j];
      const std::string tag = "constraint " + std::to_string(j);
      if (c.subsets.empty()) throw ConfigError(tag + ": no subsets");
      if (c.alpha.rows() != static_cast<Eigen::Index>(c.subsets.size()) ||
          c.alpha.cols() != num_classes)
        throw ConfigError(tag + ": alpha shape does not match subsets/classes");
      if (!c.alpha.allFinite()) throw ConfigError(tag + ": non-finite alpha");
      if (c.gamma < 0.0) throw ConfigError(tag + ": gamma must be >= 0");
      for (const auto& subset : c.subsets) {
        if (subset.empty()) throw ConfigError(tag + ": empty cell subset");
        for (int q : subset) {
          if (q < 0 || q >= num_cells)
            throw ConfigError(tag + ": cell index " + std::to_string(q) +
                              " out of range [0, " + std::to_string(num_cells) + ")");
        }
      }
    }
  }
};

// --- prediction rates --------------------------------------------------------

/// Mean tempered-softmax probability of class k over the given records.
inline double soft_rate(const PartitionedDataset& data, std::span<const int> rows,
                        const LinearModel& m, double tau, int k,
                        SoftmaxSign sign = SoftmaxSign::kScoreAsCost) {
  if (rows.empty())
    throw EmptyRateError("soft_rate: empty record set", -1, {});
  double sum = 0.0;
  for (int r : rows) sum += soft_predict(m, data.features.row(r).transpose(), tau, sign)[k];
  return sum / static_cast<double>(rows.size());
}

/// Fraction of records whose hard prediction is class k.
inline double hard_rate(const PartitionedDataset& data, std::span<const int> rows,
                        const LinearModel& m, int k) {
  if (rows.empty())
    throw EmptyRateError("hard_rate: empty record set", -1, {});
  std::size_t hits = 0;
  for (int r : rows)
    hits += (hard_predict(m, data.features.row(r).transpose()) == k) ? 1u : 0u;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

namespace detail {

/// Per-cell accumulation of predictions over the given rows: sums[q][k] is
/// the accumulated (soft or hard-indicator) prediction mass, counts[q] the
/// record count.
struct CellAccumulation {
  Eigen::MatrixXd sums;      // Q x K
  Eigen::VectorXd counts;    // Q
};

inline CellAccumulation accumulate_cells(const PartitionedDataset& data,
                                         std::span<const int> rows,
                                         const LinearModel& m, double tau,
                                         SoftmaxSign sign, RateMode mode) {
  CellAccumulation acc;
  acc.sums = Eigen::MatrixXd::Zero(data.num_cells, data.num_classes);
  acc.counts = Eigen::VectorXd::Zero(data.num_cells);
  for (int r : rows) {
    const int q = data.cell[r];
    acc.counts[q] += 1.0;
    if (mode == RateMode::kSoft) {
      acc.sums.row(q) += soft_predict(m, data.features.row(r).transpose(), tau, sign).transpose();
    } else {
      acc.sums(q, hard_predict(m, data.features.row(r).transpose())) += 1.0;
    }
  }
  return acc;
}

inline std::vector<int> all_rows(const PartitionedDataset& data) {
  std::vector<int> rows(static_cast<std::size_t>(data.n()));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace detail

/// Exact constraint values Gamma_j on the given records (a dataset or a
/// mini-batch). Soft mode uses the set's tempered softmax; hard mode uses
/// argmax indicators. A constraint whose local dataset is empty in the
/// evaluation set raises EmptyRateError carrying (j, I).
inline Eigen::VectorXd evaluate_exact(const ConstraintSet& set,
                                      const PartitionedDataset& data,
                                      std::span<const int> rows,
                                      const LinearModel& m, RateMode mode) {
  const auto acc = detail::accumulate_cells(data, rows, m, set.tau, set.sign, mode);
  Eigen::VectorXd out(static_cast<Eigen::Index>(set.size()));
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
        throw EmptyRateError("evaluate_exact: constraint " + std::to_string(j) +
                                 " has an empty local dataset",
                             static_cast<int>(j), c.subsets[s]);
      value += c.alpha.row(static_cast<Eigen::Index>(s)).dot(class_sum) / mass;
    }
    out[static_cast<Eigen::Index>(j)] = value;
  }
  return out;
}

inline Eigen::VectorXd evaluate_exact(const ConstraintSet& set,
                                      const PartitionedDataset& data,
                                      const LinearModel& m, RateMode mode) {
  const auto rows = detail::all_rows(data);
  return evaluate_exact(set, data, rows, m, mode);
}

/// Constraint values reconstructed purely from a (possibly noisy) Q x K
/// prediction histogram: for each local dataset, the class-k numerator is the
/// summed histogram column and the denominator is the summed total mass,
/// floored at `kappa` to keep the ratio finite and bounded under noise.
inline Eigen::VectorXd evaluate_from_histogram(const ConstraintSet& set,
                                               const Eigen::Ref<const Eigen::MatrixXd>& hist,
                                               double kappa) {
  if (hist.rows() != set.num_cells || hist.cols() != set.num_classes)
    throw ConfigError("evaluate_from_histogram: histogram shape mismatch");
  if (!(kappa > 0.0))
    throw ConfigError("evaluate_from_histogram: kappa must be > 0");
  Eigen::VectorXd out(static_cast<Eigen::Index>(set.size()));
  for (std::size_t j = 0; j < set.size(); ++j) {
    const RateConstraint& c = set.constraints[j];
    double value = 0.0;
    for (std::size_t s = 0; s < c.subsets.size(); ++s) {
      Eigen::VectorXd class_sum = Eigen::VectorXd::Zero(set.num_classes);
      for (int q : c.subsets[s]) class_sum += hist.row(q).transpose();
      const double denom = std::max(class_sum.sum(), kappa);
      value += c.alpha.row(static_cast<Eigen::Index>(s)).dot(class_sum) / denom;
    }
    out[static_cast<Eigen::Index>(j)] = value;
  }
  return out;
}

// --- standard constraint families --------------------------------------------

/// A constraint family bundles the global partition it needs with the
/// constraint set over that partition.
struct ConstraintFamily {
  PartitionSpec partition;
  ConstraintSet set;
};

/// Demographic parity: for every sensitive value z and class k,
/// P_k(D[Z=z]) - P_k(D[Z!=z]) <= gamma. Q = |Z| cells, J = |Z| * K
/// constraints.
inline ConstraintFamily build_demographic_parity(const std::string& sensitive_column,
                                                 const std::vector<std::string>& z_values,
                                                 int num_classes, double gamma) {
  const int nz = static_cast<int>(z_values.size());
  if (nz < 2)
    throw ConfigError("demographic parity needs at least 2 sensitive values");
  if (num_classes < 2) throw ConfigError("demographic parity needs K >= 2");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");

  ConstraintFamily fam;
  for (const auto& z : z_values)
    fam.partition.cells.push_back({{{sensitive_column, z}}});

  fam.set.num_cells = nz;
  fam.set.num_classes = num_classes;
  for (int z = 0; z < nz; ++z) {
    std::vector<int> complement;
    for (int q = 0; q < nz; ++q)
      if (q != z) complement.push_back(q);
    for (int k = 0; k < num_classes; ++k) {
      RateConstraint c;
      c.subsets = {{z}, complement};
      c.alpha = Eigen::MatrixXd::Zero(2, num_classes);
      c.alpha(0, k) = 1.0;
      c.alpha(1, k) = -1.0;
      c.gamma = gamma;
      fam.set.constraints.push_back(std::move(c));
    }
  }
  fam.set.validate();
  return fam;
}

enum class EqualizedOddsVariant { kCounterfactual, kAllPairs };

/// Equalized odds over the partition D[Y=y, Z=z] (Q = K * |Z| cells). The
/// counter-factual variant compares each group against the union of the
/// others (J = K^2 * |Z|); the all-pairs variant compares every ordered group
/// pair (J = K^2 * |Z| * (|Z|-1)). For binary Z the two coincide.
inline ConstraintFamily build_equalized_odds(
    const std::string& sensitive_column, const std::vector<std::string>& z_values,
    const std::string& label_column, const std::vector<std::string>& label_values,
    double gamma, EqualizedOddsVariant variant = EqualizedOddsVariant::kCounterfactual) {
  const int nz = static_cast<int>(z_values.size());
  const int k_classes = static_cast<int>(label_values.size());
  if (nz < 2) throw ConfigError("equalized odds needs at least 2 sensitive values");
  if (k_classes < 2) throw ConfigError("equalized odds needs K >= 2");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");

  ConstraintFamily fam;
  const auto cell_of = [nz](int y, int z) { return y * nz + z; };
  for (int y = 0; y < k_classes; ++y) {
    for (int z = 0; z < nz; ++z) {
      fam.partition.cells.push_back(
          {{{label_column, label_values[y]}, {sensitive_column, z_values[z]}}});
    }
  }

  fam.set.num_cells = k_classes * nz;
  fam.set.num_classes = k_classes;
  for (int y = 0; y < k_classes; ++y) {
    for (int z = 0; z < nz; ++z) {
      std::vector<std::vector<int>> others;
      if (variant == EqualizedOddsVariant::kCounterfactual) {
        std::vector<int> rest;
        for (int z2 = 0; z2 < nz; ++z2)
          if (z2 != z) rest.push_back(cell_of(y, z2));
        others.push_back(std::move(rest));
      } else {
        for (int z2 = 0; z2 < nz; ++z2)
          if (z2 != z) others.push_back({cell_of(y, z2)});
      }
      for (const auto& other : others) {
        for (int k = 0; k < k_classes; ++k) {
          RateConstraint c;
          c.subsets = {{cell_of(y, z)}, other};
          c.alpha = Eigen::MatrixXd::Zero(2, k_classes);
          c.alpha(0, k) = 1.0;
          c.alpha(1, k) = -1.0;
          c.gamma = gamma;
          fam.set.constraints.push_back(std::move(c));
        }
      }
    }
  }
  fam.set.validate();
  return fam;
}

/// Error-rate constraints over the partition by true label (Q = K cells):
/// for each target class k, P_k(D[Y != k]) <= gamma. `classes` restricts the
/// emitted constraints to a subset of target classes (empty = all K).
inline ConstraintFamily build_fnr(const std::string& label_column,
                                  const std::vector<std::string>& label_values,
                                  double gamma, std::vector<int> classes = {}) {
  const int k_classes = static_cast<int>(label_values.size());
  if (k_classes < 2) throw ConfigError("error-rate constraints need K >= 2");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (classes.empty()) {
    classes.resize(static_cast<std::size_t>(k_classes));
    std::iota(classes.begin(), classes.end(), 0);
  }

  ConstraintFamily fam;
  for (int y = 0; y < k_classes; ++y)
    fam.partition.cells.push_back({{{label_column, label_values[y]}}});

  fam.set.num_cells = k_classes;
  fam.set.num_classes = k_classes;
  for (int k : classes) {
    if (k < 0 || k >= k_classes)
      throw ConfigError("fnr: class index out of range");
    std::vector<int> other_cells;
    for (int y = 0; y < k_classes; ++y)
      if (y != k) other_cells.push_back(y);
    RateConstraint c;
    c.subsets = {other_cells};
    c.alpha = Eigen::MatrixXd::Zero(1, k_classes);
    c.alpha(0, k) = 1.0;
    c.gamma = gamma;
    fam.set.constraints.push_back(std::move(c));
  }
  fam.set.validate();
  return fam;
}

// --- config-file schema -------------------------------------------------------

inline nlohmann::json to_json(const PartitionSpec& spec) {
  nlohmann::json j;
  j["trivial"] = spec.trivial;
  auto& cells = j["cells"] = nlohmann::json::array();
  for (const auto& cell : spec.cells) {
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& [c, v] : cell.equals) terms.push_back({{"column", c}, {"value", v}});
    cells.push_back(terms);
  }
  return j;
}

inline PartitionSpec partition_spec_from_json(const nlohmann::json& j) {
  PartitionSpec spec;
  spec.trivial = j.value("trivial", false);
  for (const auto& cell : j.value("cells", nlohmann::json::array())) {
    CellPredicate p;
    for (const auto& term : cell)
      p.equals.emplace_back(term.at("column").get<std::string>(),
                            term.at("value").get<std::string>());
    spec.cells.push_back(std::move(p));
  }
  return spec;
}

inline nlohmann::json to_json(const ConstraintSet& set) {
  nlohmann::json j;
  j["cells"] = set.num_cells;
  j["classes"] = set.num_classes;
  j["tau"] = set.tau;
  j["softmax_sign"] = set.sign == SoftmaxSign::kScoreAsCost ? "cost" : "reward";
  auto& cs = j["constraints"] = nlohmann::json::array();
  for (const auto& c : set.constraints) {
    nlohmann::json jc;
    jc["subsets"] = c.subsets;
    jc["gamma"] = c.gamma;
    auto& alpha = jc["alpha"] = nlohmann::json::array();
    for (Eigen::Index s = 0; s < c.alpha.rows(); ++s) {
      for (Eigen::Index k = 0; k < c.alpha.cols(); ++k) {
        if (c.alpha(s, k) != 0.0)
          alpha.push_back({{"subset", s}, {"class", k}, {"weight", c.alpha(s, k)}});
      }
    }
    cs.push_back(std::move(jc));
  }
  return j;
}

inline ConstraintSet constraint_set_from_json(const nlohmann::json& j) {
  ConstraintSet set;
  set.num_cells = j.at("cells").get<int>();
  set.num_classes = j.at("classes").get<int>();
  set.tau = j.value("tau", 1.0);
  const std::string sign = j.value("softmax_sign", "cost");
  if (sign == "cost") set.sign = SoftmaxSign::kScoreAsCost;
  else if (sign == "reward") set.sign = SoftmaxSign::kScoreAsReward;
  else throw ConfigError("softmax_sign must be 'cost' or 'reward'");
  for (const auto& jc : j.at("constraints")) {
    RateConstraint c;
    c.subsets = jc.at("subsets").get<std::vector<std::vector<int>>>();
    c.gamma = jc.at("gamma").get<double>();
    c.alpha = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.subsets.size()),
                                    set.num_classes);
    for (const auto& term : jc.at("alpha")) {
      c.alpha(term.at("subset").get<Eigen::Index>(), term.at("class").get<Eigen::Index>()) =
          term.at("weight").get<double>();
    }
    set.constraints.push_back(std::move(c));
  }
  set.validate();
  return set;
}

}  // namespace raco
