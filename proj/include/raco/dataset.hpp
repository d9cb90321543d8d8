#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "raco/csv.hpp"
#include "raco/error.hpp"
#include "raco/rng.hpp"

namespace raco {

/// Encoded feature matrix: z-scored numerics, one-hot categoricals, labels
/// mapped to 0..K-1, a constant bias feature appended last.
struct EncodedData {
  Eigen::MatrixXd features;            // n x d
  Eigen::VectorXi labels;              // n, values in [0, K)
  int num_classes = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;     // sorted; index = class id
  std::vector<std::string> dropped_columns; // zero-variance numerics
};

struct PreprocessOptions {
  bool include_sensitive = true;  // encode the sensitive column as a feature
  bool add_bias = true;
};

/// z-scores numeric columns (population std over the fit rows), one-hot
/// encodes categoricals (levels from the full table, sorted), and maps label
/// values to 0..K-1 (sorted order). `fit_rows` selects which rows define the
/// numeric statistics; empty means all rows. Zero-variance numeric columns
/// are dropped and reported in `dropped_columns`.
inline EncodedData preprocess(const RawTable& table,
                              std::span<const int> fit_rows = {},
                              const PreprocessOptions& opts = {}) {
  const std::size_t n = table.num_rows();
  if (n == 0) throw DataError("preprocess: table has no rows");

  std::vector<int> all_rows;
  if (fit_rows.empty()) {
    all_rows.resize(n);
    std::iota(all_rows.begin(), all_rows.end(), 0);
    fit_rows = all_rows;
  }
  if (fit_rows.size() < 2)
    throw DataError("preprocess: cannot compute variance from fewer than 2 rows");

  EncodedData out;

  // Label mapping first.
  const int label_col = table.label_column();
  out.label_names = table.distinct_values(label_col);
  out.num_classes = static_cast<int>(out.label_names.size());
  if (out.num_classes < 2) throw DataError("preprocess: need at least 2 classes");
  out.labels.resize(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto& v = table.columns[label_col][r];
    const auto it = std::lower_bound(out.label_names.begin(), out.label_names.end(), v);
    out.labels[static_cast<Eigen::Index>(r)] =
        static_cast<int>(it - out.label_names.begin());
  }

  struct NumericCol { int col; double mean; double std; };
  struct OneHotCol { int col; std::vector<std::string> levels; };
  std::vector<NumericCol> numerics;
  std::vector<OneHotCol> onehots;

  for (std::size_t c = 0; c < table.schema.size(); ++c) {
    const ColumnSpec& spec = table.schema[c];
    switch (spec.kind) {
      case ColumnKind::kLabel:
        break;
      case ColumnKind::kNumeric: {
        double mean = 0.0;
        for (int r : fit_rows) mean += std::stod(table.columns[c][r]);
        mean /= static_cast<double>(fit_rows.size());
        double var = 0.0;
        for (int r : fit_rows) {
          const double d = std::stod(table.columns[c][r]) - mean;
          var += d * d;
        }
        var /= static_cast<double>(fit_rows.size());
        const double std_dev = std::sqrt(var);
        if (std_dev < 1e-12) {
          out.dropped_columns.push_back(spec.name);
        } else {
          numerics.push_back({static_cast<int>(c), mean, std_dev});
        }
        break;
      }
      case ColumnKind::kSensitive:
        if (!opts.include_sensitive) break;
        [[fallthrough]];
      case ColumnKind::kCategorical:
        onehots.push_back({static_cast<int>(c), table.distinct_values(static_cast<int>(c))});
        break;
    }
  }

  std::size_t d = numerics.size() + (opts.add_bias ? 1 : 0);
  for (const auto& oh : onehots) d += oh.levels.size();
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));

  Eigen::Index col = 0;
  for (const auto& nc : numerics) {
    out.feature_names.push_back(table.schema[nc.col].name);
    for (std::size_t r = 0; r < n; ++r) {
      out.features(static_cast<Eigen::Index>(r), col) =
          (std::stod(table.columns[nc.col][r]) - nc.mean) / nc.std;
    }
    ++col;
  }
  for (const auto& oh : onehots) {
    for (const auto& level : oh.levels)
      out.feature_names.push_back(table.schema[oh.col].name + "=" + level);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& v = table.columns[oh.col][r];
      for (std::size_t l = 0; l < oh.levels.size(); ++l) {
        out.features(static_cast<Eigen::Index>(r), col + static_cast<Eigen::Index>(l)) =
            (v == oh.levels[l]) ? 1.0 : 0.0;
      }
    }
    col += static_cast<Eigen::Index>(oh.levels.size());
  }
  if (opts.add_bias) {
    out.feature_names.emplace_back("(bias)");
    out.features.col(col).setOnes();
    ++col;
  }

  if (!out.features.allFinite())
    throw NumericError("preprocess: non-finite feature values after encoding");
  return out;
}

/// One cell of the global partition, expressed as a conjunction of
/// column == value predicates over the raw table.
struct CellPredicate {
  std::vector<std::pair<std::string, std::string>> equals;

  std::string name() const {
    std::string s;
    for (const auto& [c, v] : equals) {
      if (!s.empty()) s += ",";
      s += c + "=" + v;
    }
    return s;
  }
};

/// Declarative global partition: either one cell per predicate (predicates
/// must be mutually exclusive and exhaustive) or the trivial partition with
/// one cell per record.
struct PartitionSpec {
  bool trivial = false;
  std::vector<CellPredicate> cells;

  std::size_t num_cells() const { return cells.size(); }
};

/// Dataset ready for training: features, labels, and the global partition
/// index per record. Read-only after construction.
struct PartitionedDataset {
  Eigen::MatrixXd features;  // n x d
  Eigen::VectorXi labels;    // n
  Eigen::VectorXi cell;      // n, values in [0, Q)
  int num_cells = 0;         // Q
  int num_classes = 0;       // K

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  std::vector<Eigen::Index> cell_counts() const {
    std::vector<Eigen::Index> counts(num_cells, 0);
    for (Eigen::Index i = 0; i < cell.size(); ++i) ++counts[cell[i]];
    return counts;
  }

  /// min_q |D_q| -- the "n" used by the privacy accountant.
  Eigen::Index min_cell_count() const {
    const auto counts = cell_counts();
    return *std::min_element(counts.begin(), counts.end());
  }
};

/// Assigns every record to exactly one partition cell. A record matching
/// zero or more than one predicate is an error (reported with its row index);
/// so is an empty cell, since rate constraints over it would be undefined.
inline PartitionedDataset build_partition(const RawTable& table,
                                          const EncodedData& enc,
                                          const PartitionSpec& spec) {
  const std::size_t n = table.num_rows();
  if (static_cast<Eigen::Index>(n) != enc.features.rows())
    throw DataError("build_partition: table and encoded data disagree on row count");

  PartitionedDataset data;
  data.features = enc.features;
  data.labels = enc.labels;
  data.num_classes = enc.num_classes;
  data.cell.resize(static_cast<Eigen::Index>(n));

  if (spec.trivial) {
    data.num_cells = static_cast<int>(n);
    for (std::size_t r = 0; r < n; ++r) data.cell[static_cast<Eigen::Index>(r)] = static_cast<int>(r);
    return data;
  }

  if (spec.cells.empty()) throw ConfigError("build_partition: empty partition spec");
  std::vector<int> col_of;  // resolved column index per (cell, predicate term)
  // Resolve column names once.
  std::vector<std::vector<std::pair<int, const std::string*>>> compiled;
  compiled.reserve(spec.cells.size());
  for (const auto& cell : spec.cells) {
    std::vector<std::pair<int, const std::string*>> terms;
    terms.reserve(cell.equals.size());
    for (const auto& [cname, value] : cell.equals)
      terms.emplace_back(table.column_index(cname), &value);
    compiled.push_back(std::move(terms));
  }

  data.num_cells = static_cast<int>(spec.cells.size());
  std::vector<Eigen::Index> counts(spec.cells.size(), 0);
  for (std::size_t r = 0; r < n; ++r) {
    int match = -1;
    for (std::size_t q = 0; q < compiled.size(); ++q) {
      bool ok = true;
      for (const auto& [c, v] : compiled[q]) {
        if (table.columns[c][r] != *v) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      if (match >= 0)
        throw DataError("build_partition: record " + std::to_string(r) +
                        " matches both cell '" + spec.cells[match].name() +
                        "' and cell '" + spec.cells[q].name() + "'");
      match = static_cast<int>(q);
    }
    if (match < 0)
      throw DataError("build_partition: record " + std::to_string(r) +
                      " matches no partition cell");
    data.cell[static_cast<Eigen::Index>(r)] = match;
    ++counts[match];
  }
  for (std::size_t q = 0; q < counts.size(); ++q) {
    if (counts[q] == 0)
      throw DataError("build_partition: cell '" + spec.cells[q].name() +
                      "' is empty");
  }
  return data;
}

struct SplitFractions {
  double train, val, test;
};

/// Rounding rule: val and test sizes round to nearest, leftover goes to
/// train. Rejects non-positive fractions and fractions not summing to 1.
inline std::array<std::size_t, 3> split_sizes(std::size_t n, SplitFractions f) {
  if (f.train <= 0.0 || f.val <= 0.0 || f.test <= 0.0)
    throw ConfigError("split: all fractions must be > 0");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n)));
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(n)));
  if (n_val + n_test >= n) throw ConfigError("split: train split would be empty");
  return {n - n_val - n_test, n_val, n_test};
}

/// Deterministic permutation split: Fisher-Yates shuffle driven by a derived
/// stream, then train takes the first block, val the next, test the last.
inline std::array<std::vector<int>, 3> split_indices(std::size_t n, SplitFractions f,
                                                     std::uint64_t seed) {
  const auto sizes = split_sizes(n, f);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng = NoiseStreams(seed).at(StreamPurpose::kSplit);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(perm[i], perm[j]);
  }
  std::array<std::vector<int>, 3> out;
  auto it = perm.begin();
  for (int s = 0; s < 3; ++s) {
    out[s].assign(it, it + static_cast<std::ptrdiff_t>(sizes[s]));
    it += static_cast<std::ptrdiff_t>(sizes[s]);
  }
  return out;
}

struct DatasetSplits {
  PartitionedDataset train, val, test;
};

namespace detail {

inline PartitionedDataset take_rows(const PartitionedDataset& data,
                                    const std::vector<int>& rows) {
  PartitionedDataset out;
  out.num_cells = data.num_cells;
  out.num_classes = data.num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  out.cell.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(rows[i]);
    out.labels[static_cast<Eigen::Index>(i)] = data.labels[rows[i]];
    out.cell[static_cast<Eigen::Index>(i)] = data.cell[rows[i]];
  }
  return out;
}

}  // namespace detail

/// Splits into disjoint train/val/test with partition indices preserved.
/// Errors if any split loses a partition cell entirely (constraints over it
/// would become undefined).
inline DatasetSplits split(const PartitionedDataset& data, SplitFractions f,
                           std::uint64_t seed) {
  const auto idx = split_indices(static_cast<std::size_t>(data.n()), f, seed);
  DatasetSplits out{detail::take_rows(data, idx[0]), detail::take_rows(data, idx[1]),
                    detail::take_rows(data, idx[2])};
  const char* names[3] = {"train", "val", "test"};
  const PartitionedDataset* parts[3] = {&out.train, &out.val, &out.test};
  for (int s = 0; s < 3; ++s) {
    const auto counts = parts[s]->cell_counts();
    for (std::size_t q = 0; q < counts.size(); ++q) {
      if (counts[q] == 0)
        throw DataError("split: partition cell " + std::to_string(q) +
                        " is empty in the " + names[s] + " split");
    }
  }
  return out;
}

/// Poisson-subsampled mini-batch: record indices into the parent dataset.
struct MiniBatch {
  std::vector<int> indices;
  double rate = 1.0;

  std::size_t size() const { return indices.size(); }
};

/// Includes each record independently with probability `rate`. An empty
/// batch is a legal outcome.
inline MiniBatch poisson_sample(Eigen::Index n, double rate, RngStream& rng) {
  if (!(rate > 0.0) || rate > 1.0)
    throw ConfigError("poisson_sample: rate must be in (0, 1]");
  MiniBatch batch;
  batch.rate = rate;
  batch.indices.reserve(static_cast<std::size_t>(static_cast<double>(n) * rate * 1.3) + 8);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (rng.uniform() < rate) batch.indices.push_back(static_cast<int>(i));
  }
  return batch;
}

inline MiniBatch poisson_sample(const PartitionedDataset& data, double rate,
                                RngStream& rng) {
  return poisson_sample(data.n(), rate, rng);
}

}  // namespace raco
