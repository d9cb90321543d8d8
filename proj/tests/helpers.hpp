#pragma once

#include <Eigen/Core>
#include <cmath>

#include "raco/dataset.hpp"
#include "raco/model.hpp"
#include "raco/rng.hpp"

namespace raco::testing {

inline LinearModel random_model(int k, int d, RngStream& rng, double scale = 1.0) {
  LinearModel m = LinearModel::zeros(k, d);
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < d; ++c) m.weights(r, c) = scale * rng.gaussian(1.0);
  return m;
}

inline Eigen::VectorXd random_vector(int d, RngStream& rng, double scale = 1.0) {
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = scale * rng.gaussian(1.0);
  return x;
}

/// Random dataset with every partition cell guaranteed nonempty.
inline PartitionedDataset make_dataset(int n, int d, int k_classes, int q_cells,
                                       RngStream& rng) {
  PartitionedDataset data;
  data.num_classes = k_classes;
  data.num_cells = q_cells;
  data.features.resize(n, d);
  data.labels.resize(n);
  data.cell.resize(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) data.features(r, c) = rng.gaussian(1.0);
    data.labels[r] = static_cast<int>(rng.below(k_classes));
    data.cell[r] = (r < q_cells) ? r : static_cast<int>(rng.below(q_cells));
  }
  return data;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-10);
}

/// Central finite differences of a scalar function of the weights.
template <typename F>
Eigen::MatrixXd finite_difference(const LinearModel& m, F f, double h = 1e-5) {
  LinearModel tmp = m;
  Eigen::MatrixXd g(m.weights.rows(), m.weights.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double orig = tmp.weights(r, c);
      tmp.weights(r, c) = orig + h;
      const double fp = f(tmp);
      tmp.weights(r, c) = orig - h;
      const double fm = f(tmp);
      tmp.weights(r, c) = orig;
      g(r, c) = (fp - fm) / (2.0 * h);
    }
  }
  return g;
}

}  // namespace raco::testing
