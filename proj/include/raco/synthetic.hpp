#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "raco/csv.hpp"
#include "raco/error.hpp"
#include "raco/rng.hpp"

namespace raco {

/// Schema of the bundled synthetic census-style benchmark (binary income
/// label, gender as the sensitive attribute). Shaped like the classic adult
/// income task so harness configs transfer between the two.
inline TableSchema synthetic_benchmark_schema() {
  return {
      {"age", ColumnKind::kNumeric},
      {"education_num", ColumnKind::kNumeric},
      {"hours_per_week", ColumnKind::kNumeric},
      {"capital_gain", ColumnKind::kNumeric},
      {"workclass", ColumnKind::kCategorical},
      {"marital", ColumnKind::kCategorical},
      {"occupation", ColumnKind::kCategorical},
      {"sex", ColumnKind::kSensitive},
      {"income", ColumnKind::kLabel},
  };
}

/// Deterministically generates a census-style table: the label follows a
/// ground-truth logistic model over the observable features, the sensitive
/// groups have unequal base rates (positive rate roughly 0.30 vs 0.11), and
/// an unconstrained classifier picks up a demographic disparity around 0.2.
inline void write_synthetic_benchmark(const std::string& path, std::size_t rows,
                                      std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "age,education_num,hours_per_week,capital_gain,workclass,marital,"
         "occupation,income,sex\n";

  RngStream rng = NoiseStreams(seed).at(StreamPurpose::kSynthesis);
  const auto clamp_round = [](double v, double lo, double hi) {
    return std::llround(std::min(std::max(v, lo), hi));
  };

  for (std::size_t i = 0; i < rows; ++i) {
    const bool male = rng.uniform() < 2.0 / 3.0;
    const double s = rng.gaussian(1.0);  // latent earning propensity
    const long age = clamp_round(38.0 + 13.0 * rng.gaussian(1.0) + 2.0 * s, 17, 90);
    const long edu = clamp_round(10.0 + 2.0 * s + 0.8 * rng.gaussian(1.0), 3, 16);
    const long hours = clamp_round(
        40.0 + 4.0 * s + (male ? 2.5 : -2.5) + 8.0 * rng.gaussian(1.0), 5, 99);
    const bool has_gain = rng.uniform() < 0.08;
    const long gain =
        has_gain ? clamp_round(std::exp(7.5 + 1.1 * rng.gaussian(1.0)), 100, 99999) : 0;

    const char* workclass = "Private";
    {
      const double u = rng.uniform() + 0.04 * s;
      if (u > 0.95) workclass = "SelfEmp";
      else if (u > 0.80) workclass = "Gov";
      else if (u < 0.03) workclass = "Other";
    }
    const bool married =
        rng.uniform() <
        1.0 / (1.0 + std::exp(-(0.3 + 0.05 * (age - 38) + (male ? 0.8 : -0.4))));
    const char* marital = married ? "Married" : (rng.uniform() < 0.3 ? "Divorced" : "Single");
    const char* occupation = "Manual";
    {
      const double o = s + 0.8 * rng.gaussian(1.0);
      if (o > 1.2) occupation = "Exec";
      else if (o > 0.5) occupation = "Prof";
      else if (o > -0.3) occupation = "Clerical";
      else if (o > -1.0) occupation = "Service";
    }

    const double logit = -3.8 + 0.34 * (edu - 10) + 0.04 * (age - 38) +
                         0.05 * (hours - 40) + 2.4 * (has_gain ? 1.0 : 0.0) +
                         1.6 * (married ? 1.0 : 0.0) + 0.8 * (male ? 1.0 : 0.0) +
                         (occupation == std::string("Exec")   ? 1.0
                          : occupation == std::string("Prof") ? 0.6
                                                              : 0.0);
    const bool positive = rng.uniform() < 1.0 / (1.0 + std::exp(-logit));

    out << age << ',' << edu << ',' << hours << ',' << gain << ',' << workclass
        << ',' << marital << ',' << occupation << ','
        << (positive ? ">50K" : "<=50K") << ',' << (male ? "Male" : "Female") << '\n';
  }
}

}  // namespace raco
