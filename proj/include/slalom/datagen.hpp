#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "slalom/core.hpp"

namespace slalom::datagen {

/// Token table, weights and occurrence probabilities of the linear benchmark.
struct LinearDatasetSpec {
  Vocabulary vocab;
  std::vector<double> weights;
  std::vector<double> probabilities;
  std::size_t length_trials = 30;  ///< length ~ Binomial(length_trials, length_p)
  double length_p = 0.5;
  double offset = 0.0;

  /// the/we/movie/watch/good/best/perfect/ok/bad/worst preset.
  static LinearDatasetSpec review_preset();
};

struct SlalomDatasetSpec {
  std::size_t vocab_size = 200;
  /// Value map; when empty, v ~ N(0, value_stddev^2) per token.
  std::vector<double> values;
  double value_stddev = 0.5;
  double coupling = 5.0;      ///< s = coupling * sign(v)|v|^{3/2} + noise_scale * N(0, 1)
  double noise_scale = 0.5;
  std::size_t min_length = 1;
  std::size_t max_length = 30;
  double gamma = 0.0;
};

/// coupling * sign(v) |v|^{3/2}, the noise-free part of the importance law.
double coupled_importance(double value, double coupling = 5.0);

/// Bernoulli(sigmoid(log_odds)); infinite log odds give a deterministic label.
int sample_label(double log_odds, std::mt19937_64& rng);

LabeledDataset gen_linear_dataset(const LinearDatasetSpec& spec, std::size_t n, std::uint64_t seed);

SlalomParams gen_slalom_params(const SlalomDatasetSpec& spec, std::uint64_t seed);

/// Tokens uniform over the vocabulary, lengths uniform over [min_length, max_length].
LabeledDataset gen_slalom_dataset(const SlalomParams& p, const SlalomDatasetSpec& spec, std::size_t n,
                                  std::uint64_t seed);

}  // namespace slalom::datagen
