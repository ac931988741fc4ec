#include "slalom/datagen.hpp"

#include <cmath>

#include "slalom/slalom_model.hpp"

namespace slalom::datagen {

LinearDatasetSpec LinearDatasetSpec::review_preset() {
  LinearDatasetSpec spec;
  spec.vocab = Vocabulary({"the", "we", "movie", "watch", "good", "best", "perfect", "ok", "bad", "worst"});
  spec.weights = {0.0, 0.0, 0.0, 0.0, 0.6, 1.0, 1.5, -0.6, -1.0, -1.5};
  spec.probabilities = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 15, 1.0 / 20, 1.0 / 20, 1.0 / 15, 1.0 / 20, 1.0 / 20};
  return spec;
}

double coupled_importance(double value, double coupling) {
  return coupling * std::copysign(std::pow(std::abs(value), 1.5), value);
}

int sample_label(double log_odds, std::mt19937_64& rng) {
  if (std::isnan(log_odds)) throw Error(ErrorCode::InvalidParams, "log odds must not be NaN");
  if (log_odds == INFINITY) return 1;
  if (log_odds == -INFINITY) return 0;
  std::bernoulli_distribution coin(sigmoid(log_odds));
  return coin(rng) ? 1 : 0;
}

LabeledDataset gen_linear_dataset(const LinearDatasetSpec& spec, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidParams, "need at least one record");
  const std::size_t v = spec.vocab.size();
  if (spec.weights.size() != v || spec.probabilities.size() != v) {
    throw Error(ErrorCode::VocabMismatch, "weights/probabilities must match the vocabulary");
  }
  std::mt19937_64 rng(seed);
  std::binomial_distribution<std::size_t> length(spec.length_trials, spec.length_p);
  std::discrete_distribution<TokenId> token(spec.probabilities.begin(), spec.probabilities.end());

  LabeledDataset ds;
  ds.vocab = spec.vocab;
  ds.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t len = 0;
    // Zero-length draws are redrawn.
    while (len == 0) len = length(rng);
    LabeledRecord rec;
    rec.ids.resize(len);
    double f = spec.offset;
    for (auto& id : rec.ids) {
      id = token(rng);
      f += spec.weights[id];
    }
    rec.log_odds = f;
    rec.label = sample_label(f, rng);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

SlalomParams gen_slalom_params(const SlalomDatasetSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  SlalomParams p;
  p.gamma = spec.gamma;
  if (spec.values.empty()) {
    if (spec.vocab_size < 1) throw Error(ErrorCode::InvalidParams, "vocabulary size must be >= 1");
    p.v.resize(spec.vocab_size);
    for (auto& x : p.v) x = spec.value_stddev * unit(rng);
  } else {
    p.v = spec.values;
  }
  p.s.resize(p.v.size());
  for (std::size_t t = 0; t < p.v.size(); ++t) {
    const double x = p.v[t];
    if (!std::isfinite(x)) throw Error(ErrorCode::InvalidParams, "non-finite value score");
    p.s[t] = coupled_importance(x, spec.coupling) + spec.noise_scale * unit(rng);
  }
  return normalize_params(p);
}

LabeledDataset gen_slalom_dataset(const SlalomParams& p, const SlalomDatasetSpec& spec, std::size_t n,
                                  std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidParams, "need at least one record");
  if (spec.min_length < 1 || spec.max_length < spec.min_length) {
    throw Error(ErrorCode::InvalidParams, "need 1 <= min_length <= max_length");
  }
  validate_params(p);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(p.vocab_size() - 1));
  LabeledDataset ds;
  ds.vocab = Vocabulary::anonymous(p.vocab_size());
  ds.records.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    LabeledRecord rec;
    rec.ids.resize(length(rng));
    for (auto& id : rec.ids) id = token(rng);
    const double f = eval(p, rec.ids);
    rec.log_odds = f;
    rec.label = sample_label(f, rng);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace slalom::datagen
