#include "slalom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "slalom/slalom_model.hpp"

namespace slalom::metrics {

DeltaPredictor surrogate_delta(const Oracle& surrogate) {
  return [&surrogate](TokenView full, TokenView reduced) { return surrogate.score(reduced) - surrogate.score(full); };
}

std::vector<double> fidelity_mse(const Oracle& oracle, const DeltaPredictor& predictor, TokenView seq,
                                 const FidelityOptions& options) {
  std::vector<bool> removable(seq.size(), true);
  for (std::size_t pos : options.pinned) {
    if (pos >= seq.size()) throw Error(ErrorCode::OutOfRange, "pinned position outside the sequence");
    removable[pos] = false;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (removable[i]) candidates.push_back(i);
  }
  if (candidates.size() <= options.max_removals) {
    throw Error(ErrorCode::SequenceTooShort, "sequence must be longer than the removal budget");
  }
  if (options.trials < 1) throw Error(ErrorCode::InvalidParams, "need at least one trial");
  std::mt19937_64 rng(options.seed);
  const double base = oracle.score(seq);
  std::vector<double> mse(options.max_removals, 0.0);
  std::vector<std::size_t> positions;
  TokenSeq reduced;
  for (std::size_t k = 1; k <= options.max_removals; ++k) {
    double total = 0.0;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      positions = candidates;
      for (std::size_t j = 0; j < k; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, positions.size() - 1);
        std::swap(positions[j], positions[pick(rng)]);
      }
      std::vector<bool> removed(seq.size(), false);
      for (std::size_t j = 0; j < k; ++j) removed[positions[j]] = true;
      reduced.clear();
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (!removed[i]) reduced.push_back(seq[i]);
      }
      const double actual = oracle.score(reduced) - base;
      const double predicted = predictor(seq, reduced);
      total += (predicted - actual) * (predicted - actual);
    }
    mse[k - 1] = total / static_cast<double>(options.trials);
  }
  return mse;
}

PerturbationCurve aopc(const Oracle& oracle, TokenView seq, std::span<const double> ranking, PerturbationMode mode,
                       const AopcOptions& options) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "cannot perturb an empty sequence");
  if (ranking.size() != seq.size()) throw Error(ErrorCode::LengthMismatch, "ranking must match sequence length");
  const std::size_t max_k = std::min(options.max_k, seq.size());

  // Positions by descending attribution; ties keep their original order.
  std::vector<std::size_t> order(seq.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ranking[a] > ranking[b]; });

  auto score_of = [&](const TokenSeq& reduced) -> std::optional<double> {
    if (!reduced.empty()) return oracle.score(reduced);
    if (auto empty = oracle.empty_score()) return *empty;
    if (options.baseline_token) return oracle.score(TokenSeq{*options.baseline_token});
    return std::nullopt;
  };

  const double full = oracle.score(seq);
  const bool positive = full >= 0.0;
  auto class_prob = [positive](double f) { return positive ? sigmoid(f) : sigmoid(-f); };
  const double p0 = class_prob(full);

  PerturbationCurve curve;
  std::vector<bool> selected(seq.size(), false);
  TokenSeq reduced;
  for (std::size_t k = 0; k <= max_k; ++k) {
    if (k > 0) selected[order[k - 1]] = true;
    reduced.clear();
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const bool keep = mode == PerturbationMode::Deletion ? !selected[i] : selected[i];
      if (keep) reduced.push_back(seq[i]);
    }
    const auto f = score_of(reduced);
    if (!f) continue;
    curve.k.push_back(k);
    curve.scores.push_back(class_prob(*f));
  }
  if (curve.scores.empty()) throw Error(ErrorCode::OracleUnavailable, "no perturbation could be scored");
  double total = 0.0;
  for (double p : curve.scores) total += p0 - p;
  curve.aopc = total / static_cast<double>(curve.scores.size());
  return curve;
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::LengthMismatch, "inputs differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::LengthMismatch, "need at least two observations");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean, dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::DegenerateConstantInput, "rank correlation of a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores and labels differ in length");
  double positives = 0.0, rank_sum = 0.0;
  const auto ranks = average_ranks(scores);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::InvalidParams, "labels must be 0 or 1");
    if (labels[i] == 1) {
      positives += 1.0;
      rank_sum += ranks[i];
    }
  }
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw Error(ErrorCode::SingleClass, "both classes must be present");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

RecoveryError param_recovery_error(const SlalomParams& truth, const SlalomParams& fitted,
                                   std::span<const TokenSeq> eval_set) {
  if (truth.vocab_size() != fitted.vocab_size() || truth.s.size() != fitted.s.size()) {
    throw Error(ErrorCode::VocabMismatch, "parameter sets cover different vocabularies");
  }
  SlalomParams a = truth;
  SlalomParams b = fitted;
  b.gamma = a.gamma;
  a = normalize_params(a);
  b = normalize_params(b);
  RecoveryError err;
  double total = 0.0;
  for (std::size_t t = 0; t < a.vocab_size(); ++t) {
    total += (a.s[t] - b.s[t]) * (a.s[t] - b.s[t]);
    total += (a.v[t] - b.v[t]) * (a.v[t] - b.v[t]);
  }
  err.param_mse = total / (2.0 * static_cast<double>(a.vocab_size()));
  if (!eval_set.empty()) {
    double sq = 0.0;
    for (const auto& seq : eval_set) {
      const double d = eval(a, seq) - eval(b, seq);
      sq += d * d;
    }
    err.logit_mse = sq / static_cast<double>(eval_set.size());
  }
  return err;
}

}  // namespace slalom::metrics
