#include "slalom/slalom_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace slalom {

namespace {

double clamped_importance(const std::vector<double>& s, TokenId id) {
  if (id >= s.size()) throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(id));
  return std::clamp(s[id], -kImportanceClamp, kImportanceClamp);
}

void require_nonempty(TokenView seq) {
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "sequence must contain at least one token");
}

double value_of(const SlalomParams& p, TokenId id) {
  if (id >= p.v.size()) throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(id));
  return p.v[id];
}

// Unnormalized softmax weights exp(s(t_i) - max) over the positions with presence > 0.
// Positions with zero presence get weight 0 and do not participate in the max.
std::vector<double> shifted_exp(const std::vector<double>& s, TokenView seq, std::span<const double> presence) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double imp = clamped_importance(s, seq[i]);
    if (presence.empty() || presence[i] > 0.0) top = std::max(top, imp);
  }
  std::vector<double> w(seq.size(), 0.0);
  if (!std::isfinite(top)) return w;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const double lambda = presence.empty() ? 1.0 : presence[i];
    if (lambda > 0.0) w[i] = lambda * std::exp(clamped_importance(s, seq[i]) - top);
  }
  return w;
}

double weighted_log_odds(const SlalomParams& p, TokenView seq, std::span<const double> presence) {
  const auto w = shifted_exp(p.s, seq, presence);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    num += w[i] * value_of(p, seq[i]);
    den += w[i];
  }
  if (!(den > 0.0)) throw Error(ErrorCode::AllMasked, "all positions have zero presence weight");
  return num / den;
}

}  // namespace

std::vector<double> attention_weights(const SlalomParams& p, TokenView seq) {
  require_nonempty(seq);
  auto w = shifted_exp(p.s, seq, {});
  const double den = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= den;
  return w;
}

double eval(const SlalomParams& p, TokenView seq) {
  require_nonempty(seq);
  return weighted_log_odds(p, seq, {});
}

double eval_weighted(const SlalomParams& p, TokenView seq, std::span<const double> presence) {
  require_nonempty(seq);
  if (presence.size() != seq.size()) {
    throw Error(ErrorCode::LengthMismatch, "presence weights must match sequence length");
  }
  for (double lambda : presence) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::InvalidParams, "presence weight outside [0, 1]");
  }
  return weighted_log_odds(p, seq, presence);
}

AttributionVector linearized_scores(const SlalomParams& p, TokenView seq, LinearizedForm form) {
  require_nonempty(seq);
  AttributionVector out(seq.size());
  if (form == LinearizedForm::Proportional) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      out[i] = value_of(p, seq[i]) * std::exp(clamped_importance(p.s, seq[i]));
    }
    return out;
  }
  const auto alpha = attention_weights(p, seq);
  const double f = eval(p, seq);
  for (std::size_t i = 0; i < seq.size(); ++i) out[i] = alpha[i] * (value_of(p, seq[i]) - f);
  return out;
}

AttributionVector shapley_exact(const SlalomParams& p, TokenView seq) {
  require_nonempty(seq);
  const std::size_t n = seq.size();
  if (n > kMaxExactShapleyLength) {
    throw Error(ErrorCode::TooLongForExact,
                std::to_string(n) + " positions exceeds the exact limit of " + std::to_string(kMaxExactShapleyLength));
  }
  // Coalition values from running numerator/denominator sums; the shift keeps exp() in range.
  const auto w = shifted_exp(p.s, seq, {});
  const std::size_t subsets = std::size_t{1} << n;
  std::vector<double> num(subsets, 0.0), den(subsets, 0.0), value(subsets, 0.0);
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    const std::size_t low = static_cast<std::size_t>(__builtin_ctzll(mask));
    const std::size_t rest = mask & (mask - 1);
    num[mask] = num[rest] + w[low] * value_of(p, seq[low]);
    den[mask] = den[rest] + w[low];
    value[mask] = num[mask] / den[mask];
  }
  // weight(k) = k! (n-k-1)! / n!
  std::vector<double> coalition_weight(n);
  for (std::size_t k = 0; k < n; ++k) {
    double lw = std::lgamma(double(k) + 1) + std::lgamma(double(n - k)) - std::lgamma(double(n) + 1);
    coalition_weight[k] = std::exp(lw);
  }
  AttributionVector phi(n, 0.0);
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    const auto k = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (k == n) continue;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) continue;
      phi[i] += coalition_weight[k] * (value[mask | (std::size_t{1} << i)] - value[mask]);
    }
  }
  return phi;
}

AttributionVector shapley_sampled(const SlalomParams& p, TokenView seq, std::size_t permutations,
                                  std::uint64_t seed) {
  require_nonempty(seq);
  if (permutations == 0) throw Error(ErrorCode::InvalidParams, "need at least one permutation");
  const std::size_t n = seq.size();
  const auto w = shifted_exp(p.s, seq, {});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  AttributionVector phi(n, 0.0);
  for (std::size_t draw = 0; draw < permutations; ++draw) {
    std::shuffle(order.begin(), order.end(), rng);
    double num = 0.0, den = 0.0, prev = 0.0;
    for (std::size_t pos : order) {
      num += w[pos] * value_of(p, seq[pos]);
      den += w[pos];
      const double cur = num / den;
      phi[pos] += cur - prev;
      prev = cur;
    }
  }
  for (double& x : phi) x /= static_cast<double>(permutations);
  return phi;
}

MultiClassOutput eval_multiclass(const MultiClassSlalomParams& p, TokenView seq) {
  require_nonempty(seq);
  if (p.num_classes() < 2) throw Error(ErrorCode::InvalidParams, "need at least two classes");
  const auto w = shifted_exp(p.s, seq, {});
  const double den = std::accumulate(w.begin(), w.end(), 0.0);
  MultiClassOutput out;
  out.scores.assign(p.num_classes(), 0.0);
  for (std::size_t c = 0; c < p.num_classes(); ++c) {
    const auto& row = p.v[c];
    double num = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i] >= row.size()) throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(seq[i]));
      num += w[i] * row[seq[i]];
    }
    out.scores[c] = num / den;
  }
  const double top = *std::max_element(out.scores.begin(), out.scores.end());
  out.posterior.resize(out.scores.size());
  double z = 0.0;
  for (std::size_t c = 0; c < out.scores.size(); ++c) z += out.posterior[c] = std::exp(out.scores[c] - top);
  for (double& q : out.posterior) q /= z;
  return out;
}

}  // namespace slalom
