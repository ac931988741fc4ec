#include "slalom/recovery.hpp"

#include <algorithm>
#include <cmath>

namespace slalom {

ImportanceGap pairwise_importance_gap(double f_tau, double f_hat, double f_pair, double degenerate_eps) {
  const double spread = f_tau - f_hat;
  if (!(std::abs(spread) >= degenerate_eps)) {
    throw Error(ErrorCode::DegenerateValues, "single-token values coincide; importance gap unidentifiable");
  }
  // g = e^{s(tau)} / (e^{s(tau)} + e^{s(hat)}) is the attention share of tau in the pair.
  const double g = (f_pair - f_hat) / spread;
  constexpr double slack = 1e-9;
  if (!std::isfinite(g) || g < -slack || g > 1.0 + slack) {
    throw Error(ErrorCode::OutOfRange, "pair score is not a convex combination of the single-token scores");
  }
  if (g <= 0.0) return {-kMaxImportanceGap, true};
  if (g >= 1.0) return {kMaxImportanceGap, true};
  // s(tau) - s(hat) = log(g / (1 - g))
  const double gap = std::log(g) - std::log1p(-g);
  if (std::abs(gap) > kMaxImportanceGap) return {std::copysign(kMaxImportanceGap, gap), true};
  return {gap, false};
}

RecoveryReport recover(const Oracle& oracle, std::size_t vocab_size, const RecoveryOptions& options) {
  if (vocab_size < 2) throw Error(ErrorCode::ConstantModel, "a single-token vocabulary is always constant");
  const TokenId theta = options.reference_token;
  if (theta >= vocab_size) throw Error(ErrorCode::OutOfVocab, "reference token outside vocabulary");

  CountingOracle counter(oracle);
  std::vector<double> v(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t) {
    const TokenSeq single{static_cast<TokenId>(t)};
    v[t] = counter.score(single);
    if (!std::isfinite(v[t])) throw Error(ErrorCode::OracleUnavailable, "oracle returned a non-finite score");
  }

  double scale = 1.0;
  for (double x : v) scale = std::max(scale, std::abs(x));
  const double eps = 1e-7 * scale;

  // Secondary reference: the token whose value is furthest from v(theta).
  TokenId theta_hat = theta;
  double best = 0.0;
  for (std::size_t t = 0; t < vocab_size; ++t) {
    const double d = std::abs(v[t] - v[theta]);
    if (d > best) {
      best = d;
      theta_hat = static_cast<TokenId>(t);
    }
  }
  if (best < eps) throw Error(ErrorCode::ConstantModel, "all single-token values are equal");

  RecoveryReport report;
  report.reference_token = theta;
  report.secondary_reference = theta_hat;

  // eta(tau) = s(tau) - s(theta). theta_hat is processed first so that tokens
  // sharing theta's value can be chained through it.
  std::vector<double> eta(vocab_size, 0.0);
  auto pair_gap = [&](TokenId tau, TokenId ref) {
    const TokenSeq pair{tau, ref};
    const double f_pair = counter.score(pair);
    const auto gap = pairwise_importance_gap(v[tau], v[ref], f_pair, eps);
    if (gap.saturated) report.saturated_tokens.push_back(tau);
    return gap.gap;
  };
  const double hat_gap = pair_gap(theta_hat, theta);
  eta[theta_hat] = hat_gap;
  for (std::size_t t = 0; t < vocab_size; ++t) {
    const auto tau = static_cast<TokenId>(t);
    if (tau == theta || tau == theta_hat) continue;
    if (std::abs(v[tau] - v[theta]) >= eps) {
      eta[tau] = pair_gap(tau, theta);
    } else if (std::abs(v[tau] - v[theta_hat]) >= eps) {
      eta[tau] = pair_gap(tau, theta_hat) + hat_gap;
    } else {
      throw Error(ErrorCode::NearDegenerate, "token " + std::to_string(tau) + " has no admissible reference");
    }
  }

  // sum_tau (eta(tau) + s(theta)) = gamma
  double eta_sum = 0.0;
  for (double e : eta) eta_sum += e;
  const double s_theta = (options.gamma - eta_sum) / static_cast<double>(vocab_size);
  report.params.s.resize(vocab_size);
  for (std::size_t t = 0; t < vocab_size; ++t) report.params.s[t] = s_theta + eta[t];
  report.params.v = std::move(v);
  report.params.gamma = options.gamma;
  report.query_count = counter.query_count();
  return report;
}

}  // namespace slalom
