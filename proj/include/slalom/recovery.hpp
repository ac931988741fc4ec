#pragma once

#include <cstddef>
#include <vector>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom {

/// Largest magnitude a recovered importance gap may take before it is flagged as saturated.
inline constexpr double kMaxImportanceGap = 50.0;

struct ImportanceGap {
  double gap = 0.0;        ///< s(tau) - s(tau_hat)
  bool saturated = false;  ///< true if the mixing ratio hit 0 or 1 and the gap was clamped
};

/// Relative importance of tau w.r.t. a reference token from the two single-token
/// scores and the score of the pair [tau, tau_hat].
ImportanceGap pairwise_importance_gap(double f_tau, double f_hat, double f_pair, double degenerate_eps = 1e-7);

struct RecoveryReport {
  SlalomParams params;
  std::size_t query_count = 0;
  TokenId reference_token = 0;
  TokenId secondary_reference = 0;
  std::vector<TokenId> saturated_tokens;
};

struct RecoveryOptions {
  double gamma = 0.0;
  TokenId reference_token = 0;
};

/// Identifies (s, v) of a SLALOM oracle over tokens 0..vocab_size-1 from
/// |V| single-token and |V|-1 two-token queries.
RecoveryReport recover(const Oracle& oracle, std::size_t vocab_size, const RecoveryOptions& options = {});

}  // namespace slalom
