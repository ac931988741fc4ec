#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom::metrics {

/// Predicts the change in log odds when `full` is reduced to `reduced`.
using DeltaPredictor = std::function<double(TokenView full, TokenView reduced)>;

/// Delta = surrogate(reduced) - surrogate(full); matches the SLALOM and linear surrogate contracts.
DeltaPredictor surrogate_delta(const Oracle& surrogate);

struct FidelityOptions {
  std::size_t max_removals = 10;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  std::vector<std::size_t> pinned;  ///< positions that are never removed
};

/// Per-k (k = 1..max_removals) mean squared error between predicted and observed
/// changes in log odds when k uniformly chosen (unpinned) positions are removed.
std::vector<double> fidelity_mse(const Oracle& oracle, const DeltaPredictor& predictor, TokenView seq,
                                 const FidelityOptions& options);

enum class PerturbationMode { Deletion, Insertion };

struct PerturbationCurve {
  std::vector<std::size_t> k;
  std::vector<double> scores;  ///< probability of the originally predicted class
  double aopc = 0.0;
};

struct AopcOptions {
  std::size_t max_k = 20;                 ///< clipped to |seq|
  std::optional<TokenId> baseline_token;  ///< stands in for the empty sequence
};

/// Deletion removes the top-k ranked positions; insertion keeps only them.
/// When a reduced input is empty the oracle's empty_score() is used, else
/// [baseline_token], else that k is left out of the curve.
PerturbationCurve aopc(const Oracle& oracle, TokenView seq, std::span<const double> ranking,
                       PerturbationMode mode, const AopcOptions& options = {});

/// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

double spearman(std::span<const double> xs, std::span<const double> ys);

/// Mann-Whitney AU-ROC with half credit for ties; labels are 0/1.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RecoveryError {
  double param_mse = 0.0;  ///< over all 2|V| entries of (s, v)
  double logit_mse = 0.0;  ///< mean squared eval difference over the evaluation set
};

/// Both parameter sets are renormalized to the true gamma before comparison.
RecoveryError param_recovery_error(const SlalomParams& truth, const SlalomParams& fitted,
                                   std::span<const TokenSeq> eval_set);

}  // namespace slalom::metrics
