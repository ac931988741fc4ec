#pragma once

#include <atomic>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "slalom/core.hpp"

namespace slalom {

/// Anything that maps a token sequence to two-class log odds.
///
/// Built-in oracles are pure: identical inputs give identical outputs and
/// concurrent calls are safe. Remote oracles only promise the latter.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual double score(TokenView seq) const = 0;
  virtual std::vector<double> score_batch(std::span<const TokenSeq> seqs) const;

  /// Value on the empty sequence, if the oracle defines one.
  virtual std::optional<double> empty_score() const { return std::nullopt; }
};

/// The surrogate itself used as a black box. An optional `support` maps
/// global token ids onto the rows of a locally fitted parameter set.
class SlalomOracle final : public Oracle {
 public:
  explicit SlalomOracle(SlalomParams params, std::vector<TokenId> support = {});

  double score(TokenView seq) const override;
  std::optional<double> empty_score() const override { return 0.0; }
  const SlalomParams& params() const noexcept { return params_; }

 private:
  SlalomParams params_;
  std::vector<TokenId> support_;
  std::vector<std::int64_t> local_of_;  // global id -> local row, -1 if absent
};

struct LinearModelParams {
  std::vector<double> w;  ///< per-token weight; ids beyond the table weigh 0
  double b = 0.0;
};

/// F(t) = b + sum_i w(t_i).
class LinearOracle final : public Oracle {
 public:
  explicit LinearOracle(LinearModelParams params);

  double score(TokenView seq) const override;
  std::optional<double> empty_score() const override { return params_.b; }
  const LinearModelParams& params() const noexcept { return params_; }

 private:
  LinearModelParams params_;
};

inline LinearOracle make_linear_oracle(LinearModelParams params) { return LinearOracle(std::move(params)); }

/// Adapts a callable. If `probability` is set the callable returns p(y=1|t)
/// and the score is its logit with p clamped to [1e-7, 1 - 1e-7].
class FunctionOracle final : public Oracle {
 public:
  using Fn = std::function<double(TokenView)>;
  explicit FunctionOracle(Fn fn, bool probability = false, std::optional<double> empty = std::nullopt)
      : fn_(std::move(fn)), probability_(probability), empty_(empty) {}

  double score(TokenView seq) const override;
  std::optional<double> empty_score() const override { return empty_; }

 private:
  Fn fn_;
  bool probability_;
  std::optional<double> empty_;
};

/// Forwards to another oracle and tallies every sequence scored.
class CountingOracle final : public Oracle {
 public:
  explicit CountingOracle(const Oracle& inner) : inner_(inner) {}

  double score(TokenView seq) const override;
  std::vector<double> score_batch(std::span<const TokenSeq> seqs) const override;
  std::optional<double> empty_score() const override { return inner_.empty_score(); }

  std::size_t query_count() const noexcept { return count_.load(); }
  void reset() noexcept { count_.store(0); }

 private:
  const Oracle& inner_;
  mutable std::atomic<std::size_t> count_{0};
};

/// w(tau) = log((c1 + alpha) / (c0 + alpha)); b is the prior log ratio.
LinearModelParams naive_bayes_from_counts(std::span<const double> class1_counts,
                                          std::span<const double> class0_counts, double alpha = 40.0,
                                          double prior_log_ratio = 0.0);

}  // namespace slalom
