#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom {

enum class Provenance { EffRandom, FidelDeletion, Dataset };

/// A scored sequence in local ids (indices into SamplePool::support).
struct PoolRecord {
  TokenSeq ids;
  double score = 0.0;
};

/// Scored perturbations of one explained sequence. Fitted parameters are
/// indexed like `support`, which lists the global id of every local token.
struct SamplePool {
  std::vector<TokenId> support;
  std::vector<PoolRecord> records;
  Provenance provenance = Provenance::Dataset;

  TokenSeq to_global(TokenView local) const;
};

/// Unique tokens of `seq` in order of first occurrence, and `seq` rewritten in local ids.
struct LocalSequence {
  std::vector<TokenId> support;
  TokenSeq local;
};
LocalSequence localize(TokenView seq);

/// Pool over the identity support 0..vocab_size-1 (global-vocabulary mode).
SamplePool make_global_pool(std::size_t vocab_size, std::vector<PoolRecord> records);

struct EffHyper {
  std::size_t seq_len = 2;       ///< n, length of each random sequence
  std::size_t pool_size = 5000;  ///< b
  std::size_t batch = 50;        ///< r
  double learning_rate = 1.0;    ///< lambda
  std::size_t steps = 20000;     ///< c
  double momentum = 0.0;
  double gamma = 0.0;
};

struct FidelHyper {
  std::size_t max_deletions = 5;  ///< K
  std::size_t pool_size = 2000;   ///< b
  std::size_t outer_iters = 10;
  std::size_t s_step_iters = 50;  ///< Levenberg-Marquardt iterations per s-step
  double gamma = 0.0;
};

/// b sequences of length n drawn i.i.d. uniformly from the unique tokens of `seq`, scored by `oracle`.
SamplePool sample_pool_eff(const Oracle& oracle, TokenView seq, const EffHyper& h, std::uint64_t seed);

/// The original sequence plus b-1 copies with d ~ U{0..K} positions deleted, scored by `oracle`.
/// Positions listed in `pinned` (e.g. a classification token) are never deleted.
SamplePool sample_pool_fidel(const Oracle& oracle, TokenView seq, const FidelHyper& h, std::uint64_t seed,
                             std::span<const std::size_t> pinned = {});

struct MinibatchGradient {
  double loss = 0.0;  ///< mean squared error over the batch
  std::vector<double> ds;
  std::vector<double> dv;
};

/// Analytic gradient of the minibatch MSE with respect to (s, v).
MinibatchGradient minibatch_gradient(const SlalomParams& p, const SamplePool& pool,
                                     std::span<const std::size_t> batch);

struct EffResult {
  SlalomParams params;
  std::vector<double> loss_history;  ///< minibatch loss before each step
};

/// Plain (optionally momentum) SGD on the pool MSE, starting from s = v = 0.
EffResult fit_eff(const SamplePool& pool, const EffHyper& h, std::uint64_t seed);

struct FidelResult {
  SlalomParams params;
  std::vector<double> objective_history;  ///< pool SSE after each outer iteration, [0] is the start
  bool rank_deficient = false;
};

/// Alternating least squares: exact OLS v-step, then an s-step on the same objective.
FidelResult fit_fidel(const SamplePool& pool, const FidelHyper& h);

struct LinearSurrogate {
  std::vector<double> weights;  ///< per support token
  double offset = 0.0;
  bool rank_deficient = false;
  double residual_mse = 0.0;

  /// As a global-id linear model (tokens outside the support weigh 0).
  LinearModelParams to_global(std::span<const TokenId> support) const;
};

/// OLS on token-count features with an intercept; ridge 1e-8 when rank deficient.
LinearSurrogate fit_linear_surrogate(const SamplePool& pool);

/// Sum of squared errors of `p` on the pool.
double pool_sse(const SlalomParams& p, const SamplePool& pool);

}  // namespace slalom
