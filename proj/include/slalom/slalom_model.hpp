#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "slalom/core.hpp"

namespace slalom {

/// Importances are clamped to this magnitude before exponentiation.
inline constexpr double kImportanceClamp = 50.0;
/// Exact Shapley enumeration is refused beyond this many positions.
inline constexpr std::size_t kMaxExactShapleyLength = 20;

using AttributionVector = std::vector<double>;

/// Softmax over the importances of the tokens in `seq`.
std::vector<double> attention_weights(const SlalomParams& p, TokenView seq);

/// Log odds F(t) = sum_i alpha_i v(t_i).
double eval(const SlalomParams& p, TokenView seq);

/// Soft-removal model: each position's softmax weight is scaled by presence[i] in [0, 1].
/// Binary presence reproduces eval() on the retained subsequence bit-for-bit.
double eval_weighted(const SlalomParams& p, TokenView seq, std::span<const double> presence);

enum class LinearizedForm {
  Proportional,   ///< v(t_i) * exp(s(t_i))
  ExactGradient,  ///< alpha_i * (v(t_i) - F), the gradient of the soft-removal model at presence = 1
};

AttributionVector linearized_scores(const SlalomParams& p, TokenView seq,
                                    LinearizedForm form = LinearizedForm::Proportional);

/// Shapley values of positions with the empty coalition valued at 0 log odds.
AttributionVector shapley_exact(const SlalomParams& p, TokenView seq);

/// Permutation-sampling estimate over `permutations` draws. Deterministic in `seed`.
AttributionVector shapley_sampled(const SlalomParams& p, TokenView seq, std::size_t permutations,
                                  std::uint64_t seed);

struct MultiClassOutput {
  std::vector<double> scores;     ///< F_c per class
  std::vector<double> posterior;  ///< softmax over scores
};

MultiClassOutput eval_multiclass(const MultiClassSlalomParams& p, TokenView seq);

}  // namespace slalom
