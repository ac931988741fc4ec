#include "slalom/oracles.hpp"

#include <algorithm>
#include <cmath>

#include "slalom/slalom_model.hpp"

namespace slalom {

std::vector<double> Oracle::score_batch(std::span<const TokenSeq> seqs) const {
  std::vector<double> out;
  out.reserve(seqs.size());
  for (const auto& seq : seqs) out.push_back(score(seq));
  return out;
}

SlalomOracle::SlalomOracle(SlalomParams params, std::vector<TokenId> support)
    : params_(std::move(params)), support_(std::move(support)) {
  validate_params(params_);
  if (support_.empty()) return;
  if (support_.size() != params_.vocab_size()) {
    throw Error(ErrorCode::VocabMismatch, "support size must equal parameter count");
  }
  TokenId top = 0;
  for (TokenId id : support_) top = std::max(top, id);
  local_of_.assign(std::size_t{top} + 1, -1);
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (local_of_[support_[i]] != -1) throw Error(ErrorCode::InvalidParams, "duplicate id in support");
    local_of_[support_[i]] = static_cast<std::int64_t>(i);
  }
}

double SlalomOracle::score(TokenView seq) const {
  if (support_.empty()) return eval(params_, seq);
  TokenSeq local;
  local.reserve(seq.size());
  for (TokenId id : seq) {
    if (id >= local_of_.size() || local_of_[id] < 0) {
      throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(id) + " outside the fitted support");
    }
    local.push_back(static_cast<TokenId>(local_of_[id]));
  }
  return eval(params_, local);
}

LinearOracle::LinearOracle(LinearModelParams params) : params_(std::move(params)) {
  if (!std::isfinite(params_.b)) throw Error(ErrorCode::InvalidParams, "non-finite offset");
  for (double w : params_.w) {
    if (!std::isfinite(w)) throw Error(ErrorCode::InvalidParams, "non-finite weight");
  }
}

double LinearOracle::score(TokenView seq) const {
  double f = params_.b;
  for (TokenId id : seq) {
    if (id < params_.w.size()) f += params_.w[id];
  }
  return f;
}

double FunctionOracle::score(TokenView seq) const {
  const double out = fn_(seq);
  return probability_ ? logit(out) : out;
}

double CountingOracle::score(TokenView seq) const {
  count_.fetch_add(1);
  return inner_.score(seq);
}

std::vector<double> CountingOracle::score_batch(std::span<const TokenSeq> seqs) const {
  count_.fetch_add(seqs.size());
  return inner_.score_batch(seqs);
}

LinearModelParams naive_bayes_from_counts(std::span<const double> class1_counts,
                                          std::span<const double> class0_counts, double alpha,
                                          double prior_log_ratio) {
  if (class1_counts.size() != class0_counts.size()) {
    throw Error(ErrorCode::LengthMismatch, "class count tables differ in size");
  }
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidParams, "smoothing must be positive");
  LinearModelParams out;
  out.b = prior_log_ratio;
  out.w.resize(class1_counts.size());
  for (std::size_t i = 0; i < out.w.size(); ++i) {
    if (class1_counts[i] < 0 || class0_counts[i] < 0) throw Error(ErrorCode::InvalidParams, "negative count");
    out.w[i] = std::log((class1_counts[i] + alpha) / (class0_counts[i] + alpha));
  }
  return out;
}

}  // namespace slalom
