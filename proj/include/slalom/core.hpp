#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "slalom/error.hpp"

namespace slalom {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;
using TokenView = std::span<const TokenId>;

/// Ordered set of distinct token strings; the line/insertion index is the id.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Anonymous vocabulary "t0".."t{n-1}" used when only ids matter.
  static Vocabulary anonymous(std::size_t size);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(const std::string& token) const;
  TokenId id(const std::string& token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  TokenSeq encode(const std::vector<std::string>& words) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Per-token importance `s` and value `v`, with the importance sum pinned to `gamma`.
struct SlalomParams {
  std::vector<double> s;
  std::vector<double> v;
  double gamma = 0.0;

  std::size_t vocab_size() const noexcept { return v.size(); }
};

/// Shared importance map, one value map per class (rows of `v`).
struct MultiClassSlalomParams {
  std::vector<double> s;
  std::vector<std::vector<double>> v;
  double gamma = 0.0;

  std::size_t num_classes() const noexcept { return v.size(); }
  std::size_t vocab_size() const noexcept { return s.size(); }
};

struct LabeledRecord {
  TokenSeq ids;
  int label = 0;
  std::optional<double> log_odds;
};

struct LabeledDataset {
  Vocabulary vocab;
  std::vector<LabeledRecord> records;
};

/// Shifts `s` so that it sums to `gamma`; `v` is untouched.
SlalomParams normalize_params(const SlalomParams& p);
MultiClassSlalomParams normalize_params(const MultiClassSlalomParams& p);

/// Throws OutOfVocab or TooLong. `max_len == 0` disables the length check.
void validate_sequence(std::size_t vocab_size, TokenView seq, std::size_t max_len = 0);
void validate_params(const SlalomParams& p);

double sigmoid(double x);
double logit(double p, double eps = 1e-7);

}  // namespace slalom
