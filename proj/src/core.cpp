#include "slalom/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slalom {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::OutOfVocab: return "OutOfVocab";
    case ErrorCode::TooLong: return "TooLong";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::TooLongForExact: return "TooLongForExact";
    case ErrorCode::ConstantModel: return "ConstantModel";
    case ErrorCode::NearDegenerate: return "NearDegenerate";
    case ErrorCode::DegenerateValues: return "DegenerateValues";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::InfeasibleSStep: return "InfeasibleSStep";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::OracleUnavailable: return "OracleUnavailable";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::DimTooSmall: return "DimTooSmall";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateConstantInput: return "DegenerateConstantInput";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw Error(ErrorCode::InvalidParams, "vocabulary must not be empty");
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw Error(ErrorCode::InvalidParams, "duplicate token '" + tokens_[i] + "'");
  }
}

Vocabulary Vocabulary::anonymous(std::size_t size) {
  std::vector<std::string> tokens;
  tokens.reserve(size);
  for (std::size_t i = 0; i < size; ++i) tokens.push_back("t" + std::to_string(i));
  return Vocabulary(std::move(tokens));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(id));
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto found = find(token);
  if (!found) throw Error(ErrorCode::OutOfVocab, "token '" + token + "'");
  return *found;
}

TokenSeq Vocabulary::encode(const std::vector<std::string>& words) const {
  TokenSeq out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

namespace {

void require_finite(const std::vector<double>& xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw Error(ErrorCode::InvalidParams, std::string("non-finite entry in ") + what);
  }
}

std::vector<double> recenter(const std::vector<double>& s, double gamma) {
  if (s.empty()) throw Error(ErrorCode::InvalidParams, "empty importance map");
  if (!std::isfinite(gamma)) throw Error(ErrorCode::InvalidParams, "non-finite gamma");
  const double n = static_cast<double>(s.size());
  const double shift = gamma / n - std::accumulate(s.begin(), s.end(), 0.0) / n;
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] + shift;
  return out;
}

}  // namespace

SlalomParams normalize_params(const SlalomParams& p) {
  require_finite(p.s, "s");
  if (p.s.size() != p.v.size()) throw Error(ErrorCode::InvalidParams, "|s| != |v|");
  return SlalomParams{recenter(p.s, p.gamma), p.v, p.gamma};
}

MultiClassSlalomParams normalize_params(const MultiClassSlalomParams& p) {
  require_finite(p.s, "s");
  MultiClassSlalomParams out{recenter(p.s, p.gamma), p.v, p.gamma};
  if (out.v.empty()) return out;
  const std::size_t classes = out.v.size();
  for (const auto& row : out.v) {
    if (row.size() != out.s.size()) throw Error(ErrorCode::InvalidParams, "value row size != |V|");
    require_finite(row, "v");
  }
  // Per-token class values are centred so they sum to zero over classes.
  for (std::size_t t = 0; t < out.s.size(); ++t) {
    double mean = 0.0;
    for (const auto& row : out.v) mean += row[t];
    mean /= static_cast<double>(classes);
    for (auto& row : out.v) row[t] -= mean;
  }
  return out;
}

void validate_sequence(std::size_t vocab_size, TokenView seq, std::size_t max_len) {
  for (TokenId id : seq) {
    if (id >= vocab_size) throw Error(ErrorCode::OutOfVocab, "id " + std::to_string(id));
  }
  if (max_len != 0 && seq.size() > max_len) {
    throw Error(ErrorCode::TooLong,
                "length " + std::to_string(seq.size()) + " exceeds context " + std::to_string(max_len));
  }
}

void validate_params(const SlalomParams& p) {
  if (p.s.size() != p.v.size()) throw Error(ErrorCode::InvalidParams, "|s| != |v|");
  if (p.s.empty()) throw Error(ErrorCode::InvalidParams, "empty parameter maps");
  require_finite(p.s, "s");
  require_finite(p.v, "v");
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p, double eps) {
  p = std::clamp(p, eps, 1.0 - eps);
  return std::log(p) - std::log1p(-p);
}

}  // namespace slalom
