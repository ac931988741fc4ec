#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "slalom/core.hpp"
#include "slalom/error.hpp"
#include "slalom/oracles.hpp"

namespace slalom::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitOracle = 3;

/// Exit status for a library error: oracle/transport failures are 3, everything else is a configuration problem.
int exit_code_for(const Error& e);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Provenance attached to every artifact: tool version, seed and a hash of the effective configuration.
struct RunMeta {
  std::string command;
  std::uint64_t seed = 0;
  json config = json::object();

  std::string config_hash() const { return fnv1a_hex(config.dump()); }
  json to_json() const;
  std::string csv_header() const;
};

struct LoadedOracle {
  std::unique_ptr<Oracle> oracle;
  std::optional<std::size_t> vocab_size;  ///< when the model knows its vocabulary
};

/// slalom:<params.json>, linear:<weights.json>, microformer:<params.json>, exec:<cmd>, tcp:<host>:<port>.
LoadedOracle load_oracle(const std::string& spec, const std::optional<Vocabulary>& vocab, bool send_tokens);

/// Token ids from "3,1,4" / "3 1 4", or whitespace-split text through the vocabulary.
TokenSeq parse_sequence(const std::string& ids, const std::string& text, const std::optional<Vocabulary>& vocab);

std::string token_label(TokenId id, const std::optional<Vocabulary>& vocab);

/// Writes to `path`, or stdout for "-" / empty.
void emit(const std::string& path, const std::string& content);

}  // namespace slalom::cli
