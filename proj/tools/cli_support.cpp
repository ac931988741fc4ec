#include "cli_support.hpp"

#include <charconv>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "slalom/external_oracle.hpp"
#include "slalom/io.hpp"
#include "slalom/microformer.hpp"

namespace slalom::cli {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::OracleUnavailable:
    case ErrorCode::ProtocolError:
    case ErrorCode::Timeout:
      return kExitOracle;
    default:
      return kExitConfig;
  }
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json RunMeta::to_json() const {
  return json{{"tool", "slalom"},
              {"version", SLALOM_VERSION},
              {"command", command},
              {"seed", seed},
              {"config_hash", config_hash()},
              {"config", config}};
}

std::string RunMeta::csv_header() const {
  return "# slalom " SLALOM_VERSION " command=" + command + " seed=" + std::to_string(seed) +
         " config=" + config_hash() + "\n";
}

LoadedOracle load_oracle(const std::string& spec, const std::optional<Vocabulary>& vocab, bool send_tokens) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidParams, "oracle spec must be kind:target, got '" + spec + "'");
  const std::string kind = spec.substr(0, colon), target = spec.substr(colon + 1);
  LoadedOracle out;
  if (kind == "slalom") {
    const auto j = io::read_json(target);
    auto params = io::params_from_json(j);
    auto support = j.value("support", std::vector<TokenId>{});
    if (support.empty()) out.vocab_size = params.vocab_size();
    out.oracle = std::make_unique<SlalomOracle>(std::move(params), std::move(support));
  } else if (kind == "linear") {
    auto params = io::linear_from_json(io::read_json(target));
    out.vocab_size = params.w.size();
    out.oracle = std::make_unique<LinearOracle>(std::move(params));
  } else if (kind == "microformer") {
    auto params = microformer::from_json(io::read_json(target));
    out.vocab_size = params.vocab_size();
    out.oracle = std::make_unique<microformer::MicroformerOracle>(std::move(params));
  } else if (kind == "exec" || kind == "tcp") {
    auto options = ExternalOptions::from_environment();
    if (send_tokens) {
      if (!vocab) throw Error(ErrorCode::InvalidParams, "--send-tokens needs --vocab");
      options.send_tokens = vocab;
    }
    out.oracle = ExternalOracle::connect(spec, options);
  } else {
    throw Error(ErrorCode::InvalidParams, "unknown oracle kind '" + kind + "'");
  }
  if (vocab && !out.vocab_size) out.vocab_size = vocab->size();
  return out;
}

TokenSeq parse_sequence(const std::string& ids, const std::string& text, const std::optional<Vocabulary>& vocab) {
  if (!ids.empty() && !text.empty()) throw Error(ErrorCode::InvalidParams, "give either --ids or --text, not both");
  TokenSeq seq;
  if (!ids.empty()) {
    std::string cleaned = ids;
    for (auto& c : cleaned) {
      if (c == ',') c = ' ';
    }
    std::istringstream in(cleaned);
    for (std::string item; in >> item;) {
      TokenId id = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        throw Error(ErrorCode::InvalidParams, "not a token id: '" + item + "'");
      }
      seq.push_back(id);
    }
  } else if (!text.empty()) {
    if (!vocab) throw Error(ErrorCode::InvalidParams, "--text needs --vocab");
    std::istringstream in(text);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    seq = vocab->encode(words);
  }
  if (seq.empty()) throw Error(ErrorCode::EmptySequence, "no input sequence (use --ids or --text)");
  if (vocab) validate_sequence(vocab->size(), seq);
  return seq;
}

std::string token_label(TokenId id, const std::optional<Vocabulary>& vocab) {
  if (vocab && id < vocab->size()) return vocab->token(id);
  return std::to_string(id);
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  io::write_text(path, content);
}

}  // namespace slalom::cli
