#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slalom/core.hpp"
#include "slalom/slalom_model.hpp"

namespace stub {

using nlohmann::json;

// Scripted wire-protocol peer used by the client tests.
struct Model {
  enum class Kind { Echo, Linear, Slalom, Logits, Error, Malformed, NoId, Silent, Crash };
  Kind kind = Kind::Linear;
  std::vector<double> weights;
  double bias = 0.0;
  std::optional<slalom::SlalomParams> params;
  std::optional<slalom::Vocabulary> vocab;
  std::size_t classes = 2;
  std::size_t handshake_version = 1;

  // Returns the response line, or nothing if the frame gets no reply.
  std::optional<std::string> handle(const std::string& line) const {
    json frame;
    try {
      frame = json::parse(line);
    } catch (const json::exception&) {
      return json{{"op", "error"}, {"message", "unparseable frame"}}.dump();
    }
    const std::string op = frame.value("op", "");
    if (op == "hello") {
      return json{{"op", "hello"}, {"version", handshake_version}, {"classes", classes}}.dump();
    }
    if (op != "score") return json{{"op", "error"}, {"message", "unknown op " + op}}.dump();
    const auto id = frame.value("id", std::uint64_t{0});
    slalom::TokenSeq ids;
    if (frame.contains("tokens")) {
      for (const auto& t : frame["tokens"]) ids.push_back(vocab->id(t.get<std::string>()));
    } else {
      ids = frame.at("ids").get<slalom::TokenSeq>();
    }
    switch (kind) {
      case Kind::Echo:
        return json{{"op", "score"}, {"id", id}, {"log_odds", 0.0}}.dump();
      case Kind::Linear: {
        double f = bias;
        for (auto t : ids) f += t < weights.size() ? weights[t] : 0.0;
        return json{{"op", "score"}, {"id", id}, {"log_odds", f}}.dump();
      }
      case Kind::Slalom:
        return json{{"op", "score"}, {"id", id}, {"log_odds", slalom::eval(*params, ids)}}.dump();
      case Kind::Logits: {
        std::vector<double> logits(classes, 0.0);
        logits[1] = static_cast<double>(ids.size());
        return json{{"op", "score"}, {"id", id}, {"logits", logits}}.dump();
      }
      case Kind::Error:
        return json{{"op", "error"}, {"id", id}, {"message", "model refused input"}}.dump();
      case Kind::Malformed:
        return std::string("this is not json");
      case Kind::NoId:
        return json{{"op", "score"}, {"log_odds", 1.0}}.dump();
      case Kind::Silent:
      case Kind::Crash:
        return std::nullopt;
    }
    return std::nullopt;
  }
};

inline std::optional<Model::Kind> kind_from(const std::string& name) {
  using K = Model::Kind;
  if (name == "echo") return K::Echo;
  if (name == "linear") return K::Linear;
  if (name == "slalom") return K::Slalom;
  if (name == "logits") return K::Logits;
  if (name == "error") return K::Error;
  if (name == "malformed") return K::Malformed;
  if (name == "noid") return K::NoId;
  if (name == "silent") return K::Silent;
  if (name == "crash") return K::Crash;
  return std::nullopt;
}

}  // namespace stub
