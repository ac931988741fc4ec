#include "slalom/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace slalom::io {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  // A trailing newline must not produce an extra empty token.
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocabulary(std::move(tokens));
}

void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

std::vector<LabeledRecord> read_records(std::istream& in) {
  std::vector<LabeledRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": " + e.what());
    }
    LabeledRecord rec;
    rec.ids = j.at("ids").get<TokenSeq>();
    rec.label = j.at("label").get<int>();
    if (rec.label != 0 && rec.label != 1) {
      throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": label must be 0 or 1");
    }
    if (auto it = j.find("log_odds"); it != j.end() && !it->is_null()) {
      rec.log_odds = it->get<double>();
      if (!std::isfinite(*rec.log_odds)) {
        throw Error(ErrorCode::Io, "line " + std::to_string(line_no) + ": non-finite log_odds");
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_records(std::ostream& out, const std::vector<LabeledRecord>& records) {
  for (const auto& rec : records) {
    json j = {{"ids", rec.ids}, {"label", rec.label}};
    if (rec.log_odds) j["log_odds"] = *rec.log_odds;
    out << j.dump() << '\n';
  }
}

LabeledDataset read_dataset(const std::filesystem::path& data, const std::filesystem::path& vocab) {
  LabeledDataset ds;
  ds.vocab = read_vocabulary(vocab);
  std::ifstream in(data);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + data.string());
  ds.records = read_records(in);
  for (const auto& rec : ds.records) validate_sequence(ds.vocab.size(), rec.ids);
  return ds;
}

json params_to_json(const SlalomParams& p) {
  return json{{"s", p.s}, {"v", p.v}, {"gamma", p.gamma}};
}

SlalomParams params_from_json(const json& j) {
  SlalomParams p;
  p.s = j.at("s").get<std::vector<double>>();
  p.v = j.at("v").get<std::vector<double>>();
  p.gamma = j.value("gamma", 0.0);
  validate_params(p);
  return p;
}

SlalomParams read_params(const std::filesystem::path& path) {
  try {
    return params_from_json(read_json(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
}

json linear_to_json(const LinearModelParams& p) { return json{{"w", p.w}, {"b", p.b}}; }

LinearModelParams linear_from_json(const json& j) {
  if (!j.is_object() || !j.contains("w")) throw Error(ErrorCode::InvalidParams, "linear model needs a \"w\" array");
  LinearModelParams p;
  p.w = j.at("w").get<std::vector<double>>();
  p.b = j.value("b", 0.0);
  for (double w : p.w) {
    if (!std::isfinite(w)) throw Error(ErrorCode::InvalidParams, "non-finite linear weight");
  }
  if (!std::isfinite(p.b)) throw Error(ErrorCode::InvalidParams, "non-finite linear offset");
  return p;
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Io, path.string() + ": " + e.what());
  }
}

}  // namespace slalom::io
