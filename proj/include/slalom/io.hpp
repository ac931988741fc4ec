#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom::io {

using nlohmann::json;

/// One token per line, line number = id. Trailing '\r' is stripped.
Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

/// NDJSON: {"ids":[...], "label":0|1, "log_odds":x?} per line. Blank lines are skipped.
std::vector<LabeledRecord> read_records(std::istream& in);
void write_records(std::ostream& out, const std::vector<LabeledRecord>& records);
LabeledDataset read_dataset(const std::filesystem::path& data, const std::filesystem::path& vocab);

json params_to_json(const SlalomParams& p);
SlalomParams params_from_json(const json& j);
SlalomParams read_params(const std::filesystem::path& path);

/// {"w":[...], "b":x}
json linear_to_json(const LinearModelParams& p);
LinearModelParams linear_from_json(const json& j);

/// Parses a JSON file, reporting syntax errors as Io.
json read_json(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace slalom::io
