// Copyright 2026 The CVA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Column metadata, glossary and ground-truth records in the SemTab
// "Metadata to KG" JSONL layouts.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cva/error.hpp"
#include "cva/hashing.hpp"

namespace cva {

using Warnings = std::vector<std::string>;

struct ColumnMetadata {
  std::string id;
  std::string label;
  std::string table_id;
  std::string table_name;
  std::vector<std::string> table_columns;

  bool operator==(const ColumnMetadata&) const = default;
};

struct GlossaryEntry {
  std::string id;
  std::string label;
  std::string desc;

  bool operator==(const GlossaryEntry&) const = default;
};

/// Column id to the set of glossary ids accepted as correct for it.
struct GroundTruth {
  std::map<std::string, std::set<std::string>> truth;

  std::size_t size() const { return truth.size(); }
  bool empty() const { return truth.empty(); }
  bool operator==(const GroundTruth&) const = default;
};

struct Corpus {
  std::vector<ColumnMetadata> columns;
  std::vector<GlossaryEntry> glossary;
  Warnings warnings;

  std::size_t n_columns() const { return columns.size(); }
  std::size_t n_glossary() const { return glossary.size(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline nlohmann::json parse_object(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(trim(line), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw Error(Errc::MalformedJson, "line is not valid JSON");
  if (!j.is_object()) throw Error(Errc::MalformedJson, "line is not a JSON object");
  return j;
}

inline std::string require_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) throw Error(Errc::MissingField, key);
  if (!it->is_string()) throw Error(Errc::MalformedJson, std::string(key) + " must be a string");
  return it->get<std::string>();
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    fn(lineno, line);
  }
  if (in.bad()) throw Error(Errc::Io, "read failure on " + path.string());
}

inline std::string join_errors(const std::filesystem::path& path,
                               const std::vector<std::pair<std::size_t, std::string>>& errors) {
  std::string msg = std::to_string(errors.size()) + " bad line(s) in " + path.string();
  for (const auto& [lineno, what] : errors) msg += "\n  line " + std::to_string(lineno) + ": " + what;
  return msg;
}

}  // namespace detail

inline ColumnMetadata parse_column_metadata(std::string_view line, Warnings* warnings = nullptr) {
  const auto j = detail::parse_object(line);
  ColumnMetadata m;
  m.id = detail::require_string(j, "id");
  m.label = detail::require_string(j, "label");
  m.table_id = detail::require_string(j, "table_id");
  m.table_name = detail::require_string(j, "table_name");
  auto cols = j.find("table_columns");
  if (cols == j.end() || cols->is_null()) throw Error(Errc::MissingField, "table_columns");
  if (!cols->is_array()) throw Error(Errc::MalformedJson, "table_columns must be an array");
  for (const auto& c : *cols) {
    if (!c.is_string()) throw Error(Errc::MalformedJson, "table_columns entries must be strings");
    m.table_columns.push_back(c.get<std::string>());
  }
  if (m.id.empty()) throw Error(Errc::MissingField, "id (empty)");
  if (m.table_columns.empty()) throw Error(Errc::MalformedJson, "table_columns is empty");
  if (warnings && std::find(m.table_columns.begin(), m.table_columns.end(), m.label) == m.table_columns.end()) {
    warnings->push_back("column " + m.id + ": label \"" + m.label + "\" not among table_columns");
  }
  return m;
}

inline GlossaryEntry parse_glossary_entry(std::string_view line, Warnings* warnings = nullptr) {
  const auto j = detail::parse_object(line);
  GlossaryEntry g;
  g.id = detail::require_string(j, "id");
  g.label = detail::require_string(j, "label");
  if (g.id.empty()) throw Error(Errc::MissingField, "id (empty)");
  auto desc = j.find("desc");
  if (desc == j.end() || desc->is_null()) {
    if (warnings) warnings->push_back("glossary " + g.id + ": no desc, using empty text");
  } else if (!desc->is_string()) {
    throw Error(Errc::MalformedJson, "desc must be a string");
  } else {
    g.desc = desc->get<std::string>();
  }
  return g;
}

/// Canonical object form; key order follows the published listings.
inline nlohmann::ordered_json to_json(const ColumnMetadata& m) {
  nlohmann::ordered_json j;
  j["id"] = m.id;
  j["label"] = m.label;
  j["table_id"] = m.table_id;
  j["table_name"] = m.table_name;
  j["table_columns"] = m.table_columns;
  return j;
}

inline nlohmann::ordered_json to_json(const GlossaryEntry& g) {
  nlohmann::ordered_json j;
  j["id"] = g.id;
  j["label"] = g.label;
  j["desc"] = g.desc;
  return j;
}

inline std::string to_jsonl(const ColumnMetadata& m) { return to_json(m).dump(); }
inline std::string to_jsonl(const GlossaryEntry& g) { return to_json(g).dump(); }

template <typename T>
std::string to_jsonl(const std::vector<T>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_jsonl(r);
    out += '\n';
  }
  return out;
}

inline std::vector<ColumnMetadata> load_column_metadata(const std::filesystem::path& path, Warnings* warnings = nullptr) {
  std::vector<ColumnMetadata> out;
  std::vector<std::pair<std::size_t, std::string>> errors;
  std::unordered_set<std::string> seen;
  detail::for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    try {
      auto m = parse_column_metadata(line, warnings);
      if (!seen.insert(m.id).second) {
        errors.emplace_back(lineno, "DuplicateId: column " + m.id);
        return;
      }
      out.push_back(std::move(m));
    } catch (const Error& e) {
      errors.emplace_back(lineno, e.what());
    }
  });
  if (!errors.empty()) {
    const bool only_dupes = std::all_of(errors.begin(), errors.end(),
                                        [](const auto& e) { return e.second.rfind("DuplicateId", 0) == 0; });
    throw Error(only_dupes ? Errc::DuplicateId : Errc::LineErrors, detail::join_errors(path, errors));
  }
  return out;
}

inline std::vector<GlossaryEntry> load_glossary(const std::filesystem::path& path, Warnings* warnings = nullptr) {
  std::vector<GlossaryEntry> out;
  std::vector<std::pair<std::size_t, std::string>> errors;
  std::unordered_set<std::string> seen;
  detail::for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    try {
      auto g = parse_glossary_entry(line, warnings);
      if (!seen.insert(g.id).second) {
        errors.emplace_back(lineno, "DuplicateId: glossary " + g.id);
        return;
      }
      out.push_back(std::move(g));
    } catch (const Error& e) {
      errors.emplace_back(lineno, e.what());
    }
  });
  if (!errors.empty()) {
    const bool only_dupes = std::all_of(errors.begin(), errors.end(),
                                        [](const auto& e) { return e.second.rfind("DuplicateId", 0) == 0; });
    throw Error(only_dupes ? Errc::DuplicateId : Errc::LineErrors, detail::join_errors(path, errors));
  }
  return out;
}

inline Corpus load_corpus(const std::filesystem::path& metadata_path, const std::filesystem::path& glossary_path) {
  Corpus c;
  c.columns = load_column_metadata(metadata_path, &c.warnings);
  c.glossary = load_glossary(glossary_path, &c.warnings);
  return c;
}

/// Layout written by `cva ingest`.
struct CorpusDir {
  static constexpr const char* kMetadata = "metadata.jsonl";
  static constexpr const char* kGlossary = "glossary.jsonl";
  static constexpr const char* kGroundTruth = "ground_truth.jsonl";
};

inline Corpus load_corpus_dir(const std::filesystem::path& dir) {
  return load_corpus(dir / CorpusDir::kMetadata, dir / CorpusDir::kGlossary);
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
  GroundTruth gt;
  std::vector<std::pair<std::size_t, std::string>> errors;
  Errc first_code = Errc::LineErrors;
  detail::for_each_line(path, [&](std::size_t lineno, const std::string& line) {
    try {
      const auto j = detail::parse_object(line);
      const auto col = detail::require_string(j, "id");
      auto it = j.find("gt");
      if (it == j.end() || it->is_null()) throw Error(Errc::MissingField, "gt");
      std::set<std::string> ids;
      if (it->is_string()) {
        ids.insert(it->get<std::string>());
      } else if (it->is_array()) {
        for (const auto& v : *it) {
          if (!v.is_string()) throw Error(Errc::MalformedJson, "gt entries must be strings");
          ids.insert(v.get<std::string>());
        }
      } else {
        throw Error(Errc::MalformedJson, "gt must be a string or a list of strings");
      }
      if (ids.empty()) throw Error(Errc::EmptyTruthSet, "column " + col);
      if (!gt.truth.emplace(col, std::move(ids)).second) throw Error(Errc::DuplicateId, "column " + col);
    } catch (const Error& e) {
      if (errors.empty()) first_code = e.code();
      errors.emplace_back(lineno, e.what());
    }
  });
  if (!errors.empty()) throw Error(errors.size() == 1 ? first_code : Errc::LineErrors, detail::join_errors(path, errors));
  return gt;
}

inline std::string to_jsonl(const GroundTruth& gt) {
  std::string out;
  for (const auto& [col, ids] : gt.truth) {
    nlohmann::ordered_json j;
    j["id"] = col;
    if (ids.size() == 1) {
      j["gt"] = *ids.begin();
    } else {
      j["gt"] = std::vector<std::string>(ids.begin(), ids.end());
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Drops ground-truth rows whose column id is not in the corpus; returns one
/// diagnostic per dropped row.
inline Warnings restrict_to_corpus(GroundTruth& gt, const Corpus& corpus) {
  std::unordered_set<std::string> known;
  for (const auto& c : corpus.columns) known.insert(c.id);
  Warnings dropped;
  for (auto it = gt.truth.begin(); it != gt.truth.end();) {
    if (!known.count(it->first)) {
      dropped.push_back("ground truth references unknown column " + it->first);
      it = gt.truth.erase(it);
    } else {
      ++it;
    }
  }
  return dropped;
}

}  // namespace cva
