// Copyright 2026 The MBS Toolkit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Multilingual corpora: manifest loading, byte-level tokenization and
// deterministic fixed-length segment draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbs/error.hpp"
#include "mbs/rng.hpp"

namespace mbs {

using Token = std::uint8_t;
inline constexpr int kVocabSize = 256;

struct LanguageEntry {
  std::string id;
  std::uint64_t byte_size = 0;
  std::filesystem::path train_path;
  std::filesystem::path eval_path;
};

struct LanguageManifest {
  std::vector<LanguageEntry> entries;

  const LanguageEntry* find(std::string_view id) const {
    for (const auto& e : entries)
      if (e.id == id) return &e;
    return nullptr;
  }

  const LanguageEntry& at(std::string_view id) const {
    if (const auto* e = find(id)) return *e;
    throw ConfigError("unknown language '" + std::string(id) + "'");
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.id);
    return out;
  }

  void validate() const {
    if (entries.empty()) throw ConfigError("manifest has no languages");
    std::set<std::string> seen;
    bool any_positive = false;
    for (const auto& e : entries) {
      if (e.id.empty()) throw ConfigError("manifest entry with empty id");
      if (!seen.insert(e.id).second)
        throw ConfigError("duplicate language id '" + e.id + "' in manifest");
      any_positive |= e.byte_size > 0;
    }
    if (!any_positive)
      throw ConfigError("manifest: every language has byte_size 0");
  }
};

namespace detail {

inline std::uint64_t parse_byte_size(const nlohmann::json& v,
                                     const std::string& id) {
  if (!v.is_number())
    throw ConfigError("language '" + id + "': \"bytes\" must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d) || d < 0)
    throw ConfigError("language '" + id + "': negative byte_size " +
                      v.dump());
  return static_cast<std::uint64_t>(std::llround(d));
}

}  // namespace detail

// Parses {"languages":[{"id":..., "bytes":..., "train":..., "eval":...}]}.
// Relative corpus paths resolve against base_dir. A missing "bytes" field is
// filled from the size of the train file.
inline LanguageManifest manifest_from_json(const nlohmann::json& doc,
                                           const std::filesystem::path& base_dir) {
  if (!doc.is_object() || !doc.contains("languages") ||
      !doc["languages"].is_array())
    throw ConfigError("manifest: expected an object with a \"languages\" array");
  LanguageManifest m;
  for (const auto& item : doc["languages"]) {
    if (!item.is_object() || !item.contains("id") || !item["id"].is_string())
      throw ConfigError("manifest: entry without string \"id\": " + item.dump());
    LanguageEntry e;
    e.id = item["id"].get<std::string>();
    for (auto it = item.begin(); it != item.end(); ++it) {
      if (it.key() != "id" && it.key() != "bytes" && it.key() != "train" &&
          it.key() != "eval")
        throw ConfigError("language '" + e.id + "': unknown key \"" +
                          it.key() + "\"");
    }
    auto resolve = [&](const char* key) -> std::filesystem::path {
      if (!item.contains(key)) return {};
      std::filesystem::path p = item[key].get<std::string>();
      return p.is_relative() ? base_dir / p : p;
    };
    e.train_path = resolve("train");
    e.eval_path = resolve("eval");
    if (item.contains("bytes")) {
      e.byte_size = detail::parse_byte_size(item["bytes"], e.id);
    } else {
      if (e.train_path.empty())
        throw ConfigError("language '" + e.id +
                          "': neither \"bytes\" nor \"train\" given");
      std::error_code ec;
      const auto size = std::filesystem::file_size(e.train_path, ec);
      if (ec)
        throw ConfigError("language '" + e.id + "': cannot stat " +
                          e.train_path.string());
      e.byte_size = size;
    }
    m.entries.push_back(std::move(e));
  }
  m.validate();
  return m;
}

inline LanguageManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("manifest not found: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(doc, path.parent_path());
}

inline nlohmann::ordered_json manifest_to_json(const LanguageManifest& m) {
  nlohmann::ordered_json langs = nlohmann::ordered_json::array();
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["bytes"] = e.byte_size;
    if (!e.train_path.empty()) j["train"] = e.train_path.string();
    if (!e.eval_path.empty()) j["eval"] = e.eval_path.string();
    langs.push_back(std::move(j));
  }
  return {{"languages", langs}};
}

// Byte-level tokenizer: the token id is the byte value.
inline std::vector<Token> tokenize(std::string_view text) {
  return {text.begin(), text.end()};
}

inline std::string detokenize(std::span<const Token> tokens) {
  return {tokens.begin(), tokens.end()};
}

struct Segment {
  std::string lang_id;
  std::vector<Token> tokens;

  std::size_t length() const { return tokens.size(); }
};

enum class Source { train, eval };

inline std::string_view to_string(Source s) {
  return s == Source::train ? "train" : "eval";
}

// Token streams per language, immutable once built.
class Corpus {
 public:
  Corpus() = default;

  static Corpus load(const LanguageManifest& manifest) {
    Corpus c;
    for (const auto& e : manifest.entries) {
      c.order_.push_back(e.id);
      if (!e.train_path.empty())
        c.streams_[{e.id, Source::train}] = read_file(e.id, e.train_path);
      if (!e.eval_path.empty())
        c.streams_[{e.id, Source::eval}] = read_file(e.id, e.eval_path);
    }
    return c;
  }

  void add(std::string lang, Source source, std::string_view text) {
    if (std::find(order_.begin(), order_.end(), lang) == order_.end())
      order_.push_back(lang);
    streams_[{std::move(lang), source}] = tokenize(text);
  }

  bool has(std::string_view lang, Source source) const {
    return streams_.count({std::string(lang), source}) != 0;
  }

  const std::vector<Token>& tokens(std::string_view lang, Source source) const {
    auto it = streams_.find({std::string(lang), source});
    if (it == streams_.end()) {
      const bool known =
          std::find(order_.begin(), order_.end(), lang) != order_.end();
      throw RuntimeError(
          known ? "language '" + std::string(lang) + "' has no " +
                      std::string(to_string(source)) + " corpus"
                : "unknown language '" + std::string(lang) + "'");
    }
    return it->second;
  }

  const std::vector<std::string>& languages() const { return order_; }

 private:
  static std::vector<Token> read_file(const std::string& lang,
                                      const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw ConfigError("language '" + lang + "': corpus file not found: " +
                        path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  std::vector<std::string> order_;
  std::map<std::pair<std::string, Source>, std::vector<Token>> streams_;
};

// Draws `count` contiguous windows of seg_len tokens at uniformly random start
// offsets (with replacement). Stream: Xoshiro256::keyed(seed, lang).
inline std::vector<Segment> draw_segments(const Corpus& corpus,
                                          std::string_view lang, Source source,
                                          std::size_t seg_len, std::size_t count,
                                          std::uint64_t seed) {
  if (seg_len == 0) throw ConfigError("segment length must be positive");
  const auto& stream = corpus.tokens(lang, source);
  if (stream.size() < seg_len)
    throw RuntimeError("language '" + std::string(lang) +
                       "': corpus too short (" + std::to_string(stream.size()) +
                       " tokens < segment length " + std::to_string(seg_len) +
                       ")");
  std::vector<Segment> out;
  out.reserve(count);
  auto rng = Xoshiro256::keyed(seed, lang);
  const std::uint64_t n_starts = stream.size() - seg_len + 1;
  for (std::size_t i = 0; i < count; ++i) {
    const auto start = static_cast<std::size_t>(rng.uniform_below(n_starts));
    out.push_back({std::string(lang),
                   {stream.begin() + static_cast<std::ptrdiff_t>(start),
                    stream.begin() + static_cast<std::ptrdiff_t>(start + seg_len)}});
  }
  return out;
}

}  // namespace mbs
