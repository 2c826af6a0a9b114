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

// Calibration plans: how many segments each language contributes.
//
// MBS allocates proportionally to each language's share of the model's
// training bytes; Equal splits the total evenly; Monolingual spends the whole
// budget on one language.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mbs/corpus.hpp"
#include "mbs/error.hpp"

namespace mbs {

enum class PlanPolicy { mbs, equal, monolingual };

inline std::string to_string(PlanPolicy p) {
  switch (p) {
    case PlanPolicy::mbs: return "mbs";
    case PlanPolicy::equal: return "equal";
    case PlanPolicy::monolingual: return "monolingual";
  }
  return "?";
}

inline PlanPolicy parse_policy(std::string_view s) {
  if (s == "mbs") return PlanPolicy::mbs;
  if (s == "equal") return PlanPolicy::equal;
  if (s == "mono" || s == "monolingual") return PlanPolicy::monolingual;
  throw ConfigError("unknown plan policy '" + std::string(s) + "'");
}

struct PlanEntry {
  std::string lang_id;
  std::uint64_t count = 0;

  bool operator==(const PlanEntry&) const = default;
};

struct CalibrationPlan {
  PlanPolicy policy = PlanPolicy::mbs;
  std::string monolingual_lang;  // set only for PlanPolicy::monolingual
  std::uint64_t total = 0;
  std::vector<PlanEntry> counts;  // manifest order

  std::uint64_t count(std::string_view lang) const {
    for (const auto& e : counts)
      if (e.lang_id == lang) return e.count;
    return 0;
  }

  std::uint64_t sum() const {
    std::uint64_t s = 0;
    for (const auto& e : counts) s += e.count;
    return s;
  }

  bool operator==(const CalibrationPlan&) const = default;
};

namespace detail {

// Index with the largest primary key. Ties go to the larger raw share when
// prefer_larger_raw, otherwise to the smaller one; then to the
// lexicographically smaller id.
template <class Key>
std::size_t pick_max(const std::vector<Key>& primary,
                     const std::vector<double>& raw,
                     const std::vector<std::string>& ids,
                     const std::vector<bool>& eligible, bool prefer_larger_raw) {
  std::size_t best = primary.size();
  for (std::size_t i = 0; i < primary.size(); ++i) {
    if (!eligible[i]) continue;
    if (best == primary.size()) {
      best = i;
      continue;
    }
    if (primary[i] != primary[best]) {
      if (primary[i] > primary[best]) best = i;
    } else if (raw[i] != raw[best]) {
      if ((raw[i] > raw[best]) == prefer_larger_raw) best = i;
    } else if (ids[i] < ids[best]) {
      best = i;
    }
  }
  return best;
}

inline std::size_t active_languages(const LanguageManifest& m) {
  return static_cast<std::size_t>(
      std::count_if(m.entries.begin(), m.entries.end(),
                    [](const LanguageEntry& e) { return e.byte_size > 0; }));
}

}  // namespace detail

/// Proportional allocation with every represented language getting at least
/// one segment.
///
/// raw_i = total * bytes_i / sum(bytes), a_i = max(1, floor(raw_i)). An
/// excess is removed one segment at a time from the language with the largest
/// a_i (ties: smaller raw_i gives first, which keeps counts monotone in
/// bytes); a deficit is filled one at a time by the largest remainder
/// raw_i - a_i (ties: larger raw_i). Final tie: lexicographically smaller id.
inline CalibrationPlan plan_mbs(const LanguageManifest& manifest,
                                std::uint64_t total) {
  manifest.validate();
  const std::size_t active = detail::active_languages(manifest);
  if (total < active)
    throw ConfigError("MBS plan: total " + std::to_string(total) +
                      " is smaller than the " + std::to_string(active) +
                      " represented languages");
  long double bytes_sum = 0;
  for (const auto& e : manifest.entries) bytes_sum += e.byte_size;

  const std::size_t n = manifest.entries.size();
  std::vector<double> raw(n), frac(n);
  std::vector<std::int64_t> alloc(n);
  std::vector<bool> eligible(n);
  const auto ids = manifest.ids();
  std::int64_t sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = manifest.entries[i];
    eligible[i] = e.byte_size > 0;
    raw[i] = static_cast<double>(static_cast<long double>(total) * e.byte_size /
                                 bytes_sum);
    const double fl = std::floor(raw[i]);
    alloc[i] = eligible[i] ? std::max<std::int64_t>(1, static_cast<std::int64_t>(fl)) : 0;
    sum += alloc[i];
  }
  const auto target = static_cast<std::int64_t>(total);
  while (sum > target) {
    // Only languages above the one-segment floor may give a segment back.
    std::vector<bool> can_give(n);
    for (std::size_t i = 0; i < n; ++i) can_give[i] = eligible[i] && alloc[i] > 1;
    const auto i = detail::pick_max(alloc, raw, ids, can_give, false);
    --alloc[i];
    --sum;
  }
  // Remainder raw_i - a_i: equals the fractional part for languages left at
  // floor(raw_i), negative for languages lifted to the one-segment floor.
  while (sum < target) {
    for (std::size_t k = 0; k < n; ++k) frac[k] = raw[k] - static_cast<double>(alloc[k]);
    const auto i = detail::pick_max(frac, raw, ids, eligible, true);
    ++alloc[i];
    ++sum;
  }

  CalibrationPlan plan{PlanPolicy::mbs, {}, total, {}};
  for (std::size_t i = 0; i < n; ++i)
    plan.counts.push_back({ids[i], static_cast<std::uint64_t>(alloc[i])});
  return plan;
}

/// floor(total/k) each; the remainder goes one apiece to the languages with
/// the most training bytes.
inline CalibrationPlan plan_equal(const LanguageManifest& manifest,
                                  std::uint64_t total) {
  manifest.validate();
  const std::size_t k = detail::active_languages(manifest);
  if (total < k)
    throw ConfigError("equal plan: total " + std::to_string(total) +
                      " is smaller than the " + std::to_string(k) +
                      " represented languages");
  const std::uint64_t base = total / k;
  std::uint64_t remainder = total % k;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    if (manifest.entries[i].byte_size > 0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = manifest.entries[a];
    const auto& eb = manifest.entries[b];
    if (ea.byte_size != eb.byte_size) return ea.byte_size > eb.byte_size;
    return ea.id < eb.id;
  });
  std::vector<std::uint64_t> counts(manifest.entries.size(), 0);
  for (std::size_t i : order) {
    counts[i] = base + (remainder > 0 ? 1 : 0);
    if (remainder > 0) --remainder;
  }

  CalibrationPlan plan{PlanPolicy::equal, {}, total, {}};
  for (std::size_t i = 0; i < manifest.entries.size(); ++i)
    plan.counts.push_back({manifest.entries[i].id, counts[i]});
  return plan;
}

inline CalibrationPlan plan_monolingual(const LanguageManifest& manifest,
                                        std::string_view lang,
                                        std::uint64_t total) {
  if (total == 0) throw ConfigError("monolingual plan: total must be positive");
  manifest.at(lang);
  CalibrationPlan plan{PlanPolicy::monolingual, std::string(lang), total, {}};
  for (const auto& e : manifest.entries)
    plan.counts.push_back({e.id, e.id == lang ? total : 0});
  return plan;
}

inline void validate_plan(const CalibrationPlan& plan) {
  if (plan.total == 0) throw ConfigError("plan total must be positive");
  if (plan.sum() != plan.total)
    throw ConfigError("plan counts sum to " + std::to_string(plan.sum()) +
                      ", expected total " + std::to_string(plan.total));
  if (plan.policy == PlanPolicy::monolingual) {
    const auto nonzero = std::count_if(plan.counts.begin(), plan.counts.end(),
                                       [](const PlanEntry& e) { return e.count > 0; });
    if (nonzero != 1 || plan.count(plan.monolingual_lang) != plan.total)
      throw ConfigError("monolingual plan must put all segments on '" +
                        plan.monolingual_lang + "'");
  }
}

/// Draws the planned segments, language by language in plan order.
inline std::vector<Segment> materialize(const CalibrationPlan& plan,
                                        const Corpus& corpus,
                                        std::size_t seg_len, std::uint64_t seed,
                                        Source source = Source::train) {
  if (plan.sum() == 0) throw ConfigError("plan has no active languages");
  validate_plan(plan);
  std::vector<Segment> out;
  out.reserve(plan.total);
  for (const auto& e : plan.counts) {
    if (e.count == 0) continue;
    try {
      auto segs = draw_segments(corpus, e.lang_id, source, seg_len, e.count, seed);
      std::move(segs.begin(), segs.end(), std::back_inserter(out));
    } catch (const RuntimeError& err) {
      throw RuntimeError("calibration language '" + e.lang_id + "': " + err.what());
    }
  }
  return out;
}

inline nlohmann::ordered_json plan_to_json(const CalibrationPlan& plan) {
  nlohmann::ordered_json j;
  j["policy"] = to_string(plan.policy);
  if (plan.policy == PlanPolicy::monolingual) j["lang"] = plan.monolingual_lang;
  j["total"] = plan.total;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& e : plan.counts) counts[e.lang_id] = e.count;
  j["counts"] = counts;
  return j;
}

inline CalibrationPlan plan_from_json(const nlohmann::ordered_json& j) {
  CalibrationPlan plan;
  try {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "policy" && it.key() != "lang" && it.key() != "total" &&
          it.key() != "counts")
        throw ConfigError("plan: unknown key \"" + it.key() + "\"");
    plan.policy = parse_policy(j.at("policy").get<std::string>());
    if (plan.policy == PlanPolicy::monolingual)
      plan.monolingual_lang = j.at("lang").get<std::string>();
    plan.total = j.at("total").get<std::uint64_t>();
    for (const auto& [lang, count] : j.at("counts").items())
      plan.counts.push_back({lang, count.get<std::uint64_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  validate_plan(plan);
  return plan;
}

}  // namespace mbs
