#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "difar/index.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"

namespace difar {

/// Ranking produced for one query.
struct QueryResult {
  std::string id;
  RankedList ranking;

  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

inline constexpr std::size_t kMrrCutoff = 1000;

/// 1 / (1-based position of the first gold id within the first `cutoff`
/// entries); 0 when none appears.
inline double reciprocal_rank(const RankedList& ranking, const std::vector<TripletId>& gold,
                              std::size_t cutoff = kMrrCutoff) {
  if (gold.empty()) throw UsageError("reciprocal_rank: empty gold set");
  const std::set<TripletId> g(gold.begin(), gold.end());
  const std::size_t n = std::min(cutoff, ranking.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (g.contains(ranking[i].id)) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline int hits_at_k(const RankedList& ranking, const std::vector<TripletId>& gold, std::size_t k) {
  if (gold.empty()) throw UsageError("hits_at_k: empty gold set");
  if (k == 0) throw UsageError("hits_at_k: K must be >= 1");
  const std::set<TripletId> g(gold.begin(), gold.end());
  const std::size_t n = std::min(k, ranking.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (g.contains(ranking[i].id)) return 1;
  }
  return 0;
}

namespace detail {

inline std::string normalize_label(std::string_view s) {
  std::string out(trim(s));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

/// 1 iff a head or tail label among the top-k facts equals one of the gold
/// entities (trimmed, case-insensitive).
inline int entity_containment(const RankedList& ranking, const std::vector<std::string>& gold_entities,
                              const KGStore& store, std::size_t k = 1) {
  if (gold_entities.empty()) throw UsageError("entity_containment: empty gold entity list");
  if (k == 0) throw UsageError("entity_containment: K must be >= 1");
  std::set<std::string> wanted;
  for (const auto& e : gold_entities) wanted.insert(detail::normalize_label(e));
  const std::size_t n = std::min(k, ranking.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = store.get(ranking[i].id);
    if (wanted.contains(detail::normalize_label(t.head)) || wanted.contains(detail::normalize_label(t.tail))) {
      return 1;
    }
  }
  return 0;
}

struct EvalOptions {
  std::vector<std::size_t> hits_ks{1, 10};
  std::size_t mrr_cutoff = kMrrCutoff;
  std::size_t containment_k = 1;
  const KGStore* store = nullptr;  // required for entity containment
};

struct MetricSummary {
  double mrr = 0.0;
  std::map<std::size_t, double> hits;
  std::size_t n = 0;
};

struct EvalReport {
  MetricSummary overall;
  std::map<std::string, MetricSummary> strata;  // "1", "2", ..., "unknown"
  std::optional<double> entity_containment;
  std::size_t containment_n = 0;

  double mrr() const { return overall.mrr; }
  double hits(std::size_t k) const { return overall.hits.at(k); }
  std::size_t n() const { return overall.n; }
};

/// Macro-averaged metrics with hop strata. Every result id must match a query
/// id and vice versa.
inline EvalReport evaluate(const std::vector<QueryResult>& results, const std::vector<Query>& queries,
                           const EvalOptions& options = {}) {
  std::map<std::string, const Query*> by_id;
  for (const auto& q : queries) {
    if (!by_id.emplace(q.id, &q).second) throw DataError("evaluate: duplicate query id " + q.id);
  }
  std::map<std::string, const QueryResult*> result_by_id;
  for (const auto& r : results) {
    if (!result_by_id.emplace(r.id, &r).second) throw DataError("evaluate: duplicate result id " + r.id);
  }
  std::vector<std::string> missing;
  for (const auto& [id, q] : by_id) {
    if (!result_by_id.contains(id)) missing.push_back("result for query " + id);
  }
  for (const auto& [id, r] : result_by_id) {
    if (!by_id.contains(id)) missing.push_back("query for result " + id);
  }
  if (!missing.empty()) {
    std::string msg = "evaluate: id mismatch, missing ";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += (i ? ", " : "") + missing[i];
    if (missing.size() > 10) msg += ", ... (" + std::to_string(missing.size()) + " total)";
    throw DataError(msg);
  }

  auto ks = options.hits_ks;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  EvalReport report;
  auto add = [&](MetricSummary& s, const RankedList& ranking, const Query& q) {
    s.mrr += reciprocal_rank(ranking, q.gold, options.mrr_cutoff);
    for (auto k : ks) s.hits[k] += hits_at_k(ranking, q.gold, k);
    ++s.n;
  };
  double containment = 0.0;
  // Iterate in id order so sums do not depend on input order.
  for (const auto& [id, q] : by_id) {
    const auto& ranking = result_by_id.at(id)->ranking;
    add(report.overall, ranking, *q);
    add(report.strata[q->hops ? std::to_string(*q->hops) : "unknown"], ranking, *q);
    if (q->gold_entities && !q->gold_entities->empty() && options.store != nullptr) {
      containment += entity_containment(ranking, *q->gold_entities, *options.store, options.containment_k);
      ++report.containment_n;
    }
  }
  auto finish = [&](MetricSummary& s) {
    for (auto k : ks) s.hits.try_emplace(k, 0.0);
    if (s.n == 0) return;
    s.mrr /= static_cast<double>(s.n);
    for (auto& [k, v] : s.hits) v /= static_cast<double>(s.n);
  };
  finish(report.overall);
  for (auto& [name, s] : report.strata) finish(s);
  if (report.containment_n > 0) report.entity_containment = containment / static_cast<double>(report.containment_n);
  return report;
}

namespace detail {

inline nlohmann::ordered_json summary_json(const MetricSummary& s) {
  nlohmann::ordered_json j;
  j["mrr"] = s.mrr;
  nlohmann::ordered_json hits = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s.hits) hits[std::to_string(k)] = v;
  j["hits"] = hits;
  j["n"] = s.n;
  return j;
}

}  // namespace detail

/// {"mrr", "hits", "strata", "entity_containment", "n"} in that order.
inline nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mrr"] = r.overall.mrr;
  nlohmann::ordered_json hits = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.overall.hits) hits[std::to_string(k)] = v;
  j["hits"] = hits;
  nlohmann::ordered_json strata = nlohmann::ordered_json::object();
  for (const auto& [name, s] : r.strata) strata[name] = detail::summary_json(s);
  j["strata"] = strata;
  if (r.entity_containment) {
    j["entity_containment"] = *r.entity_containment;
  } else {
    j["entity_containment"] = nullptr;
  }
  j["n"] = r.overall.n;
  return j;
}

// ---------------------------------------------------------------------------
// Results JSONL: {"id": ..., "ranking": [[triplet_id, score], ...]}

inline std::string format_results(const std::vector<QueryResult>& results) {
  std::string out;
  for (const auto& r : results) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
    for (const auto& e : r.ranking) ranking.push_back({e.id, e.score});
    j["ranking"] = std::move(ranking);
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<QueryResult> parse_results(std::string_view text, std::string_view source = "<results>") {
  std::vector<QueryResult> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QueryResult r;
      r.id = j.at("id").get<std::string>();
      for (const auto& e : j.at("ranking")) {
        r.ranking.push_back({e.at(0).get<TripletId>(), e.at(1).get<double>()});
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<QueryResult> load_results(const std::string& path) {
  return parse_results(read_file(path), path);
}

}  // namespace difar
