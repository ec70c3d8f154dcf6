#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "difar/common.hpp"
#include "difar/kg_store.hpp"

namespace difar {

/// A natural-language input with its gold facts and optional analysis labels.
struct Query {
  std::string id;
  std::string text;
  std::vector<TripletId> gold;
  std::optional<int> hops;
  std::optional<std::vector<std::string>> gold_entities;

  friend bool operator==(const Query&, const Query&) = default;
};

inline nlohmann::ordered_json to_json(const Query& q) {
  nlohmann::ordered_json j;
  j["id"] = q.id;
  j["text"] = q.text;
  j["gold"] = q.gold;
  if (q.hops) j["hops"] = *q.hops;
  if (q.gold_entities) j["gold_entities"] = *q.gold_entities;
  return j;
}

inline Query query_from_json(const nlohmann::json& j) {
  Query q;
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.gold = j.at("gold").get<std::vector<TripletId>>();
  if (auto it = j.find("hops"); it != j.end() && !it->is_null()) q.hops = it->get<int>();
  if (auto it = j.find("gold_entities"); it != j.end() && !it->is_null()) {
    q.gold_entities = it->get<std::vector<std::string>>();
  }
  return q;
}

inline std::vector<Query> parse_queries(std::istream& in, std::string_view source = "<stream>") {
  std::vector<Query> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(query_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Query> load_queries(const std::string& path) {
  std::istringstream in(read_file(path));
  return parse_queries(in, path);
}

inline std::string format_queries(const std::vector<Query>& queries) {
  std::string out;
  for (const auto& q : queries) {
    out += to_json(q).dump();
    out += '\n';
  }
  return out;
}

/// Throws DataError when a gold id does not exist in the store.
inline void check_gold_ids(const std::vector<Query>& queries, const KGStore& store) {
  for (const auto& q : queries) {
    for (auto g : q.gold) {
      if (g >= store.size()) {
        throw DataError("query " + q.id + ": gold id " + std::to_string(g) +
                        " not in knowledge graph of " + std::to_string(store.size()) +
                        " triplets");
      }
    }
  }
}

}  // namespace difar
