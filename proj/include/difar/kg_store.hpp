#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "difar/common.hpp"

namespace difar {

using TripletId = std::uint32_t;

/// One fact (head, relation, tail). Labels are surface strings, trimmed.
struct Triplet {
  TripletId id = 0;
  std::string head;
  std::string relation;
  std::string tail;
  std::string external_id;  // optional fourth TSV column, opaque

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

/// Immutable, id-addressable triplet collection. Ids are dense, 0..size()-1,
/// in first-occurrence order of the source.
class KGStore {
 public:
  KGStore() = default;

  std::size_t size() const noexcept { return triplets_.size(); }
  bool empty() const noexcept { return triplets_.empty(); }

  const Triplet& get(std::size_t id) const {
    if (id >= triplets_.size()) {
      throw DataError("triplet id " + std::to_string(id) + " out of range (store has " +
                      std::to_string(triplets_.size()) + ")");
    }
    return triplets_[id];
  }

  const Triplet& operator[](std::size_t id) const { return triplets_[id]; }

  auto begin() const noexcept { return triplets_.begin(); }
  auto end() const noexcept { return triplets_.end(); }

  /// Number of exact duplicate lines dropped while loading.
  std::size_t duplicates_dropped() const noexcept { return duplicates_dropped_; }

  /// Adds a fact unless the trimmed (head, relation, tail) is already present.
  /// Returns true when it was inserted.
  bool add(std::string_view head, std::string_view relation, std::string_view tail,
           std::string_view external_id = {}) {
    Key key{std::string(trim(head)), std::string(trim(relation)), std::string(trim(tail))};
    if (std::get<0>(key).empty() || std::get<1>(key).empty() || std::get<2>(key).empty()) {
      throw DataError("triplet has an empty field");
    }
    auto [it, inserted] = seen_.emplace(key, static_cast<TripletId>(triplets_.size()));
    if (!inserted) {
      ++duplicates_dropped_;
      return false;
    }
    triplets_.push_back(Triplet{it->second, std::get<0>(key), std::get<1>(key),
                                std::get<2>(key), std::string(trim(external_id))});
    return true;
  }

 private:
  using Key = std::tuple<std::string, std::string, std::string>;

  std::vector<Triplet> triplets_;
  std::map<Key, TripletId> seen_;
  std::size_t duplicates_dropped_ = 0;
};

/// Parses a head<TAB>relation<TAB>tail[<TAB>external_id] stream. `source`
/// names the input in error messages.
inline KGStore parse_triples(std::istream& in, std::string_view source = "<stream>") {
  KGStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;

    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (fields.size() != 3 && fields.size() != 4) {
      throw DataError(where + ": expected 3 or 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (trim(fields[i]).empty()) {
        throw DataError(where + ": empty field " + std::to_string(i + 1));
      }
    }
    store.add(fields[0], fields[1], fields[2], fields.size() == 4 ? fields[3] : std::string_view{});
  }
  return store;
}

inline KGStore load_triples(const std::string& path) {
  std::istringstream in(read_file(path));
  return parse_triples(in, path);
}

/// Inverse of parse_triples (3 columns, or 4 when any external id is set).
inline std::string format_triples(const KGStore& store) {
  std::string out;
  for (const auto& t : store) {
    out += t.head;
    out += '\t';
    out += t.relation;
    out += '\t';
    out += t.tail;
    if (!t.external_id.empty()) {
      out += '\t';
      out += t.external_id;
    }
    out += '\n';
  }
  return out;
}

}  // namespace difar
