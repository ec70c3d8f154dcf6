#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "difar/common.hpp"
#include "difar/kg_store.hpp"
#include "difar/query.hpp"

namespace difar {

struct SynthConfig {
  std::uint32_t n_entities = 40;
  std::uint32_t n_relations = 20;
  std::uint32_t n_triplets = 1000;
  std::uint32_t queries_per_triplet = 1;
  double multi_hop_fraction = 0.2;
  double distractor_rate = 0.1;
  std::uint64_t seed = 0;
  /// Entities are split into this many types and every relation maps one
  /// type to a different one. Lowered automatically (down to 1, untyped)
  /// when the typed graph cannot hold n_triplets distinct facts.
  std::uint32_t entity_types = 4;
};

struct SynthData {
  KGStore store;
  std::vector<Query> train;
  std::vector<Query> valid;
  std::vector<Query> test;

  std::size_t query_count() const { return train.size() + valid.size() + test.size(); }
};

namespace detail {

inline constexpr std::array<std::string_view, 32> kAdjectives = {
    "amber",  "silver", "crimson", "quiet",  "golden", "hidden", "northern", "ancient",
    "bright", "frozen", "wild",    "hollow", "royal",  "velvet", "iron",     "misty",
    "rapid",  "gentle", "scarlet", "lunar",  "solar",  "coral",  "emerald",  "dusty",
    "silent", "proud",  "swift",   "humble", "copper", "ivory",  "jade",     "stormy"};

inline constexpr std::array<std::string_view, 32> kNouns = {
    "falcon", "river",   "harbor", "meadow", "tower",  "forest", "lantern", "valley",
    "anchor", "canyon",  "orchard", "summit", "bridge", "island", "garden",  "citadel",
    "beacon", "glacier", "prairie", "delta",  "fjord",  "grove",  "mesa",    "reef",
    "spire",  "tundra",  "oasis",  "quarry", "ridge",  "bay",    "marsh",   "dune"};

inline constexpr std::array<std::string_view, 40> kRelationPhrases = {
    "place of birth",   "capital",         "spouse",          "employer",
    "founder",          "home country",    "native language", "head coach",
    "record label",     "alma mater",      "religion",        "political party",
    "currency",         "official color",  "mascot",          "architect",
    "author",           "composer",        "director",        "genre",
    "place of death",   "headquarters",    "owner",           "sibling",
    "child",            "parent company",  "member of",       "award received",
    "field of work",    "military branch", "sport",           "position held",
    "twin city",        "patron saint",    "main ingredient", "instrument",
    "publisher",        "manufacturer",    "operator",        "successor"};

inline constexpr std::array<std::string_view, 8> kRelationQualifiers = {
    "former", "current", "official", "primary", "secondary", "honorary", "acting", "regional"};

inline std::vector<std::string> entity_aliases(std::uint32_t n, Rng& rng) {
  std::vector<std::string> pool;
  const std::size_t two = kAdjectives.size() * kNouns.size();
  const bool need_three = n > two;
  for (auto a : kAdjectives) {
    for (auto b : kNouns) pool.push_back(std::string(a) + " " + std::string(b));
  }
  if (need_three) {
    for (auto a0 : kAdjectives) {
      for (auto a : kAdjectives) {
        if (a0 == a) continue;
        for (auto b : kNouns) pool.push_back(std::string(a0) + " " + std::string(a) + " " + std::string(b));
      }
    }
  }
  if (pool.size() < n) {
    throw UsageError("synth: cannot name " + std::to_string(n) + " entities (alias pool has " +
                     std::to_string(pool.size()) + ")");
  }
  rng.shuffle(pool.begin(), pool.end());
  pool.resize(n);
  return pool;
}

inline std::vector<std::string> relation_aliases(std::uint32_t n, Rng& rng) {
  std::vector<std::string> pool(kRelationPhrases.begin(), kRelationPhrases.end());
  if (n > pool.size()) {
    for (auto q : kRelationQualifiers) {
      for (auto p : kRelationPhrases) pool.push_back(std::string(q) + " " + std::string(p));
    }
  }
  if (pool.size() < n) {
    throw UsageError("synth: cannot name " + std::to_string(n) + " relations (alias pool has " +
                     std::to_string(pool.size()) + ")");
  }
  rng.shuffle(pool.begin(), pool.end());
  pool.resize(n);
  return pool;
}

inline std::string numbered(std::string_view prefix, std::uint32_t i, std::uint32_t count, int min_width) {
  const int digits = static_cast<int>(std::to_string(count > 0 ? count - 1 : 0).size());
  const int width = std::max(min_width, digits);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*u", width, i);
  return std::string(prefix) + buf;
}

inline std::string question(std::string_view relation, std::string_view subject, std::uint64_t variant) {
  switch (variant % 3) {
    case 0:
      return "what is the " + std::string(relation) + " of " + std::string(subject);
    case 1:
      return "which entity is the " + std::string(relation) + " of " + std::string(subject);
    default:
      return "tell me the " + std::string(relation) + " of " + std::string(subject);
  }
}

}  // namespace detail

/// Entity label for index i, e.g. "entity_0421".
inline std::string synth_entity_label(std::uint32_t i, std::uint32_t n_entities) {
  return detail::numbered("entity_", i, n_entities, 4);
}

inline std::string synth_relation_label(std::uint32_t i, std::uint32_t n_relations) {
  return detail::numbered("relation_", i, n_relations, 2);
}

/// Templated knowledge graph and questions. Triplet labels are synthetic ids;
/// question text refers to entities and relations only through their
/// natural-word aliases, so the encoder has to learn the alias-to-id mapping.
///
/// Single-hop: "what is the <relation alias> of <head alias>?", gold = every
/// fact with that (head, relation). Multi-hop: the head is replaced by
/// "the <r1 alias> of <a alias>" for an edge (a, r1, head); gold = the facts
/// on every reasoning path the question admits (bridge edges and targets).
inline SynthData synth_generate(const SynthConfig& cfg) {
  if (cfg.n_entities == 0 || cfg.n_relations == 0 || cfg.n_triplets == 0 ||
      cfg.queries_per_triplet == 0) {
    throw UsageError("synth: counts must be positive");
  }
  if (!(cfg.multi_hop_fraction >= 0.0 && cfg.multi_hop_fraction <= 1.0) ||
      !(cfg.distractor_rate >= 0.0 && cfg.distractor_rate <= 1.0)) {
    throw UsageError("synth: fractions must lie in [0, 1]");
  }
  const std::uint64_t capacity =
      std::uint64_t{cfg.n_entities} * cfg.n_entities * cfg.n_relations;
  if (cfg.n_triplets > capacity) {
    throw UsageError("synth: cannot place " + std::to_string(cfg.n_triplets) + " distinct triplets over " +
                     std::to_string(cfg.n_entities) + " entities and " + std::to_string(cfg.n_relations) +
                     " relations");
  }

  Rng rng(cfg.seed);
  const auto ent_alias = detail::entity_aliases(cfg.n_entities, rng);
  const auto rel_alias = detail::relation_aliases(cfg.n_relations, rng);

  // Typing: entity i has type i % T; relation r maps domain r % T to a
  // different range type.
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<std::uint32_t> domain(cfg.n_relations), range(cfg.n_relations);
  bool allow_self_loops = cfg.n_entities == 1;
  for (std::uint32_t types = std::max<std::uint32_t>(1, std::min(cfg.entity_types, cfg.n_entities));; --types) {
    members.assign(types, {});
    for (std::uint32_t e = 0; e < cfg.n_entities; ++e) members[e % types].push_back(e);
    std::uint64_t cap = 0;
    for (std::uint32_t r = 0; r < cfg.n_relations; ++r) {
      domain[r] = r % types;
      range[r] = types == 1 ? 0 : (domain[r] + 1 + (r / types) % (types - 1)) % types;
      const std::uint64_t heads = members[domain[r]].size();
      cap += heads * members[range[r]].size() - (types == 1 && cfg.n_entities > 1 ? heads : 0);
    }
    if (cap >= cfg.n_triplets) break;
    if (types == 1) {
      allow_self_loops = true;  // only n_entities^2 * n_relations facts fit
      break;
    }
  }
  std::vector<std::uint32_t> type_of(cfg.n_entities);
  for (std::uint32_t t = 0; t < members.size(); ++t) {
    for (auto e : members[t]) type_of[e] = t;
  }

  // Facts: walk (head, relation) slots in shuffled order so (head, relation)
  // stays unique until every slot is used once.
  struct Fact {
    std::uint32_t h, r, t;
  };
  std::vector<std::uint64_t> slots;  // h * n_relations + r
  for (std::uint32_t h = 0; h < cfg.n_entities; ++h) {
    for (std::uint32_t r = 0; r < cfg.n_relations; ++r) {
      if (type_of[h] == domain[r]) slots.push_back(std::uint64_t{h} * cfg.n_relations + r);
    }
  }
  rng.shuffle(slots.begin(), slots.end());
  std::vector<Fact> facts;
  facts.reserve(cfg.n_triplets);
  std::set<std::uint64_t> used;
  auto key = [&](std::uint32_t h, std::uint32_t r, std::uint32_t t) {
    return (std::uint64_t{h} * cfg.n_relations + r) * cfg.n_entities + t;
  };
  std::size_t cursor = 0, misses = 0;
  while (facts.size() < cfg.n_triplets) {
    const auto slot = slots[cursor++ % slots.size()];
    const auto h = static_cast<std::uint32_t>(slot / cfg.n_relations);
    const auto r = static_cast<std::uint32_t>(slot % cfg.n_relations);
    const auto& tails = members[range[r]];
    auto ok = [&](std::uint32_t t) { return (t != h || allow_self_loops) && !used.contains(key(h, r, t)); };
    std::uint32_t t = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      t = tails[rng.below(tails.size())];
      placed = ok(t);
    }
    if (!placed) {
      std::vector<std::uint32_t> free_tails;
      for (auto c : tails) {
        if (ok(c)) free_tails.push_back(c);
      }
      if (free_tails.empty()) {
        if (++misses > slots.size()) throw UsageError("synth: ran out of free tails");
        continue;
      }
      t = free_tails[rng.below(free_tails.size())];
    }
    misses = 0;
    used.insert(key(h, r, t));
    facts.push_back({h, r, t});
  }

  SynthData out;
  for (const auto& f : facts) {
    out.store.add(synth_entity_label(f.h, cfg.n_entities), synth_relation_label(f.r, cfg.n_relations),
                  synth_entity_label(f.t, cfg.n_entities));
  }

  std::vector<std::vector<TripletId>> by_head_relation(std::size_t{cfg.n_entities} * cfg.n_relations);
  std::vector<std::vector<TripletId>> incoming(cfg.n_entities);
  for (TripletId id = 0; id < facts.size(); ++id) {
    by_head_relation[std::uint64_t{facts[id].h} * cfg.n_relations + facts[id].r].push_back(id);
    incoming[facts[id].t].push_back(id);
  }
  auto bridges_for = [&](TripletId target) {
    std::vector<TripletId> b;
    for (auto id : incoming[facts[target].h]) {
      if (id != target && facts[id].h != facts[target].h) b.push_back(id);
    }
    return b;
  };

  const std::size_t total = std::size_t{cfg.n_triplets} * cfg.queries_per_triplet;
  std::vector<std::size_t> eligible;
  for (std::size_t qi = 0; qi < total; ++qi) {
    if (!bridges_for(static_cast<TripletId>(qi / cfg.queries_per_triplet)).empty()) eligible.push_back(qi);
  }
  rng.shuffle(eligible.begin(), eligible.end());
  const auto want_multi = static_cast<std::size_t>(std::llround(cfg.multi_hop_fraction * static_cast<double>(total)));
  std::vector<bool> multi(total, false);
  for (std::size_t i = 0; i < std::min(want_multi, eligible.size()); ++i) multi[eligible[i]] = true;

  std::vector<Query> queries;
  queries.reserve(total);
  const int id_width = std::max(5, static_cast<int>(std::to_string(total).size()));
  for (std::size_t qi = 0; qi < total; ++qi) {
    const auto target = static_cast<TripletId>(qi / cfg.queries_per_triplet);
    const auto& f = facts[target];
    Query q;
    const auto digits = std::to_string(qi);
    q.id = "q" + std::string(static_cast<std::size_t>(id_width) - std::min<std::size_t>(id_width, digits.size()), '0') + digits;
    q.gold = by_head_relation[std::uint64_t{f.h} * cfg.n_relations + f.r];
    const auto variant = rng.next();
    std::uint32_t mentioned = f.h;
    if (multi[qi]) {
      const auto bridges = bridges_for(target);
      const auto bridge = bridges[rng.below(bridges.size())];
      const auto& b = facts[bridge];
      mentioned = b.h;
      q.text = detail::question(rel_alias[f.r], "the " + rel_alias[b.r] + " of " + ent_alias[b.h], variant);
      // "the <r1> of <a>" may name several entities; every (a, r1, x) edge
      // whose x has an <r> fact starts a valid reasoning path.
      q.gold.clear();
      for (auto id : by_head_relation[std::uint64_t{b.h} * cfg.n_relations + b.r]) {
        const auto& via = by_head_relation[std::uint64_t{facts[id].t} * cfg.n_relations + f.r];
        if (via.empty()) continue;
        q.gold.push_back(id);
        q.gold.insert(q.gold.end(), via.begin(), via.end());
      }
      std::sort(q.gold.begin(), q.gold.end());
      q.gold.erase(std::unique(q.gold.begin(), q.gold.end()), q.gold.end());
      q.hops = 2;
    } else {
      q.text = detail::question(rel_alias[f.r], ent_alias[f.h], variant);
      q.hops = 1;
    }
    if (cfg.n_entities > 1 && rng.uniform() < cfg.distractor_rate) {
      std::uint32_t other = static_cast<std::uint32_t>(rng.below(cfg.n_entities - 1));
      if (other >= mentioned) ++other;
      q.text += ", not " + ent_alias[other];
    }
    q.text += "?";
    q.gold_entities = std::vector<std::string>{synth_entity_label(mentioned, cfg.n_entities)};
    queries.push_back(std::move(q));
  }

  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * static_cast<double>(total)));
  const auto n_valid = std::min(total - n_train,
                                static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(total))));
  auto take = [&](std::size_t from, std::size_t to) {
    std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(from),
                                 order.begin() + static_cast<std::ptrdiff_t>(to));
    std::sort(ids.begin(), ids.end());
    std::vector<Query> split;
    for (auto i : ids) split.push_back(queries[i]);
    return split;
  };
  out.train = take(0, n_train);
  out.valid = take(n_train, n_train + n_valid);
  out.test = take(n_train + n_valid, total);
  return out;
}

struct SynthPaths {
  std::string kg, train, valid, test;
};

inline SynthPaths synth_paths(const std::filesystem::path& dir) {
  return {(dir / "kg.tsv").string(), (dir / "train.jsonl").string(), (dir / "valid.jsonl").string(),
          (dir / "test.jsonl").string()};
}

inline SynthPaths synth_write(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto p = synth_paths(dir);
  write_file(p.kg, format_triples(data.store));
  write_file(p.train, format_queries(data.train));
  write_file(p.valid, format_queries(data.valid));
  write_file(p.test, format_queries(data.test));
  return p;
}

}  // namespace difar
