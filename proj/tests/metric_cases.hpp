#pragma once

// Hand-worked metric examples shared by the unit tests and the acceptance
// binary.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "difar/evaluator.hpp"

namespace metric_cases {

struct Case {
  std::string name;
  std::function<bool()> check;
};

inline difar::RankedList ranking(std::initializer_list<difar::TripletId> ids) {
  difar::RankedList out;
  double s = 0.0;
  for (auto id : ids) out.push_back({id, s--});
  return out;
}

inline difar::RankedList long_ranking(std::size_t n, difar::TripletId gold_at, difar::TripletId gold) {
  difar::RankedList out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({i + 1 == gold_at ? gold : static_cast<difar::TripletId>(100000 + i), -double(i)});
  }
  return out;
}

inline std::vector<Case> all() {
  using namespace difar;
  std::vector<Case> c;
  c.push_back({"reciprocal rank: gold at 1", [] { return reciprocal_rank(ranking({7, 1, 2}), {7}) == 1.0; }});
  c.push_back({"reciprocal rank: first gold at 4",
               [] { return reciprocal_rank(ranking({1, 2, 3, 7, 8}), {8, 7}) == 0.25; }});
  c.push_back({"reciprocal rank: gold beyond cutoff 1000",
               [] { return reciprocal_rank(long_ranking(1200, 1001, 5), {5}) == 0.0; }});
  c.push_back({"reciprocal rank: gold at 1000",
               [] { return reciprocal_rank(long_ranking(1200, 1000, 5), {5}) == 1.0 / 1000; }});
  c.push_back({"hits@K: gold at K", [] { return hits_at_k(ranking({1, 2, 3, 4}), {3}, 3) == 1; }});
  c.push_back({"hits@K: gold at K+1", [] { return hits_at_k(ranking({1, 2, 3, 4}), {4}, 3) == 0; }});
  c.push_back({"hits@K: K beyond list length", [] { return hits_at_k(ranking({1, 2, 3, 4}), {4}, 50) == 1; }});
  c.push_back({"evaluate: mean of 1.0 and 0.5", [] {
                 const std::vector<Query> qs{{"a", "", {1}, 1, {}}, {"b", "", {2}, 1, {}}};
                 const std::vector<QueryResult> rs{{"a", ranking({1, 2})}, {"b", ranking({1, 2})}};
                 return evaluate(rs, qs).mrr() == 0.75;
               }});
  c.push_back({"evaluate: single-hop stratum equals global report", [] {
                 const std::vector<Query> qs{{"a", "", {1}, 1, {}}, {"b", "", {2}, 1, {}}, {"c", "", {9}, 1, {}}};
                 const std::vector<QueryResult> rs{
                     {"a", ranking({1, 2})}, {"b", ranking({1, 2})}, {"c", ranking({1, 2})}};
                 const auto r = evaluate(rs, qs);
                 const auto& s = r.strata.at("1");
                 return r.strata.size() == 1 && s.mrr == r.overall.mrr && s.hits == r.overall.hits &&
                        s.n == r.overall.n;
               }});
  c.push_back({"evaluate: strata partition the queries", [] {
                 std::vector<Query> qs;
                 std::vector<QueryResult> rs;
                 for (int i = 0; i < 10; ++i) {
                   std::optional<int> hops;
                   if (i % 3 != 2) hops = 1 + i % 3;
                   qs.push_back({std::to_string(i), "", {1}, hops, {}});
                   rs.push_back({std::to_string(i), ranking({2, 1})});
                 }
                 const auto r = evaluate(rs, qs);
                 std::size_t total = 0;
                 for (const auto& [name, s] : r.strata) total += s.n;
                 return total == 10 && r.strata.at("unknown").n == 3 && r.strata.at("1").n == 4 &&
                        r.strata.at("2").n == 3;
               }});
  c.push_back({"evaluate: all golds at rank 1 give mrr 1 and hits@1 1", [] {
                 const std::vector<Query> qs{{"a", "", {4}, 2, {}}, {"b", "", {5, 6}, 1, {}}};
                 const std::vector<QueryResult> rs{{"a", ranking({4, 1})}, {"b", ranking({6, 5})}};
                 const auto r = evaluate(rs, qs);
                 return r.mrr() == 1.0 && r.hits(1) == 1.0;
               }});
  c.push_back({"entity containment: head label match", [] {
                 KGStore s;
                 s.add("Albany", "capital of", "New York");
                 return entity_containment(ranking({0}), {"Albany"}, s) == 1;
               }});
  c.push_back({"entity containment: relation slot does not count", [] {
                 KGStore s;
                 s.add("Albany", "capital of", "New York");
                 return entity_containment(ranking({0}), {"capital of"}, s) == 0;
               }});
  c.push_back({"entity containment: case-insensitive and trimmed", [] {
                 KGStore s;
                 s.add("Albany", "capital of", "New York");
                 return entity_containment(ranking({0}), {" albany "}, s) == 1 &&
                        entity_containment(ranking({0}), {"new york"}, s) == 1;
               }});
  c.push_back({"evaluate: containment only over labelled queries", [] {
                 KGStore s;
                 s.add("Albany", "capital of", "New York");
                 s.add("Paris", "capital of", "France");
                 const std::vector<Query> qs{{"a", "", {0}, 1, std::vector<std::string>{"Albany"}},
                                             {"b", "", {1}, 1, std::vector<std::string>{"Lyon"}},
                                             {"c", "", {1}, 1, {}}};
                 const std::vector<QueryResult> rs{{"a", ranking({0, 1})}, {"b", ranking({1, 0})},
                                                   {"c", ranking({1, 0})}};
                 EvalOptions o;
                 o.store = &s;
                 const auto r = evaluate(rs, qs, o);
                 return r.entity_containment && *r.entity_containment == 0.5 && r.containment_n == 2;
               }});
  return c;
}

/// hits@K over random rankings never decreases as K grows, and MRR never
/// exceeds hits at the cutoff.
inline bool hits_monotone_property(int trials, std::uint64_t seed) {
  using namespace difar;
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 1 + rng.below(60);
    RankedList l;
    for (std::size_t i = 0; i < n; ++i) l.push_back({static_cast<TripletId>(rng.below(80)), -double(i)});
    std::vector<TripletId> gold;
    for (std::uint64_t g = 0, m = 1 + rng.below(4); g < m; ++g) gold.push_back(static_cast<TripletId>(rng.below(80)));
    int prev = 0;
    for (std::size_t k = 1; k <= n + 3; ++k) {
      const int h = hits_at_k(l, gold, k);
      if (h < prev) return false;
      prev = h;
    }
    if (reciprocal_rank(l, gold, n) > hits_at_k(l, gold, n)) return false;
  }
  return true;
}

}  // namespace metric_cases
