#pragma once

// Definition-level CMC / AP oracle and a full-enumeration driver over every
// ranking of small galleries.

#include <algorithm>
#include <numeric>
#include <vector>

#include "gps/retrieval.hpp"

namespace oracle {

// AP straight from the definition: for each positive, count the positives
// at or above its rank and divide by the rank.
inline double ap_by_definition(const std::vector<bool>& rel) {
  double sum = 0;
  int positives = 0;
  for (std::size_t r = 0; r < rel.size(); ++r) {
    if (!rel[r]) continue;
    ++positives;
    int above = 0;
    for (std::size_t s = 0; s <= r; ++s) above += rel[s];
    sum += double(above) / double(r + 1);
  }
  return sum / positives;
}

inline std::vector<double> cmc_by_definition(const std::vector<bool>& rel) {
  std::vector<double> c(rel.size());
  for (std::size_t r = 0; r < rel.size(); ++r) {
    bool hit = false;
    for (std::size_t s = 0; s <= r; ++s) hit = hit || rel[s];
    c[r] = hit ? 1.0 : 0.0;
  }
  return c;
}

struct EnumerationResult {
  std::size_t rankings = 0;
  std::size_t mismatches = 0;
};

// For every gallery size g <= max_g, positive count 1..min(max_pos, g) and
// every permutation of the gallery, places item perm[r] at distance r + 1
// from the query and checks evaluate() against the definitions exactly.
inline EnumerationResult enumerate_all(int max_g, int max_pos) {
  EnumerationResult res;
  for (int g = 1; g <= max_g; ++g)
    for (int pos = 1; pos <= std::min(max_pos, g); ++pos) {
      std::vector<int> perm(static_cast<std::size_t>(g));
      std::iota(perm.begin(), perm.end(), 0);
      do {
        gps::Signature q{gps::Vecd::Zero(1), 0, 0, false};
        std::vector<gps::Signature> gallery(static_cast<std::size_t>(g));
        std::vector<bool> rel(static_cast<std::size_t>(g));
        for (int r = 0; r < g; ++r) {
          const int item = perm[static_cast<std::size_t>(r)];
          auto& s = gallery[static_cast<std::size_t>(item)];
          s.vector = gps::Vecd::Constant(1, double(r + 1));
          s.identity = item < pos ? 0 : 1 + item;
          s.camera = 1;
          rel[static_cast<std::size_t>(r)] = item < pos;
        }
        auto run = gps::evaluate({q}, gallery);
        const auto cmc = cmc_by_definition(rel);
        bool ok = run.map == ap_by_definition(rel) && run.cmc.size() == cmc.size();
        for (std::size_t r = 0; ok && r < cmc.size(); ++r) ok = run.cmc[r] == cmc[r];
        ++res.rankings;
        if (!ok) ++res.mismatches;
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  return res;
}

}  // namespace oracle
