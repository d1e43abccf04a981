#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gps/error.hpp"

namespace gps {

/// P identities x K instances per batch.
struct BatchSpec {
  int p = 4;
  int k = 4;

  int size() const { return p * k; }
  void validate() const {
    if (p < 2 || k < 2) throw ConfigError("batch spec needs P >= 2 and K >= 2");
  }
};

/// PK batch sampler. Identities and per-identity instances are drawn without
/// replacement until their pool is exhausted, then the pool is reshuffled.
class PkSampler {
 public:
  PkSampler(const std::vector<int>& identity_of_sample, BatchSpec spec, std::mt19937_64 rng)
      : spec_(spec), rng_(std::move(rng)) {
    spec_.validate();
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < identity_of_sample.size(); ++i)
      by_id[identity_of_sample[i]].push_back(i);
    for (auto& [id, members] : by_id)
      if (int(members.size()) >= spec_.k) pools_.push_back({id, members, {}, 0});
    if (int(pools_.size()) < spec_.p)
      throw InvalidArgument("infeasible batch spec: need " + std::to_string(spec_.p) +
                            " identities with >= " + std::to_string(spec_.k) + " instances, have " +
                            std::to_string(pools_.size()));
  }

  /// Sample indices grouped by identity, K consecutive entries each.
  std::vector<std::size_t> next() {
    std::vector<std::size_t> chosen_pools;
    while (int(chosen_pools.size()) < spec_.p) {
      if (id_pos_ == id_order_.size()) {
        id_order_.resize(pools_.size());
        for (std::size_t i = 0; i < pools_.size(); ++i) id_order_[i] = i;
        std::shuffle(id_order_.begin(), id_order_.end(), rng_);
        id_pos_ = 0;
      }
      const auto cand = id_order_[id_pos_++];
      if (std::find(chosen_pools.begin(), chosen_pools.end(), cand) == chosen_pools.end())
        chosen_pools.push_back(cand);
    }
    std::vector<std::size_t> out;
    out.reserve(std::size_t(spec_.size()));
    for (auto pi : chosen_pools) {
      auto& pool = pools_[pi];
      std::vector<std::size_t> taken;
      while (int(taken.size()) < spec_.k) {
        if (pool.pos == pool.order.size()) {
          pool.order = pool.members;
          std::shuffle(pool.order.begin(), pool.order.end(), rng_);
          pool.pos = 0;
        }
        const auto cand = pool.order[pool.pos++];
        if (std::find(taken.begin(), taken.end(), cand) == taken.end()) taken.push_back(cand);
      }
      out.insert(out.end(), taken.begin(), taken.end());
    }
    return out;
  }

 private:
  struct Pool {
    int id;
    std::vector<std::size_t> members;
    std::vector<std::size_t> order;
    std::size_t pos;
  };

  BatchSpec spec_;
  std::mt19937_64 rng_;
  std::vector<Pool> pools_;
  std::vector<std::size_t> id_order_;
  std::size_t id_pos_ = 0;
};

/// Convenience wrapper: `batches` consecutive draws.
inline std::vector<std::vector<std::size_t>> pk_sample(const std::vector<int>& identity_of_sample,
                                                       BatchSpec spec, std::mt19937_64 rng,
                                                       std::size_t batches = 1) {
  PkSampler s(identity_of_sample, spec, std::move(rng));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < batches; ++i) out.push_back(s.next());
  return out;
}

}  // namespace gps
