#pragma once

// Reference models written independently of the simulator sources.

#include <cstdint>
#include <vector>

#include "mempool/topology.hpp"

namespace mptest {

struct NaiveRequest {
  std::uint64_t id;
  mempool::CoreId core;
  std::uint32_t bank;
  mempool::Cycle issue;
  mempool::Cycle grant = 0;
};

// Replays round-robin arbitration by scanning every outstanding request of
// every bank on every cycle: the first core after the bank's last winner in
// circular order wins, its oldest request first.
inline void naive_arbitrate(std::vector<NaiveRequest> &reqs, std::uint32_t banks,
                            std::uint32_t cores, mempool::Cycle horizon) {
  std::vector<std::vector<NaiveRequest *>> waiting(banks);
  for (auto &r : reqs)
    waiting[r.bank].push_back(&r);
  std::vector<long> last(banks, -1);
  for (mempool::Cycle c = 1; c <= horizon; ++c)
    for (std::uint32_t b = 0; b < banks; ++b) {
      auto &w = waiting[b];
      std::size_t best = w.size();
      std::uint32_t best_dist = 0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i]->issue > c)
          continue;
        const auto dist = std::uint32_t((w[i]->core + cores - std::uint32_t(last[b] + 1)) % cores);
        if (best == w.size() || dist < best_dist || (dist == best_dist && w[i]->id < w[best]->id)) {
          best = i;
          best_dist = dist;
        }
      }
      if (best != w.size()) {
        w[best]->grant = c;
        last[b] = w[best]->core;
        w.erase(w.begin() + long(best));
      }
    }
}

} // namespace mptest
