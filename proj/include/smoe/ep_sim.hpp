#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <ostream>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/rng.hpp"
#include "smoe/trace.hpp"

namespace smoe {

// Expert-to-device map for expert parallelism. block() packs contiguous
// groups of experts per device.
struct Placement {
  std::vector<int> device_of_expert;
  int num_devices = 0;

  static Placement block(int num_experts, int num_devices) {
    if (num_devices < 1 || num_experts < 1 || num_experts % num_devices != 0)
      throw ConfigError("Placement::block: num_devices must divide num_experts");
    Placement p;
    p.num_devices = num_devices;
    p.device_of_expert.resize(static_cast<std::size_t>(num_experts));
    const int per = num_experts / num_devices;
    for (int e = 0; e < num_experts; ++e) p.device_of_expert[static_cast<std::size_t>(e)] = e / per;
    return p;
  }

  void validate(int num_experts) const {
    if (num_devices < 1) throw ConfigError("Placement: need at least one device");
    if (device_of_expert.size() != static_cast<std::size_t>(num_experts))
      throw ConfigError("Placement: map does not cover all experts");
    for (int d : device_of_expert)
      if (d < 0 || d >= num_devices) throw ConfigError("Placement: device id out of range");
  }
};

struct LoadReport {
  std::vector<std::uint64_t> per_device;  // assignment counts
  std::uint64_t total = 0;
  double imbalance = 1.0;       // max count / mean count
  double cross_fraction = 0.0;  // assignments whose expert lives off the token's home device
};

// Replays one layer's assignments over a device placement. A token's home
// device is round-robin (token index mod devices, within its document);
// home_relabel optionally permutes home devices, which relabeling tests use.
inline LoadReport simulate_ep(const RoutingTrace& trace, int layer, const Placement& placement,
                              const std::vector<int>& home_relabel = {}) {
  if (layer < 0 || layer >= trace.n_layers) throw ConfigError("simulate_ep: layer out of range");
  placement.validate(trace.num_experts);
  if (!home_relabel.empty() &&
      home_relabel.size() != static_cast<std::size_t>(placement.num_devices))
    throw ConfigError("simulate_ep: home_relabel must have one entry per device");

  LoadReport report;
  report.per_device.assign(static_cast<std::size_t>(placement.num_devices), 0);
  std::uint64_t cross = 0;
  for (const auto& doc : trace.docs) {
    for (std::size_t t = 0; t < doc.decisions.size(); ++t) {
      int home = static_cast<int>(t % static_cast<std::size_t>(placement.num_devices));
      if (!home_relabel.empty()) home = home_relabel[static_cast<std::size_t>(home)];
      const GateDecision& d = doc.decisions[t][static_cast<std::size_t>(layer)];
      for (const auto& c : d.choices) {
        const int dev = placement.device_of_expert[static_cast<std::size_t>(c.expert)];
        ++report.per_device[static_cast<std::size_t>(dev)];
        ++report.total;
        if (dev != home) ++cross;
      }
    }
  }
  if (report.total == 0) throw DataError("simulate_ep: no data");
  const std::uint64_t mx = *std::max_element(report.per_device.begin(), report.per_device.end());
  const double mean =
      static_cast<double>(report.total) / static_cast<double>(placement.num_devices);
  report.imbalance = static_cast<double>(mx) / mean;
  report.cross_fraction = static_cast<double>(cross) / static_cast<double>(report.total);
  return report;
}

// Experts resident per device under least-recently-used replacement.
struct CacheConfig {
  int capacity = 1;
};

// Sequential replay of one layer's assignment stream (documents in order,
// tokens ascending, ranks ascending) through an LRU set of resident experts.
// Hit rate counts cold misses against the total.
inline double simulate_cache(const RoutingTrace& trace, int layer, const CacheConfig& cache) {
  if (layer < 0 || layer >= trace.n_layers)
    throw ConfigError("simulate_cache: layer out of range");
  if (cache.capacity < 1) throw ConfigError("simulate_cache: capacity must be >= 1");
  if (cache.capacity > trace.num_experts)
    throw ConfigError("simulate_cache: capacity exceeds expert count");

  std::deque<int> resident;  // front = most recent
  std::uint64_t hits = 0, total = 0;
  for (const auto& doc : trace.docs) {
    for (const auto& per_layer : doc.decisions) {
      const GateDecision& d = per_layer[static_cast<std::size_t>(layer)];
      for (const auto& c : d.choices) {
        ++total;
        auto it = std::find(resident.begin(), resident.end(), c.expert);
        if (it != resident.end()) {
          ++hits;
          resident.erase(it);
          resident.push_front(c.expert);
        } else {
          resident.push_front(c.expert);
          if (resident.size() > static_cast<std::size_t>(cache.capacity)) resident.pop_back();
        }
      }
    }
  }
  if (total == 0) throw DataError("simulate_cache: no data");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Control condition for locality claims: permutes token order uniformly at
// random within each document. Marginal expert frequencies are untouched; a
// token's per-layer decisions move as one unit.
inline RoutingTrace shuffle_trace(const RoutingTrace& trace, std::uint64_t seed) {
  RoutingTrace out = trace;
  Rng root(seed);
  for (std::size_t di = 0; di < out.docs.size(); ++di) {
    Rng rng = root.split(di);
    rng.shuffle(out.docs[di].decisions);
  }
  return out;
}

inline void write_load_report(const LoadReport& report, std::ostream& out) {
  out << "device\tassignments\n";
  for (std::size_t d = 0; d < report.per_device.size(); ++d)
    out << d << "\t" << report.per_device[d] << "\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "total\t%llu\nimbalance\t%.6f\ncross_fraction\t%.6f\n",
                static_cast<unsigned long long>(report.total), report.imbalance,
                report.cross_fraction);
  out << buf;
}

}  // namespace smoe
