#include <algorithm>
#include <unordered_map>

#include "mbatch/runtime.hpp"

namespace mbatch {
namespace runtime {

namespace {

// Shared-argument identity participates in batch formation: nodes of the same
// signature with different shared tensors cannot share one launch.
uint64_t shared_key(const DFGNode& n) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (const auto& r : n.shared_ins) {
    mix(static_cast<uint64_t>(r.node + 1));
    mix(static_cast<uint64_t>(r.out));
    mix(static_cast<uint64_t>(r.handle.offset + 1));
  }
  return h;
}

}  // namespace

std::vector<BatchRecord> schedule_depth(const std::vector<const DFGNode*>& nodes,
                                        long& scheduler_ops) {
  struct Key {
    int phase, depth, sig;
    uint64_t shared;
    bool ghost;
    bool operator<(const Key& o) const {
      if (phase != o.phase) return phase < o.phase;
      if (depth != o.depth) return depth < o.depth;
      if (sig != o.sig) return sig < o.sig;
      return shared < o.shared;
    }
  };
  // Hash-bucket insertion: one scheduler op per node in, one per node out.
  std::map<Key, std::vector<int>> buckets;
  for (const DFGNode* n : nodes) {
    buckets[Key{n->phase, n->depth, n->sig_id, shared_key(*n), n->ghost}].push_back(n->id);
    ++scheduler_ops;
  }
  std::vector<BatchRecord> out;
  for (auto& [key, ids] : buckets) {
    std::sort(ids.begin(), ids.end());
    BatchRecord b;
    b.phase = key.phase;
    b.depth = key.depth;
    b.sig = key.sig;
    b.ghost = key.ghost;
    b.size = static_cast<int>(ids.size());
    b.node_ids = std::move(ids);
    scheduler_ops += b.size;
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<BatchRecord> schedule_agenda(const std::vector<const DFGNode*>& nodes,
                                         long& scheduler_ops) {
  // Ready-set maintenance over producer edges restricted to this window.
  std::unordered_map<int, const DFGNode*> in_window;
  for (const DFGNode* n : nodes) in_window[n->id] = n;

  std::unordered_map<int, int> missing;           // node -> unexected producers
  std::unordered_map<int, std::vector<int>> out_edges;
  for (const DFGNode* n : nodes) {
    ++scheduler_ops;
    int cnt = 0;
    for (int p : n->producers) {
      auto it = in_window.find(p);
      if (it == in_window.end() || it->second->executed) continue;
      ++cnt;
      out_edges[p].push_back(n->id);
      ++scheduler_ops;  // edge registration
    }
    missing[n->id] = cnt;
  }

  // sig -> (shared key -> ready node ids); deterministic ordering via map.
  std::map<int, std::map<uint64_t, std::vector<int>>> ready;
  int ready_count = 0;
  auto push_ready = [&](const DFGNode* n) {
    ready[n->sig_id][shared_key(*n)].push_back(n->id);
    ++ready_count;
    ++scheduler_ops;
  };
  for (const DFGNode* n : nodes)
    if (missing[n->id] == 0) push_ready(n);

  std::vector<BatchRecord> out;
  std::unordered_map<int, bool> done;
  while (ready_count > 0) {
    // Pick the signature with the most ready nodes; ties to the lowest sig id.
    int best_sig = -1;
    size_t best_count = 0;
    for (const auto& [sig, groups] : ready) {
      size_t total = 0;
      for (const auto& [sk, ids] : groups) total += ids.size();
      if (total > best_count) {
        best_count = total;
        best_sig = sig;
      }
    }
    MBATCH_CHECK(best_sig >= 0, "agenda scheduler: ready set corrupt");
    // Launch one batch per shared-argument group of that signature.
    auto groups = std::move(ready[best_sig]);
    ready.erase(best_sig);
    for (auto& [sk, ids] : groups) {
      std::sort(ids.begin(), ids.end());
      ready_count -= static_cast<int>(ids.size());
      BatchRecord b;
      const DFGNode* first = in_window.at(ids[0]);
      b.phase = first->phase;
      b.depth = first->depth;
      b.sig = best_sig;
      b.ghost = first->ghost;
      b.size = static_cast<int>(ids.size());
      b.node_ids = ids;
      out.push_back(std::move(b));
      for (int id : ids) {
        done[id] = true;
        ++scheduler_ops;
        for (int consumer : out_edges[id]) {
          if (--missing[consumer] == 0) push_ready(in_window.at(consumer));
        }
      }
    }
  }
  for (const DFGNode* n : nodes)
    MBATCH_CHECK(done.count(n->id), "agenda scheduler: cycle detected in DFG");
  return out;
}

}  // namespace runtime
}  // namespace mbatch
