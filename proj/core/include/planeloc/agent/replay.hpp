#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "planeloc/geometry.hpp"
#include "planeloc/volume.hpp"

namespace planeloc::agent {

struct Transition {
  AgentState state;
  PlaneAction action{0};
  int reward = 0;  // -1, 0 or +1
  AgentState next_state;
  int source = 0;  // index of the case the slices were cut from
};

/// Binary tree of partial sums over a fixed number of leaves.
class SumTree {
 public:
  explicit SumTree(std::size_t leaves = 1);

  std::size_t leaves() const { return leaves_; }
  double total() const { return nodes_[1]; }
  double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  void set(std::size_t leaf, double value);
  /// Leaf whose cumulative interval contains `mass`, clamped to non-empty leaves.
  std::size_t find(double mass) const;
  /// Every internal node equals the sum of its children within `tol`.
  bool consistent(double tol = 1e-9) const;

 private:
  std::size_t leaves_;
  std::size_t base_;
  std::vector<double> nodes_;
};

struct SampledBatch {
  std::vector<std::size_t> indices;
  std::vector<double> weights;  // importance weights, max-normalized
  std::vector<const Transition*> transitions;
};

/// Proportional prioritized replay with ring eviction.
class PrioritizedBuffer {
 public:
  static constexpr double kPriorityFloor = 1e-5;

  explicit PrioritizedBuffer(std::size_t capacity = 15000, double alpha = 0.6);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  double alpha() const { return alpha_; }
  double max_priority() const { return max_priority_; }
  /// Oldest-first position of the next write.
  std::size_t next_slot() const { return next_; }

  /// Stores with the largest priority seen so far.
  std::size_t add(Transition t);
  /// Stores with priority |td_error| + floor (and raises the running max).
  std::size_t add(Transition t, double td_error);

  /// Stratified proportional draw of k transitions (with replacement across
  /// strata). Throws BufferEmpty when nothing is stored.
  SampledBatch sample(std::size_t k, double beta, std::mt19937_64& rng) const;
  void update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors);

  const Transition& at(std::size_t index) const { return items_[index]; }
  /// Raw priority |delta| + floor of a slot.
  double priority(std::size_t index) const { return priorities_[index]; }
  double sampling_probability(std::size_t index) const;
  const SumTree& tree() const { return tree_; }

  /// Restores a slot and the ring state, used when reloading saved buffers.
  void restore(std::size_t index, Transition t, double priority);
  void restore_ring(std::size_t size, std::size_t next, double max_priority);

 private:
  void put(std::size_t slot, Transition t, double priority);
  std::size_t push(Transition t, double priority);

  std::size_t capacity_;
  double alpha_;
  std::vector<Transition> items_;
  std::vector<double> priorities_;
  SumTree tree_;
  std::size_t size_ = 0;
  std::size_t next_ = 0;
  double max_priority_ = 1.0;
};

}  // namespace planeloc::agent
