#include "planeloc/agent/replay.hpp"

#include <algorithm>
#include <cmath>

#include "planeloc/error.hpp"

namespace planeloc::agent {

SumTree::SumTree(std::size_t leaves) : leaves_(std::max<std::size_t>(leaves, 1)) {
  base_ = 1;
  while (base_ < leaves_) base_ <<= 1;
  nodes_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  std::size_t i = base_ + leaf;
  nodes_[i] = value;
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double mass) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = nodes_[2 * i];
    if (mass < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      mass -= left;
      i = 2 * i + 1;
    }
  }
  std::size_t leaf = i - base_;
  // Rounding can land on an empty leaf at the right edge; walk back to a live one.
  while (leaf > 0 && nodes_[base_ + leaf] <= 0.0) --leaf;
  return leaf;
}

bool SumTree::consistent(double tol) const {
  for (std::size_t i = 1; i < base_; ++i) {
    if (std::abs(nodes_[i] - (nodes_[2 * i] + nodes_[2 * i + 1])) > tol) return false;
  }
  return true;
}

PrioritizedBuffer::PrioritizedBuffer(std::size_t capacity, double alpha)
    : capacity_(std::max<std::size_t>(capacity, 1)),
      alpha_(alpha),
      items_(capacity_),
      priorities_(capacity_, 0.0),
      tree_(capacity_) {}

void PrioritizedBuffer::put(std::size_t slot, Transition t, double priority) {
  items_[slot] = std::move(t);
  priorities_[slot] = priority;
  tree_.set(slot, std::pow(priority, alpha_));
}

std::size_t PrioritizedBuffer::add(Transition t) { return push(std::move(t), max_priority_); }

std::size_t PrioritizedBuffer::add(Transition t, double td_error) {
  const double p = std::abs(td_error) + kPriorityFloor;
  max_priority_ = std::max(max_priority_, p);
  return push(std::move(t), p);
}

std::size_t PrioritizedBuffer::push(Transition t, double p) {
  const std::size_t slot = next_;
  put(slot, std::move(t), p);
  next_ = (next_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  return slot;
}

SampledBatch PrioritizedBuffer::sample(std::size_t k, double beta, std::mt19937_64& rng) const {
  if (size_ == 0) fail(ErrorKind::BufferEmpty, "cannot sample from an empty replay buffer");
  SampledBatch out;
  const double total = tree_.total();
  const double segment = total / static_cast<double>(k);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double max_w = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double mass = std::min((static_cast<double>(i) + u(rng)) * segment, std::nextafter(total, 0.0));
    const std::size_t idx = tree_.find(mass);
    const double prob = tree_.get(idx) / total;
    const double w = std::pow(static_cast<double>(size_) * prob, -beta);
    max_w = std::max(max_w, w);
    out.indices.push_back(idx);
    out.weights.push_back(w);
    out.transitions.push_back(&items_[idx]);
  }
  for (double& w : out.weights) w /= max_w;
  return out;
}

void PrioritizedBuffer::update_priorities(std::span<const std::size_t> indices, std::span<const double> td_errors) {
  if (indices.size() != td_errors.size()) fail(ErrorKind::SizeMismatch, "priority update lengths differ");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size_) fail(ErrorKind::IndexOutOfRange, "priority update outside the buffer");
    const double p = std::abs(td_errors[i]) + kPriorityFloor;
    max_priority_ = std::max(max_priority_, p);
    priorities_[indices[i]] = p;
    tree_.set(indices[i], std::pow(p, alpha_));
  }
}

double PrioritizedBuffer::sampling_probability(std::size_t index) const {
  return tree_.total() > 0.0 ? tree_.get(index) / tree_.total() : 0.0;
}

void PrioritizedBuffer::restore(std::size_t index, Transition t, double priority) {
  if (index >= capacity_) fail(ErrorKind::IndexOutOfRange, "restored slot outside the buffer");
  put(index, std::move(t), priority);
}

void PrioritizedBuffer::restore_ring(std::size_t size, std::size_t next, double max_priority) {
  if (size > capacity_ || next >= capacity_) fail(ErrorKind::IndexOutOfRange, "restored ring state out of range");
  size_ = size;
  next_ = next;
  max_priority_ = max_priority;
}

}  // namespace planeloc::agent
