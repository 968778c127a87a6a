// Bounded sample memory maintained by reservoir sampling.
#ifndef HTCL_REPLAY_BUFFER_HPP
#define HTCL_REPLAY_BUFFER_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "htcl/model.hpp"

namespace htcl {

struct ReplaySample {
  Eigen::VectorXd input;
  int label = 0;       // classification target
  double value = 0.0;  // regression target
  int source_task = -1;
};

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) { entries_.reserve(capacity); }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::uint64_t seen_count() const { return seen_; }
  const std::vector<ReplaySample>& entries() const { return entries_; }

  /// Reservoir insertion: the first `capacity` items are always kept; item
  /// number N > capacity replaces a uniformly chosen slot with probability
  /// capacity / N. Returns true if the item was stored.
  template <class Rng>
  bool insert_reservoir(ReplaySample item, Rng& rng) {
    ++seen_;
    if (capacity_ == 0) return false;
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(item));
      return true;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, seen_ - 1);
    const std::uint64_t slot = pick(rng);
    if (slot < capacity_) {
      entries_[static_cast<std::size_t>(slot)] = std::move(item);
      return true;
    }
    return false;
  }

  /// Samples `n` entries uniformly with replacement.
  template <class Rng>
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    if (entries_.empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::uniform_int_distribution<std::size_t> pick(0, entries_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = pick(rng);
    return idx;
  }

  /// Entries as a batch, in storage order.
  Batch to_batch(const ModelSpec& spec) const {
    std::vector<std::size_t> all(entries_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return gather(all, spec);
  }

  Batch gather(const std::vector<std::size_t>& idx, const ModelSpec& spec) const {
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(idx.size()), spec.input_dim());
    if (spec.task_kind == TaskKind::classification)
      b.labels.resize(idx.size());
    else
      b.values.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& e = entries_.at(idx[r]);
      b.inputs.row(static_cast<Eigen::Index>(r)) = e.input.transpose();
      if (spec.task_kind == TaskKind::classification)
        b.labels[r] = e.label;
      else
        b.values(static_cast<Eigen::Index>(r)) = e.value;
    }
    return b;
  }

 private:
  std::size_t capacity_ = 0;
  std::vector<ReplaySample> entries_;
  std::uint64_t seen_ = 0;
};

}  // namespace htcl

#endif  // HTCL_REPLAY_BUFFER_HPP
