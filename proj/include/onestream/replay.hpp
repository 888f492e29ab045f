#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "onestream/errors.hpp"
#include "onestream/rng.hpp"
#include "onestream/tensor.hpp"

namespace onestream {

/// A stored training example.
struct ReplayItem {
  Tensor input;
  Tensor target;
  Tensor mask;
};

/// Fixed-capacity circular buffer with uniform random reads. Once full, each
/// push overwrites the oldest entry.
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
    items_.reserve(capacity);
  }

  /// Items exposing input/target/mask tensors must match the shapes of the
  /// first stored item (ShapeError otherwise).
  void push(T item) {
    if constexpr (requires { item.input.shape(); item.target.shape(); item.mask.shape(); }) {
      if (!items_.empty()) {
        const T& ref = items_.front();
        if (item.input.shape() != ref.input.shape() || item.target.shape() != ref.target.shape() ||
            item.mask.shape() != ref.mask.shape())
          throw ShapeError("replay push: example shape differs from buffer contents");
      }
    }
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
    }
    head_ = (head_ + 1) % capacity_;
    ++pushed_;
  }

  /// `k` uniform draws with replacement among the stored entries.
  std::vector<T> sample(std::size_t k, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back(items_[rng.below(items_.size())]);
    return out;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  std::size_t total_pushed() const { return pushed_; }

  /// Entries oldest first.
  std::vector<T> contents() const {
    std::vector<T> out;
    out.reserve(items_.size());
    const std::size_t start = items_.size() < capacity_ ? 0 : head_;
    for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(items_[(start + i) % items_.size()]);
    return out;
  }

  /// Rebuilds from contents() output and the lifetime push count. The slot
  /// layout is reproduced too (the head is always pushed % capacity), so
  /// later samples match the original buffer draw for draw.
  void restore(std::vector<T> oldest_first, std::size_t total_pushed) {
    const std::size_t n = oldest_first.size();
    if (n > capacity_) throw std::invalid_argument("replay restore exceeds capacity");
    if (n != std::min(total_pushed, capacity_))
      throw std::invalid_argument("replay restore: item count does not match push count");
    head_ = total_pushed % capacity_;
    pushed_ = total_pushed;
    if (n < capacity_) {
      items_ = std::move(oldest_first);
      return;
    }
    items_.clear();
    items_.resize(n);
    for (std::size_t i = 0; i < n; ++i) items_[(head_ + i) % n] = std::move(oldest_first[i]);
  }

 private:
  std::size_t capacity_;
  std::vector<T> items_;
  std::size_t head_ = 0;
  std::size_t pushed_ = 0;
};

}  // namespace onestream
