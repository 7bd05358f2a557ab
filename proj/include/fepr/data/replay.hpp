#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "fepr/data/observation.hpp"
#include "fepr/errors.hpp"

namespace fepr::data {

struct Transition {
  ObservationStack state;
  int action = 0;
  float reward = 0.f;
  ObservationStack next;
  bool done = false;
};

// Fixed-capacity FIFO ring buffer. Sampling is uniform with replacement.
template <typename Item>
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("replay capacity must be positive");
  }

  void push(Item item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool ready(std::size_t batch) const { return batch > 0 && items_.size() >= batch; }

  // i = 0 is the oldest stored item.
  const Item& at(std::size_t i) const {
    if (i >= items_.size()) throw std::out_of_range("replay index out of range");
    return items_[(head_ + i) % items_.size()];
  }

  // Returns nullopt while fewer than `batch` items are stored; the caller skips learning.
  // Pointers stay valid until the next push.
  template <typename Rng>
  std::optional<std::vector<const Item*>> sample(std::size_t batch, Rng& rng) const {
    if (!ready(batch)) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Item*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) out.push_back(&items_[pick(rng)]);
    return out;
  }

  void clear() {
    items_.clear();
    head_ = 0;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  std::vector<Item> items_;
};

}  // namespace fepr::data
