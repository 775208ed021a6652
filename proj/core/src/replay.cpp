#include "accsim/replay.hpp"

#include <stdexcept>

namespace accsim {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  ring_.reserve(capacity);
}

void ReplayBuffer::push_episode(const std::vector<Transition>& episode) {
  std::lock_guard lock(mutex_);
  for (const Transition& t : episode) {
    if (ring_.size() < capacity_) {
      ring_.push_back(t);
      ++size_;
    } else {
      ring_[start_] = t;
      start_ = (start_ + 1) % capacity_;
    }
  }
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return size_;
}

const Transition& ReplayBuffer::get(std::size_t logical) const {
  return ring_[(start_ + logical) % capacity_];
}

Transition ReplayBuffer::at(std::size_t logical) const {
  std::lock_guard lock(mutex_);
  if (logical >= size_) throw std::out_of_range("ReplayBuffer::at");
  return get(logical);
}

std::vector<std::vector<Transition>> ReplayBuffer::sample_segments(std::size_t count,
                                                                   std::size_t length,
                                                                   std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  if (size_ == 0) throw std::logic_error("ReplayBuffer: sampling from an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::vector<Transition>> out(count);
  for (auto& seg : out) {
    const std::size_t first = pick(rng);
    const std::uint64_t episode = get(first).episode;
    seg.reserve(length);
    for (std::size_t k = first; k < size_ && seg.size() < length; ++k) {
      const Transition& t = get(k);
      if (t.episode != episode) break;
      seg.push_back(t);
      if (t.terminal) break;
    }
  }
  return out;
}

}  // namespace accsim
