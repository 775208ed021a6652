#pragma once

#include <cstdint>
#include <mutex>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace accsim {

struct Transition {
  Eigen::VectorXd obs;       // normalized
  Eigen::VectorXd next_obs;  // normalized
  double unit_torque = 0.0;  // behaviour sample, pre-clamp
  int gear = 1;              // gear-change index
  double log_prob_torque = 0.0;
  double log_prob_gear = 0.0;
  double reward = 0.0;
  bool terminal = false;
  std::uint64_t episode = 0;
};

/// Fixed-capacity ring of transitions in insertion order. Episodes are
/// appended whole, so a reader never sees half an episode. One writer and
/// one reader may use it concurrently.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push_episode(const std::vector<Transition>& episode);

  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t capacity() const { return capacity_; }

  /// `count` segments of up to `length` consecutive transitions from one
  /// episode each; a segment stops early at an episode boundary or at the
  /// newest transition.
  [[nodiscard]] std::vector<std::vector<Transition>> sample_segments(std::size_t count,
                                                                     std::size_t length,
                                                                     std::mt19937_64& rng) const;

  /// Logical index 0 is the oldest transition.
  [[nodiscard]] Transition at(std::size_t logical) const;

 private:
  const Transition& get(std::size_t logical) const;

  std::size_t capacity_;
  std::vector<Transition> ring_;
  std::size_t start_ = 0;
  std::size_t size_ = 0;
  mutable std::mutex mutex_;
};

}  // namespace accsim
