#pragma once

// Padded multi-agent trajectory batches.

#include <vector>

#include "hissd/datagen.hpp"
#include "hissd/networks.hpp"
#include "hissd/rng.hpp"

namespace hissd::data {

/// B trajectories of one task padded to the longest length L. Frame t holds
/// the observations and state before step t; frame L is the state reached
/// after the last step. Per-agent rows are ordered b * K + k.
///
/// Padded steps (t >= episode length) repeat the episode's final frame, use
/// action 0 under a no-op-only mask and have valid = 0.
struct Batch {
  env::TaskSpec task;
  int size = 0;    // B
  int length = 0;  // L
  std::vector<int> episode_index;
  std::vector<nn::ObsBatch> frames;  // L + 1 entries, B * K groups each
  std::vector<nn::Mat> states;       // L + 1 entries, B x state_dim
  std::vector<std::vector<int>> actions;  // L entries, B * K each
  std::vector<nn::Mat> masks;             // L entries, B * K x n_actions
  nn::Mat reward;  // L x B
  nn::Mat done;    // L x B
  nn::Mat valid;   // L x B
  nn::Mat alive;   // L x B * K, alive flag of each agent at frame t

  int agents() const { return task.n_allies; }
  int valid_count() const;
  /// Frames [0, L) stacked into one ObsBatch (rows ordered t, b, k).
  nn::ObsBatch stacked_frames() const;
};

/// Builds a batch from the given episodes of `dataset`.
Batch make_batch(const Dataset& dataset, const std::vector<int>& episodes);

/// Uniform sampling of `batch_size` distinct episodes. Throws
/// std::invalid_argument when the dataset holds fewer episodes.
Batch sample_batch(const Dataset& dataset, int batch_size, Rng& rng);

}  // namespace hissd::data
