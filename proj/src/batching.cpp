#include "hissd/batching.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hissd::data {

int Batch::valid_count() const { return static_cast<int>(valid.sum()); }

nn::ObsBatch Batch::stacked_frames() const {
  return nn::ObsBatch::stack(std::span<const nn::ObsBatch>(frames.data(), static_cast<std::size_t>(length)));
}

Batch make_batch(const Dataset& dataset, const std::vector<int>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("make_batch: no episodes");
  const env::TaskSpec& spec = dataset.meta.task;
  const int K = spec.n_allies;
  const int E = spec.n_enemies;
  const int A = spec.n_actions();
  const int S = spec.state_dim();

  Batch b;
  b.task = spec;
  b.size = static_cast<int>(episodes.size());
  b.episode_index = episodes;
  for (int idx : episodes) {
    if (idx < 0 || idx >= static_cast<int>(dataset.episodes.size())) {
      throw std::out_of_range("make_batch: episode " + std::to_string(idx) + " out of range");
    }
    const auto& ep = dataset.episodes[idx];
    if (ep.steps.empty()) throw std::invalid_argument("make_batch: empty episode");
    b.length = std::max(b.length, static_cast<int>(ep.steps.size()));
  }
  const int B = b.size;
  const int L = b.length;

  b.reward = nn::Mat::Zero(L, B);
  b.done = nn::Mat::Zero(L, B);
  b.valid = nn::Mat::Zero(L, B);
  b.alive = nn::Mat::Zero(L, B * K);
  b.actions.assign(L, std::vector<int>(static_cast<std::size_t>(B) * K, 0));
  b.masks.assign(L, nn::Mat::Zero(B * K, A));

  std::vector<env::Observation> frame_obs(static_cast<std::size_t>(B) * K);
  for (int t = 0; t <= L; ++t) {
    nn::Mat state(B, S);
    for (int i = 0; i < B; ++i) {
      const Episode& ep = dataset.episodes[episodes[i]];
      const int len = static_cast<int>(ep.steps.size());
      const bool inside = t < len;
      const auto& obs = inside ? ep.steps[t].observations : ep.final_observations;
      const auto& gs = inside ? ep.steps[t].global_state : ep.final_state;
      if (static_cast<int>(obs.size()) != K || static_cast<int>(gs.size()) != S) {
        throw std::invalid_argument("make_batch: episode layout does not match the task");
      }
      for (int k = 0; k < K; ++k) frame_obs[static_cast<std::size_t>(i) * K + k] = obs[k];
      for (int j = 0; j < S; ++j) state(i, j) = gs[j];
      if (t == L) continue;
      if (inside) {
        const StepRecord& st = ep.steps[t];
        b.reward(t, i) = st.reward;
        b.done(t, i) = st.done ? 1.0 : 0.0;
        b.valid(t, i) = 1.0;
        for (int k = 0; k < K; ++k) {
          b.actions[t][static_cast<std::size_t>(i) * K + k] = st.actions[k];
          for (int a = 0; a < A; ++a) b.masks[t](i * K + k, a) = st.masks[k][a];
        }
      } else {
        for (int k = 0; k < K; ++k) b.masks[t](i * K + k, 0) = 1.0;
      }
      for (int k = 0; k < K; ++k) b.alive(t, i * K + k) = obs[k].own[3];
    }
    b.frames.push_back(nn::ObsBatch::from_observations(frame_obs, K, E));
    b.states.push_back(std::move(state));
  }
  return b;
}

Batch sample_batch(const Dataset& dataset, int batch_size, Rng& rng) {
  const int n = static_cast<int>(dataset.episodes.size());
  if (batch_size < 1) throw std::invalid_argument("sample_batch: batch size must be positive");
  if (batch_size > n) {
    throw std::invalid_argument("sample_batch: batch size " + std::to_string(batch_size) +
                                " exceeds episode count " + std::to_string(n));
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < batch_size; ++i) {
    const int j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(batch_size);
  return make_batch(dataset, idx);
}

}  // namespace hissd::data
