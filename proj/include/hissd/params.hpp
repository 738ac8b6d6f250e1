#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "hissd/rng.hpp"
#include "hissd/tape.hpp"

namespace hissd::nn {

/// Named parameter tensors with paired gradient slots.
class ParamStore {
 public:
  explicit ParamStore(std::string name = {}) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }

  /// Glorot-uniform weights.
  int add_weight(const std::string& name, int rows, int cols, Rng& rng);
  /// Zero-initialised tensor (biases, learned tokens).
  int add_zeros(const std::string& name, int rows, int cols);
  int add(const std::string& name, Mat value);

  int size() const { return static_cast<int>(entries_.size()); }
  const std::string& entry_name(int i) const { return entries_[i].name; }
  const Mat& value(int i) const { return entries_[i].value; }
  Mat& value(int i) { return entries_[i].value; }
  const Mat& grad(int i) const { return entries_[i].grad; }
  Mat& grad(int i) { return entries_[i].grad; }
  /// Throws std::out_of_range for unknown names.
  int find(const std::string& name) const;

  void zero_grad();
  std::size_t num_scalars() const;
  /// FNV-1a over names, shapes and value bytes.
  std::uint64_t hash() const;

  /// Copy with identical layout and values under a new store name; used for
  /// target and momentum networks.
  ParamStore shadow(const std::string& name) const;
  bool same_layout(const ParamStore& other) const;

 private:
  struct Entry {
    std::string name;
    Mat value;
    Mat grad;
  };
  std::string name_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

/// shadow <- rate * online + (1 - rate) * shadow for every entry. Throws
/// std::invalid_argument when the layouts differ.
void ema_update(ParamStore& shadow, const ParamStore& online, double rate);

}  // namespace hissd::nn
