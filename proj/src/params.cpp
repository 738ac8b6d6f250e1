#include "hissd/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace hissd::nn {

int ParamStore::add(const std::string& name, Mat value) {
  if (index_.count(name) > 0) throw std::invalid_argument("duplicate parameter '" + name + "'");
  Entry e{name, std::move(value), Mat()};
  e.grad = Mat::Zero(e.value.rows(), e.value.cols());
  entries_.push_back(std::move(e));
  index_[name] = static_cast<int>(entries_.size()) - 1;
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::add_weight(const std::string& name, int rows, int cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Mat w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = (2.0 * uniform01(rng) - 1.0) * bound;
  return add(name, std::move(w));
}

int ParamStore::add_zeros(const std::string& name, int rows, int cols) {
  return add(name, Mat::Zero(rows, cols));
}

int ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "' in store '" + name_ + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.setZero();
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    const std::int64_t shape[2] = {e.value.rows(), e.value.cols()};
    mix(shape, sizeof(shape));
    mix(e.value.data(), sizeof(double) * static_cast<std::size_t>(e.value.size()));
  }
  return h;
}

ParamStore ParamStore::shadow(const std::string& name) const {
  ParamStore s(name);
  for (const auto& e : entries_) s.add(e.name, e.value);
  return s;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].value.rows() != other.entries_[i].value.rows() ||
        entries_[i].value.cols() != other.entries_[i].value.cols()) {
      return false;
    }
  }
  return true;
}

void ema_update(ParamStore& shadow, const ParamStore& online, double rate) {
  if (!shadow.same_layout(online)) {
    throw std::invalid_argument("ema_update: layout of '" + shadow.name() + "' differs from '" +
                                online.name() + "'");
  }
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("ema_update: rate outside [0, 1]");
  for (int i = 0; i < shadow.size(); ++i) {
    if (rate == 1.0) {
      shadow.value(i) = online.value(i);
    } else if (rate != 0.0) {
      shadow.value(i) = rate * online.value(i) + (1.0 - rate) * shadow.value(i);
    }
  }
}

}  // namespace hissd::nn
