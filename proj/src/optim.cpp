#include "hissd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace hissd::nn {

Adam::Adam(std::vector<ParamStore*> stores, AdamConfig cfg) : stores_(std::move(stores)), cfg_(cfg) {
  for (const ParamStore* s : stores_) {
    std::vector<Mat> m, v;
    for (int i = 0; i < s->size(); ++i) {
      m.push_back(Mat::Zero(s->value(i).rows(), s->value(i).cols()));
      v.push_back(Mat::Zero(s->value(i).rows(), s->value(i).cols()));
    }
    m_.push_back(std::move(m));
    v_.push_back(std::move(v));
  }
}

void Adam::zero_grad() {
  for (ParamStore* s : stores_) s->zero_grad();
}

void Adam::step() {
  for (const ParamStore* s : stores_) {
    for (int i = 0; i < s->size(); ++i) {
      if (!s->grad(i).allFinite()) {
        throw std::domain_error("non-finite gradient in '" + s->name() + "/" + s->entry_name(i) + "'");
      }
    }
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t si = 0; si < stores_.size(); ++si) {
    ParamStore& s = *stores_[si];
    for (int i = 0; i < s.size(); ++i) {
      Mat& m = m_[si][i];
      Mat& v = v_[si][i];
      const Mat& g = s.grad(i);
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Mat& p = s.value(i);
      p.array() -= cfg_.lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps) +
                              cfg_.weight_decay * p.array());
    }
  }
}

}  // namespace hissd::nn
