#include "hissd/tape.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "hissd/params.hpp"

namespace hissd::nn {

const Mat& Var::value() const { return tape->value(*this); }

void Tape::track(ParamStore& store) {
  tracked_.insert(&store);
  tracked_mut_[&store] = &store;
}

bool Tape::tracks(const ParamStore& store) const { return tracked_.count(&store) > 0; }

Var Tape::push(Mat value, std::vector<int> inputs, std::function<void(Tape&, int)> backward) {
  Node node;
  node.value = std::move(value);
  for (int in : inputs) node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(Mat value) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

Var Tape::param(const ParamStore& store, int index) {
  const auto key = std::make_pair(&store, index);
  if (auto it = param_cache_.find(key); it != param_cache_.end()) return Var{this, it->second};
  Var v = push(store.value(index), {}, nullptr);
  if (auto it = tracked_mut_.find(&store); it != tracked_mut_.end()) {
    nodes_[v.id].requires_grad = true;
    nodes_[v.id].store = it->second;
    nodes_[v.id].param_index = index;
  }
  param_cache_[key] = v.id;
  return v;
}

Mat& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: variable from another tape");
  if (nodes_[loss.id].value.size() != 1) throw std::invalid_argument("backward: loss must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].requires_grad) return;
  grad_ref(loss.id)(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (n.store != nullptr && n.grad.size() != 0) n.store->grad(n.param_index) += n.grad;
  }
}

namespace {

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("invalid variable");
  return *a.tape;
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const int ia = a.id, ib = b.id;
  return tape_of(a).push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia) += g;
    if (t.needs(ib)) t.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id, ib = b.id;
  return tape_of(a).push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia) += g;
    if (t.needs(ib)) t.grad_ref(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id, ib = b.id;
  return tape_of(a).push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia) += g.cwiseProduct(t.value_of(ib));
    if (t.needs(ib)) t.grad_ref(ib) += g.cwiseProduct(t.value_of(ia));
  });
}

Var scale(Var a, double s) {
  const int ia = a.id;
  return tape_of(a).push(a.value() * s, {ia}, [ia, s](Tape& t, int self) {
    t.grad_ref(ia) += t.grad_ref(self) * s;
  });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id;
  return tape_of(a).push(a.value().array() + s, {ia}, [ia](Tape& t, int self) {
    t.grad_ref(ia) += t.grad_ref(self);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
  const int ia = a.id, ir = row.id;
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return tape_of(a).push(std::move(out), {ia, ir}, [ia, ir](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia) += g;
    if (t.needs(ir)) t.grad_ref(ir) += g.colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  const int ia = a.id, ib = b.id;
  Mat out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return tape_of(a).push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia).noalias() += g * t.value_of(ib).transpose();
    if (t.needs(ib)) t.grad_ref(ib).noalias() += t.value_of(ia).transpose() * g;
  });
}

Var affine(Var x, Var w, Var b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw std::invalid_argument("affine: shape mismatch (input width " + std::to_string(x.cols()) +
                                ", weight " + std::to_string(w.rows()) + "x" +
                                std::to_string(w.cols()) + ")");
  }
  const int ix = x.id, iw = w.id, ib = b.id;
  Mat out(x.rows(), w.cols());
  out.noalias() = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return tape_of(x).push(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ix)) t.grad_ref(ix).noalias() += g * t.value_of(iw).transpose();
    if (t.needs(iw)) t.grad_ref(iw).noalias() += t.value_of(ix).transpose() * g;
    if (t.needs(ib)) t.grad_ref(ib) += g.colwise().sum();
  });
}

Var elu(Var a) {
  const int ia = a.id;
  Mat out = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value_of(self);
    const Mat& g = t.grad_ref(self);
    const Mat& x = t.value_of(ia);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      ga.data()[i] += g.data()[i] * (x.data()[i] > 0.0 ? 1.0 : y.data()[i] + 1.0);
    }
  });
}

Var tanh(Var a) {
  const int ia = a.id;
  Mat out = a.value().array().tanh();
  return tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value_of(self);
    t.grad_ref(ia).array() += t.grad_ref(self).array() * (1.0 - y.array().square());
  });
}

Var exp(Var a) {
  const int ia = a.id;
  Mat out = a.value().array().exp();
  return tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad_ref(ia).array() += t.grad_ref(self).array() * t.value_of(self).array();
  });
}

Var square(Var a) {
  const int ia = a.id;
  Mat out = a.value().array().square();
  return tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    t.grad_ref(ia).array() += 2.0 * t.grad_ref(self).array() * t.value_of(ia).array();
  });
}

Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  const int ia = a.id, ib = b.id;
  const Eigen::Index ca = a.cols();
  Mat out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return tape_of(a).push(std::move(out), {ia, ib}, [ia, ib, ca](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia) += g.leftCols(ca);
    if (t.needs(ib)) t.grad_ref(ib) += g.rightCols(g.cols() - ca);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    offsets.push_back(rows);
    rows += p.rows();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleRows(offsets[i], parts[i].rows()) = parts[i].value();
  }
  return tape_of(parts[0]).push(std::move(out), ids, [ids, offsets](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.needs(ids[i])) continue;
      Mat& gi = t.grad_ref(ids[i]);
      gi += g.middleRows(offsets[i], gi.rows());
    }
  });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || begin + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const int ia = a.id;
  Mat out = a.value().middleCols(begin, count);
  return tape_of(a).push(std::move(out), {ia}, [ia, begin, count](Tape& t, int self) {
    t.grad_ref(ia).middleCols(begin, count) += t.grad_ref(self);
  });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: size mismatch");
  const int ia = a.id;
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    Mat& ga = t.grad_ref(ia);
    const Mat& g = t.grad_ref(self);
    Eigen::Map<Mat>(ga.data(), g.rows(), g.cols()) += g;
  });
}

Var interleave_groups(std::span<const Var> parts, std::span<const int> per_group, int groups) {
  if (parts.empty() || parts.size() != per_group.size()) {
    throw std::invalid_argument("interleave_groups: parts/per_group mismatch");
  }
  const Eigen::Index cols = parts[0].cols();
  int total = 0;
  std::vector<int> ids;
  std::vector<int> pg(per_group.begin(), per_group.end());
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].cols() != cols) throw std::invalid_argument("interleave_groups: column mismatch");
    if (parts[i].rows() != static_cast<Eigen::Index>(per_group[i]) * groups) {
      throw std::invalid_argument("interleave_groups: part " + std::to_string(i) + " has " +
                                  std::to_string(parts[i].rows()) + " rows, expected " +
                                  std::to_string(per_group[i] * groups));
    }
    total += per_group[i];
    ids.push_back(parts[i].id);
  }
  Mat out(static_cast<Eigen::Index>(total) * groups, cols);
  for (int g = 0; g < groups; ++g) {
    Eigen::Index row = static_cast<Eigen::Index>(g) * total;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out.middleRows(row, pg[i]) = parts[i].value().middleRows(static_cast<Eigen::Index>(g) * pg[i], pg[i]);
      row += pg[i];
    }
  }
  return tape_of(parts[0]).push(std::move(out), ids, [ids, pg, total, groups](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    for (int grp = 0; grp < groups; ++grp) {
      Eigen::Index row = static_cast<Eigen::Index>(grp) * total;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (t.needs(ids[i])) {
          t.grad_ref(ids[i]).middleRows(static_cast<Eigen::Index>(grp) * pg[i], pg[i]) +=
              g.middleRows(row, pg[i]);
        }
        row += pg[i];
      }
    }
  });
}

Var group_rows(Var a, int group_size, int begin, int count) {
  if (group_size <= 0 || a.rows() % group_size != 0 || begin < 0 || begin + count > group_size) {
    throw std::invalid_argument("group_rows: bad grouping");
  }
  const int ia = a.id;
  const Eigen::Index groups = a.rows() / group_size;
  Mat out(groups * count, a.cols());
  for (Eigen::Index g = 0; g < groups; ++g) {
    out.middleRows(g * count, count) = a.value().middleRows(g * group_size + begin, count);
  }
  return tape_of(a).push(std::move(out), {ia}, [ia, groups, group_size, begin, count](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index grp = 0; grp < groups; ++grp) {
      ga.middleRows(grp * group_size + begin, count) += g.middleRows(grp * count, count);
    }
  });
}

Var repeat_rows(Var a, int times) {
  const int ia = a.id;
  const Eigen::Index n = a.rows();
  Mat out(n * times, a.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (int k = 0; k < times; ++k) out.row(r * times + k) = a.value().row(r);
  }
  return tape_of(a).push(std::move(out), {ia}, [ia, n, times](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (int k = 0; k < times; ++k) ga.row(r) += g.row(r * times + k);
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const int ia = a.id;
  std::vector<int> idx(rows.begin(), rows.end());
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::out_of_range("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  }
  return tape_of(a).push(std::move(out), {ia}, [ia, idx](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var pick(Var a, std::span<const int> cols) {
  if (static_cast<Eigen::Index>(cols.size()) != a.rows()) throw std::invalid_argument("pick: size mismatch");
  const int ia = a.id;
  std::vector<int> idx(cols.begin(), cols.end());
  Mat out(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (idx[r] < 0 || idx[r] >= a.cols()) throw std::invalid_argument("pick: column out of range");
    out(r, 0) = a.value()(r, idx[r]);
  }
  return tape_of(a).push(std::move(out), {ia}, [ia, idx](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga(r, idx[r]) += g(r, 0);
  });
}

Var weighted_sum(Var a, const Mat& w) {
  if (w.rows() != a.rows() || w.cols() != a.cols()) throw std::invalid_argument("weighted_sum: shape mismatch");
  const int ia = a.id;
  Mat out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  return tape_of(a).push(std::move(out), {ia}, [ia, w](Tape& t, int self) {
    t.grad_ref(ia) += w * t.grad_ref(self)(0, 0);
  });
}

Var row_dot(Var a, Var b) {
  check_same_shape(a, b, "row_dot");
  const int ia = a.id, ib = b.id;
  Mat out = a.value().cwiseProduct(b.value()).rowwise().sum();
  return tape_of(a).push(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    if (t.needs(ia)) t.grad_ref(ia).array() += t.value_of(ib).array().colwise() * g.col(0).array();
    if (t.needs(ib)) t.grad_ref(ib).array() += t.value_of(ia).array().colwise() * g.col(0).array();
  });
}

Var group_sum(Var a, int group) {
  if (group <= 0 || a.rows() % group != 0) throw std::invalid_argument("group_sum: bad grouping");
  const int ia = a.id;
  const Eigen::Index n = a.rows() / group;
  Mat out = Mat::Zero(n, a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) out.row(r / group) += a.value().row(r);
  return tape_of(a).push(std::move(out), {ia}, [ia, group](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < ga.rows(); ++r) ga.row(r) += g.row(r / group);
  });
}

Var group_mean(Var a, int group) { return scale(group_sum(a, group), 1.0 / group); }

Var group_softmax(Var a, int group) {
  if (a.cols() != 1 || group <= 0 || a.rows() % group != 0) {
    throw std::invalid_argument("group_softmax: expects an n x 1 column grouped evenly");
  }
  const int ia = a.id;
  Mat out(a.rows(), 1);
  const Mat& x = a.value();
  for (Eigen::Index s = 0; s < x.rows(); s += group) {
    const double m = x.middleRows(s, group).maxCoeff();
    double z = 0.0;
    for (int k = 0; k < group; ++k) z += (out(s + k, 0) = std::exp(x(s + k, 0) - m));
    for (int k = 0; k < group; ++k) out(s + k, 0) /= z;
  }
  return tape_of(a).push(std::move(out), {ia}, [ia, group](Tape& t, int self) {
    const Mat& y = t.value_of(self);
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index s = 0; s < y.rows(); s += group) {
      double dot = 0.0;
      for (int k = 0; k < group; ++k) dot += g(s + k, 0) * y(s + k, 0);
      for (int k = 0; k < group; ++k) ga(s + k, 0) += y(s + k, 0) * (g(s + k, 0) - dot);
    }
  });
}

Var l2_normalize_rows(Var a) {
  const int ia = a.id;
  Mat norms = a.value().rowwise().norm();
  Mat out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (norms(r, 0) <= 0.0) throw std::domain_error("l2_normalize_rows: zero row");
    out.row(r) /= norms(r, 0);
  }
  Mat saved = norms;
  Var v = tape_of(a).push(std::move(out), {ia}, [ia](Tape& t, int self) {
    const Mat& y = t.value_of(self);
    const Mat& g = t.grad_ref(self);
    const Mat& n = t.aux_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double proj = g.row(r).dot(y.row(r));
      ga.row(r) += (g.row(r) - proj * y.row(r)) / n(r, 0);
    }
  });
  v.tape->aux_ref(v.id) = std::move(saved);
  return v;
}

Var masked_log_softmax(Var logits, const Mat& mask) {
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) {
    throw std::invalid_argument("masked_log_softmax: mask shape mismatch");
  }
  const int ia = logits.id;
  const Mat& x = logits.value();
  Mat out = Mat::Zero(x.rows(), x.cols());
  Mat prob = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) m = std::max(m, x(r, c));
    }
    if (!std::isfinite(m)) throw std::invalid_argument("masked_log_softmax: row with no legal entry");
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) z += std::exp(x(r, c) - m);
    }
    const double log_z = m + std::log(z);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c) != 0.0) {
        out(r, c) = x(r, c) - log_z;
        prob(r, c) = std::exp(out(r, c));
      }
    }
  }
  Var v = tape_of(logits).push(std::move(out), {ia}, [ia, mask](Tape& t, int self) {
    const Mat& g = t.grad_ref(self);
    const Mat& p = t.aux_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      double gsum = 0.0;
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        if (mask(r, c) != 0.0) gsum += g(r, c);
      }
      for (Eigen::Index c = 0; c < g.cols(); ++c) {
        if (mask(r, c) != 0.0) ga(r, c) += g(r, c) - p(r, c) * gsum;
      }
    }
  });
  v.tape->aux_ref(v.id) = std::move(prob);
  return v;
}

Var expectile(Var n, double eps) {
  const int ia = n.id;
  Mat out = n.value().unaryExpr([eps](double x) { return (x < 0.0 ? 1.0 - eps : eps) * x * x; });
  return tape_of(n).push(std::move(out), {ia}, [ia, eps](Tape& t, int self) {
    const Mat& x = t.value_of(ia);
    const Mat& g = t.grad_ref(self);
    Mat& ga = t.grad_ref(ia);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double w = x.data()[i] < 0.0 ? 1.0 - eps : eps;
      ga.data()[i] += g.data()[i] * 2.0 * w * x.data()[i];
    }
  });
}

Var attention(Var q, Var k, Var v, int group) {
  check_same_shape(q, k, "attention(q, k)");
  if (v.rows() != q.rows() || group <= 0 || q.rows() % group != 0) {
    throw std::invalid_argument("attention: rows must split evenly into groups");
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  const Eigen::Index groups = q.rows() / group;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out(q.rows(), v.cols());
  Mat probs(q.rows(), group);
  for (Eigen::Index g = 0; g < groups; ++g) {
    const auto qg = q.value().middleRows(g * group, group);
    const auto kg = k.value().middleRows(g * group, group);
    Mat s = (qg * kg.transpose()) * inv_sqrt_d;
    for (Eigen::Index r = 0; r < group; ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    out.middleRows(g * group, group).noalias() = s * v.value().middleRows(g * group, group);
    probs.middleRows(g * group, group) = s;
  }
  Var res = tape_of(q).push(std::move(out), {iq, ik, iv}, [iq, ik, iv, group, groups, inv_sqrt_d](Tape& t, int self) {
    const Mat& dout = t.grad_ref(self);
    const Mat& p_all = t.aux_ref(self);
    const Mat& qv = t.value_of(iq);
    const Mat& kv = t.value_of(ik);
    const Mat& vv = t.value_of(iv);
    const bool nq = t.needs(iq), nk = t.needs(ik), nv = t.needs(iv);
    for (Eigen::Index g = 0; g < groups; ++g) {
      const auto p = p_all.middleRows(g * group, group);
      const auto dg = dout.middleRows(g * group, group);
      if (nv) t.grad_ref(iv).middleRows(g * group, group).noalias() += p.transpose() * dg;
      if (!nq && !nk) continue;
      Mat dp = dg * vv.middleRows(g * group, group).transpose();
      Mat ds = p.cwiseProduct(dp);
      const Eigen::VectorXd rows = ds.rowwise().sum();
      ds -= (p.array().colwise() * rows.array()).matrix();
      ds *= inv_sqrt_d;
      if (nq) t.grad_ref(iq).middleRows(g * group, group).noalias() += ds * kv.middleRows(g * group, group);
      if (nk) t.grad_ref(ik).middleRows(g * group, group).noalias() += ds.transpose() * qv.middleRows(g * group, group);
    }
  });
  res.tape->aux_ref(res.id) = std::move(probs);
  return res;
}

}  // namespace hissd::nn
