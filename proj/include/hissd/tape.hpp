#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Parameters enter the
// tape through Tape::param(); only stores registered with Tape::track()
// receive gradients, everything else is treated as a constant. After
// Tape::backward() the gradients of tracked parameters are added into the
// owning ParamStore's gradient slots.

#include <functional>
#include <map>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace hissd::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ParamStore;
class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Enables gradient collection for every parameter of `store`.
  void track(ParamStore& store);
  bool tracks(const ParamStore& store) const;

  Var constant(Mat value);
  /// A free leaf; gradients are readable through grad() after backward().
  Var leaf(Mat value);
  /// Parameter entry `index` of `store`; constant unless the store is tracked.
  Var param(const ParamStore& store, int index);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. `v`; zero-sized if none
  /// flowed.
  const Mat& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Extra tensor saved by an op (attention probabilities).
  const Mat& aux(Var v) const { return nodes_[v.id].aux; }

  /// Back-propagates from a 1x1 node and flushes parameter gradients into
  /// the tracked stores.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Op construction interface.
  Var push(Mat value, std::vector<int> inputs, std::function<void(Tape&, int)> backward);
  Mat& grad_ref(int id);
  Mat& aux_ref(int id) { return nodes_[id].aux; }
  const Mat& value_of(int id) const { return nodes_[id].value; }
  bool needs(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Mat aux;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backward;
    ParamStore* store = nullptr;
    int param_index = -1;
  };

  std::vector<Node> nodes_;
  std::set<const ParamStore*> tracked_;
  std::map<const ParamStore*, ParamStore*> tracked_mut_;
  std::map<std::pair<const ParamStore*, int>, int> param_cache_;
};

// ---- elementwise and linear algebra ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// Adds a 1 x c row vector to every row of `a`.
Var add_row(Var a, Var row);
Var matmul(Var a, Var b);
/// x * w + b with b broadcast over rows.
Var affine(Var x, Var w, Var b);
Var elu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var square(Var a);

// ---- shape manipulation ----
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
/// Row-major reshape.
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
/// Each part holds `per_group[i]` rows per group; the result interleaves
/// them group by group: [g0: part0 rows, part1 rows, ...][g1: ...].
Var interleave_groups(std::span<const Var> parts, std::span<const int> per_group, int groups);
/// Rows [g * group_size + begin, + count) for every group g.
Var group_rows(Var a, int group_size, int begin, int count = 1);
/// Repeats each row `times` times consecutively.
Var repeat_rows(Var a, int times);
/// Rows of `a` in the given order (repeats allowed).
Var gather_rows(Var a, std::span<const int> rows);
/// Row i, column cols[i].
Var pick(Var a, std::span<const int> cols);

// ---- reductions and normalisations ----
/// Sum of w .* a as a 1x1 node; `w` is a constant of a's shape.
Var weighted_sum(Var a, const Mat& w);
/// Per-row dot product, n x 1.
Var row_dot(Var a, Var b);
/// Sum of consecutive blocks of `group` rows.
Var group_sum(Var a, int group);
Var group_mean(Var a, int group);
/// Softmax of an n x 1 column within consecutive blocks of `group` rows.
Var group_softmax(Var a, int group);
Var l2_normalize_rows(Var a);
/// Row-wise log-softmax restricted to entries with mask != 0; masked
/// entries are returned as 0 and receive no gradient.
Var masked_log_softmax(Var logits, const Mat& mask);
/// |eps - 1(n < 0)| * n^2 elementwise.
Var expectile(Var n, double eps);

/// Scaled dot-product attention within consecutive groups of `group` rows:
/// out_g = softmax(Q_g K_g^T / sqrt(d_k)) V_g. The probabilities are saved
/// as aux (groups stacked vertically, group x group each).
Var attention(Var q, Var k, Var v, int group);

}  // namespace hissd::nn
