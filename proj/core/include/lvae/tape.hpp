#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "lvae/tensor.hpp"

namespace lvae {

using NodeId = int32_t;

/// Reverse-mode autodiff over a dynamically recorded computation graph.
/// One Tape records one forward pass; backward() may run once per recording.
/// Nodes are appended in topological order by construction, so the backward
/// sweep is a single reverse walk. A Tape is single-threaded by contract;
/// independent tapes may run on independent threads.
///
/// Values are 32-bit floats. A float64 shadow lane exists in two places:
/// tapes built with Precision::kDouble carry it on every node (this is what
/// the finite-difference oracle evaluates), and ordinary tapes carry it on
/// scalar reduction chains so loss terms can be read without the final f32
/// round. Gradients are always 32-bit.
class Tape {
 public:
  enum class Precision { kFloat, kDouble };

  Tape() = default;
  explicit Tape(Precision p) : precision_(p) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool precise() const { return precision_ == Precision::kDouble; }

  NodeId leaf(Tensor value, bool requires_grad = false);
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(NodeId id) const { return nodes_[check_id(id)].value; }
  bool requires_grad(NodeId id) const { return nodes_[check_id(id)].requires_grad; }

  /// Scalar node value, from the float64 lane when present.
  double scalar_value(NodeId id) const;

  /// Smallest distance of any relu/clamp input to its kink in this forward
  /// pass. Central differences are only trustworthy when this comfortably
  /// exceeds the probe step.
  double min_kink_distance() const { return min_kink_distance_; }
  void note_kink_distance(double d) { min_kink_distance_ = std::min(min_kink_distance_, d); }

  /// Gradient of the last backward()'s loss w.r.t. node `id`.
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;

  /// Populates gradients for every node the scalar `loss` depends on.
  /// Rejects non-scalar losses and repeated backward without re-recording.
  void backward(NodeId loss);

  size_t num_nodes() const { return nodes_.size(); }

  // --- op-construction internals -------------------------------------------
  /// Backward callback; `self` is the id of the node the callback belongs to.
  using BackFn = std::function<void(Tape&, NodeId self)>;
  NodeId emit(Tensor value, std::initializer_list<NodeId> inputs, BackFn back);
  NodeId emit(Tensor value, const std::vector<NodeId>& inputs, BackFn back);
  Tensor& grad_buffer(NodeId id);  // lazily allocated, zero-filled

  /// float64 lane of a node; null when the node does not carry one.
  const std::vector<double>* dval(NodeId id) const;
  void set_dval(NodeId id, std::vector<double> dv);

 private:
  struct Node {
    Tensor value;
    Tensor grad;         // empty until touched by backward
    std::vector<double> dv;  // float64 lane; may be empty
    bool requires_grad = false;
    BackFn back;         // null for leaves
  };

  size_t check_id(NodeId id) const;

  Precision precision_ = Precision::kFloat;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
  double min_kink_distance_ = std::numeric_limits<double>::infinity();
};

namespace ops {

// elementwise
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId a, float c);
NodeId add_scalar(Tape& t, NodeId a, float c);
NodeId sigmoid(Tape& t, NodeId a);
NodeId tanh(Tape& t, NodeId a);
NodeId relu(Tape& t, NodeId a);
NodeId exp(Tape& t, NodeId a);
NodeId log(Tape& t, NodeId a);
NodeId square(Tape& t, NodeId a);
NodeId clamp(Tape& t, NodeId a, float lo, float hi);

/// Full reduction to a scalar; accumulates in double.
NodeId sum(Tape& t, NodeId a);

/// y[n,m] = sum_d x[n,d] w[d,m] + b[m]
NodeId affine(Tape& t, NodeId x, NodeId w, NodeId b);

/// x:[N,C,H,W], w:[K,C,kh,kw], b:[K] -> [N,K,H',W'] with
/// H' = (H + 2*pad - kh)/stride + 1.
NodeId conv2d(Tape& t, NodeId x, NodeId w, NodeId b, int stride, int pad);

/// Nearest-neighbour 2x replication; gradient sums each 2x2 block.
NodeId upsample2x(Tape& t, NodeId a);

/// Concatenate along axis 1 (features of [N,D] or channels of [N,C,H,W]).
NodeId concat(Tape& t, NodeId a, NodeId b);
NodeId concat(Tape& t, const std::vector<NodeId>& parts);

/// Columns [begin, end) of axis 1.
NodeId slice(Tape& t, NodeId a, int begin, int end);

NodeId reshape(Tape& t, NodeId a, Shape s);

/// [N,1,H,W] -> [N,C,H,W]; gradient sums over the replicated channels.
NodeId broadcast_channels(Tape& t, NodeId g, int channels);

}  // namespace ops

// --- finite-difference oracle ----------------------------------------------

/// Builds a scalar loss from a leaf holding `x`.
using TapeFn = std::function<NodeId(Tape&, NodeId)>;

/// Central-difference gradient of f at x (double arithmetic around f32 evals).
Tensor numeric_gradient(const TapeFn& f, const Tensor& x, double eps);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-8)
double max_rel_err(const Tensor& analytic, const Tensor& numeric);

/// Analytic-vs-numeric check of f at x; returns the max relative error.
double grad_check(const TapeFn& f, const Tensor& x, double eps);

}  // namespace lvae
