#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dbr/core/tensor.hpp"

namespace dbr::core {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode gradient tape over a fixed set of tensor primitives.
///
/// Every operation appends a node holding its forward value and a closure that
/// pushes the node's gradient into its inputs. `backward` walks the nodes in
/// reverse insertion order, so the reduction order is fixed and results are
/// bit-reproducible. Parameter leaves accumulate into `Parameter::grad`.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> value);
  Var param(Parameter<T>& p);

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward pass; zeros if the node was not reached.
  const Tensor<T>& grad(Var v);

  // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must hold one element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Used by primitive implementations.
  Var record(Tensor<T> value, BackwardFn fn, bool needs_grad);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor<T>& grad_buffer(Var v);
  const Tensor<T>& grad_of(std::size_t id) const { return nodes_[id].grad; }
  const Tensor<T>& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };
  // deque: references to earlier nodes stay valid while new ones are recorded.
  std::deque<Node> nodes_;
};

// ---- primitives --------------------------------------------------------

/// a[m×k] · b[k×n] → [m×n].
template <typename T>
Var matmul(Tape<T>& t, Var a, Var b);

/// Elementwise a + b (identical shapes).
template <typename T>
Var add(Tape<T>& t, Var a, Var b);

/// x[rows×n] + bias[n] broadcast over rows.
template <typename T>
Var add_bias(Tape<T>& t, Var x, Var bias);

/// x·W + b for x[B×in], W[in×out], b[out].
template <typename T>
Var linear(Tape<T>& t, Var x, Var weight, Var bias) {
  return add_bias(t, matmul(t, x, weight), bias);
}

template <typename T>
Var relu(Tape<T>& t, Var x);

/// Concatenation of 2-D tensors with equal row count along columns.
template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts);

/// Elementwise mean of same-shaped tensors.
template <typename T>
Var mean_of(Tape<T>& t, std::span<const Var> parts);

/// x[B×T×F] → x[:, step, :] as [B×F].
template <typename T>
Var time_step(Tape<T>& t, Var x, std::size_t step);

/// [B×T×F] → [B×F×T].
template <typename T>
Var swap_last_axes(Tape<T>& t, Var x);

/// [B×...] → [B×prod(...)].
template <typename T>
Var flatten(Tape<T>& t, Var x);

/// Valid cross-correlation over time: in[B×Cin×T], kernels[Cout×Cin×k],
/// bias[Cout] → [B×Cout×(T−k+1)].
template <typename T>
Var conv1d_valid(Tape<T>& t, Var input, Var kernels, Var bias);

/// Per-channel maximum over the last axis: [B×C×L] → [B×C]. The gradient goes
/// to the first maximal position.
template <typename T>
Var max_over_time(Tape<T>& t, Var input);

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM step. Gate columns of wx[in×4H], wh[H×4H], b[4H] are laid out as
/// input, forget, candidate, output.
template <typename T>
LstmState lstm_cell(Tape<T>& t, Var x, Var h, Var c, Var wx, Var wh, Var b);

/// Mean over the batch of −log softmax(logits)[label]. With class weights the
/// per-sample terms are weighted and normalized by the summed weights.
template <typename T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels,
                          std::span<const double> class_weights = {});

// ---- plain helpers (no tape) -------------------------------------------

/// Row-wise softmax of a 2-D tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits);

/// Row-wise argmax with ties resolved to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

}  // namespace dbr::core
