#include "dbr/core/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>

namespace dbr::core {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;
template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
CMap<T> as_matrix(const Tensor<T>& x) {
  return CMap<T>(x.data(), static_cast<Eigen::Index>(x.dim(0)),
                 static_cast<Eigen::Index>(x.dim(1)));
}
template <typename T>
Map<T> as_matrix(Tensor<T>& x) {
  return Map<T>(x.data(), static_cast<Eigen::Index>(x.dim(0)),
                static_cast<Eigen::Index>(x.dim(1)));
}
template <typename T>
CArrMap<T> as_array(const Tensor<T>& x) {
  return CArrMap<T>(x.data(), static_cast<Eigen::Index>(x.size()));
}
template <typename T>
ArrMap<T> as_array(Tensor<T>& x) {
  return ArrMap<T>(x.data(), static_cast<Eigen::Index>(x.size()));
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " + shape_to_string(s));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_to_string(a) + " and " + shape_to_string(b));
}

}  // namespace

// ---- Tape ----------------------------------------------------------------

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return record(std::move(value), nullptr, false);
}

template <typename T>
Var Tape<T>::param(Parameter<T>& p) {
  Var v = record(p.value, nullptr, true);
  nodes_[v.id].param = &p;
  return v;
}

template <typename T>
Var Tape<T>::record(Tensor<T> value, BackwardFn fn, bool needs_grad) {
  Node n;
  n.value = std::move(value);
  n.backward = needs_grad ? std::move(fn) : nullptr;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) {
  return grad_buffer(v);
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got " +
                         shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss)[0] = T(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      as_array(n.param->grad) += as_array(nodes_[id].grad);
    }
  }
}

template class Tape<float>;
template class Tape<double>;

// ---- primitives ------------------------------------------------------------

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  require_rank(av.shape(), 2, "matmul");
  require_rank(bv.shape(), 2, "matmul");
  if (av.dim(1) != bv.dim(0)) mismatch("matmul", av.shape(), bv.shape());
  Tensor<T> out({av.dim(0), bv.dim(1)});
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), [a, b](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    if (tp.needs_grad(a)) {
      as_matrix(tp.grad_buffer(a)).noalias() +=
          as_matrix(g) * as_matrix(tp.value(b)).transpose();
    }
    if (tp.needs_grad(b)) {
      as_matrix(tp.grad_buffer(b)).noalias() +=
          as_matrix(tp.value(a)).transpose() * as_matrix(g);
    }
  }, ng);
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const Tensor<T>& av = t.value(a);
  const Tensor<T>& bv = t.value(b);
  if (av.shape() != bv.shape()) mismatch("add", av.shape(), bv.shape());
  Tensor<T> out(av.shape());
  as_array(out) = as_array(av) + as_array(bv);
  bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.record(std::move(out), [a, b](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    if (tp.needs_grad(a)) as_array(tp.grad_buffer(a)) += as_array(g);
    if (tp.needs_grad(b)) as_array(tp.grad_buffer(b)) += as_array(g);
  }, ng);
}

template <typename T>
Var add_bias(Tape<T>& t, Var x, Var bias) {
  const Tensor<T>& xv = t.value(x);
  const Tensor<T>& bv = t.value(bias);
  require_rank(xv.shape(), 2, "add_bias");
  require_rank(bv.shape(), 1, "add_bias");
  if (xv.dim(1) != bv.dim(0)) mismatch("add_bias", xv.shape(), bv.shape());
  Tensor<T> out = xv;
  auto bias_row = CMap<T>(bv.data(), 1, static_cast<Eigen::Index>(bv.dim(0)));
  as_matrix(out).rowwise() += bias_row.row(0);
  bool ng = t.needs_grad(x) || t.needs_grad(bias);
  return t.record(std::move(out), [x, bias](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    if (tp.needs_grad(x)) as_array(tp.grad_buffer(x)) += as_array(g);
    if (tp.needs_grad(bias)) {
      Tensor<T>& gb = tp.grad_buffer(bias);
      const std::size_t rows = g.dim(0), cols = g.dim(1);
      // Fixed row order keeps the reduction reproducible.
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  }, ng);
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  Tensor<T> out(xv.shape());
  as_array(out) = as_array(xv).max(T(0));
  return t.record(std::move(out), [x](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    const Tensor<T>& xv2 = tp.value(x);
    as_array(tp.grad_buffer(x)) +=
        (as_array(xv2) > T(0)).select(as_array(g), T(0));
  }, t.needs_grad(x));
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).dim(0);
  std::size_t cols = 0;
  bool ng = false;
  for (Var p : parts) {
    const Tensor<T>& v = t.value(p);
    require_rank(v.shape(), 2, "concat_cols");
    if (v.dim(0) != rows) mismatch("concat_cols", t.value(parts[0]).shape(), v.shape());
    cols += v.dim(1);
    ng = ng || t.needs_grad(p);
  }
  Tensor<T> out({rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor<T>& v = t.value(p);
    offsets.push_back(off);
    as_matrix(out).middleCols(static_cast<Eigen::Index>(off),
                              static_cast<Eigen::Index>(v.dim(1))) = as_matrix(v);
    off += v.dim(1);
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out),
                  [ins, offsets](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (!tp.needs_grad(ins[i])) continue;
      Tensor<T>& gi = tp.grad_buffer(ins[i]);
      as_matrix(gi) += as_matrix(g).middleCols(
          static_cast<Eigen::Index>(offsets[i]),
          static_cast<Eigen::Index>(gi.dim(1)));
    }
  }, ng);
}

template <typename T>
Var mean_of(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("mean_of: no inputs");
  Tensor<T> out(t.value(parts[0]).shape());
  bool ng = false;
  for (Var p : parts) {
    const Tensor<T>& v = t.value(p);
    if (v.shape() != out.shape()) mismatch("mean_of", out.shape(), v.shape());
    as_array(out) += as_array(v);
    ng = ng || t.needs_grad(p);
  }
  const T scale = T(1) / static_cast<T>(parts.size());
  as_array(out) *= scale;
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.record(std::move(out), [ins, scale](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    for (Var p : ins) {
      if (tp.needs_grad(p)) as_array(tp.grad_buffer(p)) += as_array(g) * scale;
    }
  }, ng);
}

template <typename T>
Var time_step(Tape<T>& t, Var x, std::size_t step) {
  const Tensor<T>& xv = t.value(x);
  require_rank(xv.shape(), 3, "time_step");
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), feat = xv.dim(2);
  if (step >= steps) {
    throw DimensionError("time_step: step " + std::to_string(step) +
                         " outside " + shape_to_string(xv.shape()));
  }
  Tensor<T> out({batch, feat});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t f = 0; f < feat; ++f) out.at(b, f) = xv.at(b, step, f);
  }
  return t.record(std::move(out), [x, step](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    Tensor<T>& gx = tp.grad_buffer(x);
    for (std::size_t b = 0; b < g.dim(0); ++b) {
      for (std::size_t f = 0; f < g.dim(1); ++f) gx.at(b, step, f) += g.at(b, f);
    }
  }, t.needs_grad(x));
}

template <typename T>
Var swap_last_axes(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  require_rank(xv.shape(), 3, "swap_last_axes");
  const std::size_t b0 = xv.dim(0), d1 = xv.dim(1), d2 = xv.dim(2);
  Tensor<T> out({b0, d2, d1});
  for (std::size_t b = 0; b < b0; ++b) {
    for (std::size_t i = 0; i < d1; ++i) {
      for (std::size_t j = 0; j < d2; ++j) out.at(b, j, i) = xv.at(b, i, j);
    }
  }
  return t.record(std::move(out), [x](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    Tensor<T>& gx = tp.grad_buffer(x);
    for (std::size_t b = 0; b < gx.dim(0); ++b) {
      for (std::size_t i = 0; i < gx.dim(1); ++i) {
        for (std::size_t j = 0; j < gx.dim(2); ++j) gx.at(b, i, j) += g.at(b, j, i);
      }
    }
  }, t.needs_grad(x));
}

template <typename T>
Var flatten(Tape<T>& t, Var x) {
  const Tensor<T>& xv = t.value(x);
  if (xv.rank() < 2) throw DimensionError("flatten: rank < 2 in " + shape_to_string(xv.shape()));
  Tensor<T> out = xv.reshaped({xv.dim(0), xv.size() / xv.dim(0)});
  return t.record(std::move(out), [x](Tape<T>& tp, std::size_t self) {
    as_array(tp.grad_buffer(x)) += as_array(tp.grad_of(self));
  }, t.needs_grad(x));
}

template <typename T>
Var conv1d_valid(Tape<T>& t, Var input, Var kernels, Var bias) {
  const Tensor<T>& in = t.value(input);
  const Tensor<T>& k = t.value(kernels);
  const Tensor<T>& bv = t.value(bias);
  require_rank(in.shape(), 3, "conv1d_valid");
  require_rank(k.shape(), 3, "conv1d_valid");
  require_rank(bv.shape(), 1, "conv1d_valid");
  const std::size_t batch = in.dim(0), cin = in.dim(1), len = in.dim(2);
  const std::size_t cout = k.dim(0), width = k.dim(2);
  if (k.dim(1) != cin) mismatch("conv1d_valid", in.shape(), k.shape());
  if (bv.dim(0) != cout) mismatch("conv1d_valid", k.shape(), bv.shape());
  if (width > len) {
    throw ConfigError("conv1d_valid: kernel width " + std::to_string(width) +
                      " exceeds sequence length " + std::to_string(len));
  }
  const std::size_t out_len = len - width + 1;
  // im2col: one row per (sample, output step) holding the cin×width patch, in
  // the same order as a flattened kernel row.
  const std::size_t patch = cin * width;
  auto cols = std::make_shared<Tensor<T>>(Shape{batch * out_len, patch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < out_len; ++s) {
      T* row = cols->data() + (b * out_len + s) * patch;
      for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t j = 0; j < width; ++j) row[c * width + j] = in.at(b, c, s + j);
    }
  const CMap<T> kmat(k.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(patch));
  MatR<T> prod = as_matrix(*cols) * kmat.transpose();  // (B·L)×cout
  Tensor<T> out({batch, cout, out_len});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t s = 0; s < out_len; ++s) {
        out.at(b, o, s) = prod(static_cast<Eigen::Index>(b * out_len + s), static_cast<Eigen::Index>(o)) + bv[o];
      }
  bool ng = t.needs_grad(input) || t.needs_grad(kernels) || t.needs_grad(bias);
  return t.record(std::move(out),
                  [input, kernels, bias, cols](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    const Tensor<T>& kv = tp.value(kernels);
    const std::size_t nb = g.dim(0), no = g.dim(1), nl = g.dim(2);
    const std::size_t np = kv.dim(1) * kv.dim(2), nw = kv.dim(2);
    MatR<T> gm(static_cast<Eigen::Index>(nb * nl), static_cast<Eigen::Index>(no));
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t o = 0; o < no; ++o)
        for (std::size_t s = 0; s < nl; ++s) {
          gm(static_cast<Eigen::Index>(b * nl + s), static_cast<Eigen::Index>(o)) = g.at(b, o, s);
        }
    if (tp.needs_grad(bias)) {
      Tensor<T>& gb = tp.grad_buffer(bias);
      for (std::size_t o = 0; o < no; ++o) gb[o] += gm.col(static_cast<Eigen::Index>(o)).sum();
    }
    if (tp.needs_grad(kernels)) {
      Tensor<T>& gk = tp.grad_buffer(kernels);
      Map<T>(gk.data(), static_cast<Eigen::Index>(no), static_cast<Eigen::Index>(np)).noalias() +=
          gm.transpose() * as_matrix(*cols);
    }
    if (tp.needs_grad(input)) {
      Tensor<T>& gi = tp.grad_buffer(input);
      const CMap<T> km(kv.data(), static_cast<Eigen::Index>(no), static_cast<Eigen::Index>(np));
      MatR<T> gp = gm * km;  // (B·L)×patch
      const std::size_t nc = kv.dim(1);
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t s = 0; s < nl; ++s) {
          const T* row = gp.data() + (b * nl + s) * np;
          for (std::size_t c = 0; c < nc; ++c)
            for (std::size_t j = 0; j < nw; ++j) gi.at(b, c, s + j) += row[c * nw + j];
        }
    }
  }, ng);
}

template <typename T>
Var max_over_time(Tape<T>& t, Var input) {
  const Tensor<T>& in = t.value(input);
  require_rank(in.shape(), 3, "max_over_time");
  const std::size_t batch = in.dim(0), ch = in.dim(1), len = in.dim(2);
  Tensor<T> out({batch, ch});
  std::vector<std::size_t> arg(batch * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      std::size_t best = 0;
      T v = in.at(b, c, 0);
      for (std::size_t s = 1; s < len; ++s) {
        if (in.at(b, c, s) > v) {
          v = in.at(b, c, s);
          best = s;
        }
      }
      out.at(b, c) = v;
      arg[b * ch + c] = best;
    }
  }
  return t.record(std::move(out),
                  [input, arg = std::move(arg)](Tape<T>& tp, std::size_t self) {
    const Tensor<T>& g = tp.grad_of(self);
    Tensor<T>& gi = tp.grad_buffer(input);
    const std::size_t nb = g.dim(0), nc = g.dim(1);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t c = 0; c < nc; ++c) gi.at(b, c, arg[b * nc + c]) += g.at(b, c);
  }, t.needs_grad(input));
}

template <typename T>
LstmState lstm_cell(Tape<T>& t, Var x, Var h, Var c, Var wx, Var wh, Var b) {
  const Tensor<T>& hv = t.value(h);
  const Tensor<T>& cv = t.value(c);
  const Tensor<T>& whv = t.value(wh);
  require_rank(hv.shape(), 2, "lstm_cell");
  require_rank(whv.shape(), 2, "lstm_cell");
  const std::size_t hidden = hv.dim(1);
  if (whv.dim(0) != hidden || whv.dim(1) != 4 * hidden) mismatch("lstm_cell", hv.shape(), whv.shape());
  if (cv.shape() != hv.shape()) mismatch("lstm_cell", hv.shape(), cv.shape());

  Var pre = add_bias(t, add(t, matmul(t, x, wx), matmul(t, h, wh)), b);
  const Tensor<T>& pv = t.value(pre);
  if (pv.dim(0) != hv.dim(0)) mismatch("lstm_cell", pv.shape(), hv.shape());
  const std::size_t batch = hv.dim(0);
  const auto H = static_cast<Eigen::Index>(hidden);

  // Activated gates in the same column layout as the pre-activations.
  Tensor<T> act(pv.shape());
  {
    auto p = as_matrix(pv);
    auto a = as_matrix(act);
    auto sig = [](auto block) { return (T(0.5) * (T(0.5) * block.array()).tanh() + T(0.5)); };
    a.leftCols(2 * H) = sig(p.leftCols(2 * H));
    a.middleCols(2 * H, H) = p.middleCols(2 * H, H).array().tanh();
    a.rightCols(H) = sig(p.rightCols(H));
  }
  Tensor<T> c_next({batch, hidden});
  Tensor<T> tanh_c({batch, hidden});
  {
    auto a = as_matrix(act);
    auto cn = as_matrix(c_next);
    cn = a.middleCols(H, H).cwiseProduct(as_matrix(cv)) +
         a.leftCols(H).cwiseProduct(a.middleCols(2 * H, H));
    as_matrix(tanh_c) = cn.array().tanh().matrix();
  }
  Tensor<T> h_next({batch, hidden});
  as_matrix(h_next) = as_matrix(act).rightCols(H).cwiseProduct(as_matrix(tanh_c));

  const bool ng = t.needs_grad(pre) || t.needs_grad(c);
  // c' node: dc' (total) → d(i, f, g pre-activations) and dc.
  Var c_var = t.record(std::move(c_next), [pre, c, act, H](Tape<T>& tp, std::size_t self) {
    auto dcn = as_matrix(tp.grad_of(self));
    auto a = as_matrix(act);
    auto i = a.leftCols(H), f = a.middleCols(H, H), g = a.middleCols(2 * H, H);
    if (tp.needs_grad(pre)) {
      auto dp = as_matrix(tp.grad_buffer(pre));
      auto cprev = as_matrix(tp.value(c));
      dp.leftCols(H).array() += dcn.array() * g.array() * i.array() * (T(1) - i.array());
      dp.middleCols(H, H).array() += dcn.array() * cprev.array() * f.array() * (T(1) - f.array());
      dp.middleCols(2 * H, H).array() += dcn.array() * i.array() * (T(1) - g.array().square());
    }
    if (tp.needs_grad(c)) {
      as_matrix(tp.grad_buffer(c)).array() += dcn.array() * f.array();
    }
  }, ng);
  // h' node: dh' → d(o pre-activation) and a contribution to dc'.
  Var h_var = t.record(std::move(h_next),
                       [pre, c_var, act = std::move(act), tanh_c = std::move(tanh_c), H](
                           Tape<T>& tp, std::size_t self) {
    auto dh = as_matrix(tp.grad_of(self));
    auto o = as_matrix(act).rightCols(H);
    auto tc = as_matrix(tanh_c);
    if (tp.needs_grad(pre)) {
      as_matrix(tp.grad_buffer(pre)).rightCols(H).array() +=
          dh.array() * tc.array() * o.array() * (T(1) - o.array());
    }
    as_matrix(tp.grad_buffer(c_var)).array() +=
        dh.array() * o.array() * (T(1) - tc.array().square());
  }, ng);
  return {h_var, c_var};
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& t, Var logits, std::span<const int> labels,
                          std::span<const double> class_weights) {
  const Tensor<T>& z = t.value(logits);
  require_rank(z.shape(), 2, "softmax_cross_entropy");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_to_string(z.shape()));
  }
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(class_weights.size()) +
                         " class weights for " + std::to_string(classes) + " classes");
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                      " of sample " + std::to_string(i) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
  }
  Tensor<T> probs = softmax_rows(z);
  std::vector<T> w(batch, T(1));
  if (!class_weights.empty()) {
    for (std::size_t i = 0; i < batch; ++i) w[i] = static_cast<T>(class_weights[labels[i]]);
  }
  T wsum = 0;
  T loss = 0;
  for (std::size_t i = 0; i < batch; ++i) {
    T mx = z.at(i, 0);
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, z.at(i, c));
    T s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z.at(i, c) - mx);
    const T lse = mx + std::log(s);
    loss += w[i] * (lse - z.at(i, labels[i]));
    wsum += w[i];
  }
  if (!(wsum > T(0))) throw DataError("softmax_cross_entropy: class weights sum to zero");
  Tensor<T> out({1}, loss / wsum);
  std::vector<int> lab(labels.begin(), labels.end());
  return t.record(std::move(out),
                  [logits, probs = std::move(probs), lab = std::move(lab), w = std::move(w), wsum](
                      Tape<T>& tp, std::size_t self) {
    const T g = tp.grad_of(self)[0];
    Tensor<T>& gz = tp.grad_buffer(logits);
    const std::size_t nb = probs.dim(0), nc = probs.dim(1);
    for (std::size_t i = 0; i < nb; ++i) {
      const T s = g * w[i] / wsum;
      for (std::size_t c = 0; c < nc; ++c) {
        gz.at(i, c) += s * (probs.at(i, c) - (static_cast<int>(c) == lab[i] ? T(1) : T(0)));
      }
    }
  }, t.needs_grad(logits));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax_rows");
  Tensor<T> out(logits.shape());
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = logits.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, logits.at(r, c));
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) = std::exp(logits.at(r, c) - mx);
      s += out.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) /= s;
  }
  return out;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  require_rank(logits.shape(), 2, "argmax_rows");
  std::vector<int> out(logits.dim(0));
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.dim(1); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

#define DBR_INSTANTIATE(T)                                                        \
  template Var matmul<T>(Tape<T>&, Var, Var);                                     \
  template Var add<T>(Tape<T>&, Var, Var);                                        \
  template Var add_bias<T>(Tape<T>&, Var, Var);                                   \
  template Var relu<T>(Tape<T>&, Var);                                            \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);                    \
  template Var mean_of<T>(Tape<T>&, std::span<const Var>);                        \
  template Var time_step<T>(Tape<T>&, Var, std::size_t);                          \
  template Var swap_last_axes<T>(Tape<T>&, Var);                                  \
  template Var flatten<T>(Tape<T>&, Var);                                         \
  template Var conv1d_valid<T>(Tape<T>&, Var, Var, Var);                          \
  template Var max_over_time<T>(Tape<T>&, Var);                                   \
  template LstmState lstm_cell<T>(Tape<T>&, Var, Var, Var, Var, Var, Var);        \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>,      \
                                        std::span<const double>);                 \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                           \
  template std::vector<int> argmax_rows<T>(const Tensor<T>&);

DBR_INSTANTIATE(float)
DBR_INSTANTIATE(double)

#undef DBR_INSTANTIATE

}  // namespace dbr::core
