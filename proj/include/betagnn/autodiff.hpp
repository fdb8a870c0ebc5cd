#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "betagnn/error.hpp"
#include "betagnn/graph.hpp"
#include "betagnn/kernels.hpp"
#include "betagnn/rng.hpp"
#include "betagnn/tensor.hpp"

namespace betagnn {

/// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  /// Whether the optimizer's L2 weight decay applies.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool decay_ = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), decay(decay_) {}

  void zero_grad() { grad = Tensor(value.rows(), value.cols()); }
};

enum class OpKind {
  Parameter,
  Constant,
  MatMul,
  SpMM,
  AddBias,
  Add,
  Sub,
  Relu,
  Dropout,
  LogSoftmax,
  Scale,
  ScaleBy,
  Axpy,
  Sigmoid,
  ConvexCombine,
  MaskedNll,
  Sum,
  SymNormalizeDense,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Parameter: return "parameter";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::SpMM: return "spmm";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Relu: return "relu";
    case OpKind::Dropout: return "dropout";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleBy: return "scale_by";
    case OpKind::Axpy: return "axpy";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::ConvexCombine: return "convex_combine";
    case OpKind::MaskedNll: return "masked_nll";
    case OpKind::Sum: return "sum";
    case OpKind::SymNormalizeDense: return "sym_normalize_dense";
  }
  return "?";
}

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

/// Reverse-mode tape. Entries are appended in evaluation order, so inputs
/// always precede outputs; backward() walks the entries once in reverse.
/// Parameters and any graph passed to spmm must outlive the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Entry {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var parameter(Parameter& p) {
    Entry e{OpKind::Parameter, {}, p.value, {}, true, &p, {}};
    return push(std::move(e));
  }

  Var constant(Tensor t) {
    Entry e{OpKind::Constant, {}, std::move(t), {}, false, nullptr, {}};
    return push(std::move(e));
  }

  /// Trainable leaf not tied to a Parameter; its gradient is read back with grad().
  Var variable(Tensor t) {
    Entry e{OpKind::Constant, {}, std::move(t), {}, true, nullptr, {}};
    return push(std::move(e));
  }

  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite output in ") + op_name(kind) + " " + value.shape());
    }
    for (std::size_t in : inputs) {
      if (in >= entries_.size()) throw Error("tape input id out of range");
    }
    bool rg = false;
    for (std::size_t in : inputs) rg = rg || entries_[in].requires_grad;
    Entry e{kind, std::move(inputs), std::move(value), {}, rg, nullptr, rg ? std::move(fn) : BackwardFn{}};
    return push(std::move(e));
  }

  const Entry& entry(std::size_t id) const { return entries_.at(id); }
  const Tensor& value(std::size_t id) const { return entries_.at(id).value; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Gradient of the last backward pass w.r.t. entry `id` (zeros if unreached).
  Tensor grad(Var v) const {
    const Entry& e = entries_.at(v.id);
    if (e.grad.size() == 0) return Tensor(e.value.rows(), e.value.cols());
    return e.grad;
  }

  /// Incoming gradient of entry `id` during backward.
  const Tensor& out_grad(std::size_t id) const { return entries_[id].grad; }

  /// Adds `g` into the gradient of entry `id` if that entry needs one.
  void accumulate(std::size_t id, const Tensor& g) {
    Entry& e = entries_[id];
    if (!e.requires_grad) return;
    if (e.grad.size() == 0) {
      e.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) e.grad[i] += g[i];
  }

  bool needs_grad(std::size_t id) const { return entries_[id].requires_grad; }

  /// Propagates d(loss)/d(.) to every entry and adds parameter gradients
  /// into Parameter::grad.
  void backward(Var loss) {
    if (loss.tape != this) throw Error("backward: variable belongs to another tape");
    if (consumed_) throw Error("backward called twice on the same tape; re-run the forward pass");
    const Entry& root = entries_.at(loss.id);
    if (root.value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + root.value.shape());
    consumed_ = true;
    entries_[loss.id].grad = Tensor::scalar(1.0);
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Entry& e = entries_[k];
      if (e.grad.size() == 0) continue;
      if (e.backward) e.backward(*this, k);
      if (e.param != nullptr) {
        Tensor& pg = e.param->grad;
        if (!pg.same_shape(e.grad)) pg = Tensor(e.grad.rows(), e.grad.cols());
        for (std::size_t i = 0; i < e.grad.size(); ++i) pg[i] += e.grad[i];
      }
    }
  }

 private:
  Var push(Entry e) {
    entries_.push_back(std::move(e));
    return Var{this, entries_.size() - 1};
  }

  std::deque<Entry> entries_;  // stable references across push
  bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline Tape& same_tape(std::initializer_list<Var> vs) {
  Tape* t = vs.begin()->tape;
  for (const Var& v : vs) {
    if (v.tape != t || t == nullptr) throw Error("variables recorded on different tapes");
  }
  return *t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape() + " and " + b.shape());
  }
}

inline void require_scalar(const Tensor& a, const char* op) {
  if (a.size() != 1) throw ShapeError(std::string(op) + ": expected scalar, got " + a.shape());
}

inline Real dot(const Tensor& a, const Tensor& b) {
  Real s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  Tensor out = kernels::matmul(a.value(), b.value());
  return t.record(OpKind::MatMul, {a.id, b.id}, std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(g, t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(t.value(a), g));
  });
}

/// Sparse (normalized, symmetric) adjacency times dense input.
inline Var spmm(const NormalizedAdjacency& s, Var d) {
  Tape& t = *d.tape;
  Tensor out = kernels::spmm(s.csr(), d.value());
  return t.record(OpKind::SpMM, {d.id}, std::move(out), [&s, d = d.id](Tape& t, std::size_t self) {
    // s is symmetric, so s^T g = s g.
    t.accumulate(d, kernels::spmm(s.csr(), t.out_grad(self)));
  });
}

/// x + 1 b, with b a (1 x cols) row vector.
inline Var add_bias(Var x, Var b) {
  Tape& t = detail::same_tape({x, b});
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_bias: incompatible shapes " + xv.shape() + " and " + bv.shape());
  }
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  }
  return t.record(OpKind::AddBias, {x.id, b.id}, std::move(out), [x = x.id, b = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    t.accumulate(x, g);
    if (t.needs_grad(b)) {
      Tensor gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      }
      t.accumulate(b, gb);
    }
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return t.record(OpKind::Add, {a.id, b.id}, std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    t.accumulate(a, t.out_grad(self));
    t.accumulate(b, t.out_grad(self));
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape({a, b});
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return t.record(OpKind::Sub, {a.id, b.id}, std::move(out), [a = a.id, b = b.id](Tape& t, std::size_t self) {
    t.accumulate(a, t.out_grad(self));
    if (t.needs_grad(b)) {
      Tensor g = t.out_grad(self);
      for (Real& v : g.data()) v = -v;
      t.accumulate(b, g);
    }
  });
}

inline Var relu(Var x) {
  Tensor out = x.value();
  for (Real& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(OpKind::Relu, {x.id}, std::move(out), [x = x.id](Tape& t, std::size_t self) {
    Tensor g = t.out_grad(self);
    const Tensor& in = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(in[i] > 0.0)) g[i] = 0.0;
    }
    t.accumulate(x, g);
  });
}

/// Inverted dropout. The keep mask is a pure function of (stream, index),
/// so results do not depend on evaluation order. Identity when !training
/// or p == 0.
inline Var dropout(Var x, double p, std::uint64_t stream, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw Error("dropout rate must be in [0,1)");
  if (!training || p == 0.0) return x;
  const Real keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.value().rows(), x.value().cols());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = counter_uniform(stream, i) < p ? 0.0 : keep_scale;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape->record(OpKind::Dropout, {x.id}, std::move(out),
                        [x = x.id, mask = std::move(mask)](Tape& t, std::size_t self) {
                          Tensor g = t.out_grad(self);
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
                          t.accumulate(x, g);
                        });
}

/// Row-wise log-softmax.
inline Var log_softmax(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    Real m = row.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
    Real s = 0.0;
    for (Real v : row) s += std::exp(v - m);
    const Real lse = m + std::log(s);
    for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(r, c) - lse;
  }
  return x.tape->record(OpKind::LogSoftmax, {x.id}, std::move(out), [x = x.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    const Tensor& y = t.value(self);
    Tensor dx(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      Real gs = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) dx(r, c) = g(r, c) - std::exp(y(r, c)) * gs;
    }
    t.accumulate(x, dx);
  });
}

inline Var scale(Var x, Real c) {
  Tensor out = x.value();
  for (Real& v : out.data()) v *= c;
  return x.tape->record(OpKind::Scale, {x.id}, std::move(out), [x = x.id, c](Tape& t, std::size_t self) {
    Tensor g = t.out_grad(self);
    for (Real& v : g.data()) v *= c;
    t.accumulate(x, g);
  });
}

/// a * x for a scalar variable a.
inline Var scale_by(Var a, Var x) {
  Tape& t = detail::same_tape({a, x});
  detail::require_scalar(a.value(), "scale_by");
  const Real av = a.value().item();
  Tensor out = x.value();
  for (Real& v : out.data()) v *= av;
  return t.record(OpKind::ScaleBy, {a.id, x.id}, std::move(out), [a = a.id, x = x.id](Tape& t, std::size_t self) {
    const Tensor& g = t.out_grad(self);
    if (t.needs_grad(a)) t.accumulate(a, Tensor::scalar(detail::dot(g, t.value(x))));
    if (t.needs_grad(x)) {
      Tensor gx = g;
      const Real av = t.value(a).item();
      for (Real& v : gx.data()) v *= av;
      t.accumulate(x, gx);
    }
  });
}

/// a * x + y for a scalar variable a.
inline Var axpy(Var a, Var x, Var y) {
  Tape& t = detail::same_tape({a, x, y});
  detail::require_scalar(a.value(), "axpy");
  detail::require_same_shape(x.value(), y.value(), "axpy");
  const Real av = a.value().item();
  Tensor out = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += av * x.value()[i];
  return t.record(OpKind::Axpy, {a.id, x.id, y.id}, std::move(out),
                  [a = a.id, x = x.id, y = y.id](Tape& t, std::size_t self) {
                    const Tensor& g = t.out_grad(self);
                    if (t.needs_grad(a)) t.accumulate(a, Tensor::scalar(detail::dot(g, t.value(x))));
                    if (t.needs_grad(x)) {
                      Tensor gx = g;
                      const Real av = t.value(a).item();
                      for (Real& v : gx.data()) v *= av;
                      t.accumulate(x, gx);
                    }
                    t.accumulate(y, g);
                  });
}

inline Var sigmoid(Var a) {
  detail::require_scalar(a.value(), "sigmoid");
  const Real v = 1.0 / (1.0 + std::exp(-a.value().item()));
  return a.tape->record(OpKind::Sigmoid, {a.id}, Tensor::scalar(v), [a = a.id](Tape& t, std::size_t self) {
    const Real s = t.value(self).item();
    t.accumulate(a, Tensor::scalar(t.out_grad(self).item() * s * (1.0 - s)));
  });
}

/// beta * f + (1 - beta) * g, evaluated from the nearer endpoint
/// (f + (1 - beta)(g - f) or g + beta (f - g)) so beta = 1 returns f, beta = 0
/// returns g, and f == g returns f, all bit for bit. The beta gradient is
/// sum(G * (f - g)).
inline Var convex_combine(Var beta, Var f, Var g) {
  Tape& t = detail::same_tape({beta, f, g});
  detail::require_scalar(beta.value(), "convex_combine");
  detail::require_same_shape(f.value(), g.value(), "convex_combine");
  const Real b = beta.value().item();
  Tensor out(f.value().rows(), f.value().cols());
  const Tensor& fv = f.value();
  const Tensor& gv = g.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = b >= 0.5 ? fv[i] + (1.0 - b) * (gv[i] - fv[i]) : gv[i] + b * (fv[i] - gv[i]);
  }
  return t.record(OpKind::ConvexCombine, {beta.id, f.id, g.id}, std::move(out),
                  [beta = beta.id, f = f.id, g = g.id](Tape& t, std::size_t self) {
                    const Tensor& G = t.out_grad(self);
                    const Real b = t.value(beta).item();
                    if (t.needs_grad(beta)) {
                      const Tensor& fv = t.value(f);
                      const Tensor& gv = t.value(g);
                      Real s = 0.0;
                      for (std::size_t i = 0; i < G.size(); ++i) s += G[i] * (fv[i] - gv[i]);
                      t.accumulate(beta, Tensor::scalar(s));
                    }
                    if (t.needs_grad(f)) {
                      Tensor gf = G;
                      for (Real& v : gf.data()) v *= b;
                      t.accumulate(f, gf);
                    }
                    if (t.needs_grad(g)) {
                      Tensor gg = G;
                      for (Real& v : gg.data()) v *= (1.0 - b);
                      t.accumulate(g, gg);
                    }
                  });
}

/// Mean over masked rows of -logp[i][y_i].
inline Var masked_nll(Var logp, const LabelVector& y, const Mask& mask) {
  const Tensor& lp = logp.value();
  if (y.size() != lp.rows() || mask.size() != lp.rows()) {
    throw ShapeError("masked_nll: labels/mask length does not match " + lp.shape());
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      if (y[i] < 0 || static_cast<std::size_t>(y[i]) >= lp.cols()) {
        throw ShapeError("masked_nll: label " + std::to_string(y[i]) + " outside logits " + lp.shape());
      }
      rows.push_back(i);
    }
  }
  if (rows.empty()) throw Error("cross entropy over an empty mask");
  Real s = 0.0;
  for (std::size_t i : rows) s -= lp(i, static_cast<std::size_t>(y[i]));
  const Real inv = 1.0 / static_cast<Real>(rows.size());
  std::vector<int> labels(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) labels[k] = y[rows[k]];
  return logp.tape->record(OpKind::MaskedNll, {logp.id}, Tensor::scalar(s * inv),
                           [logp = logp.id, rows = std::move(rows), labels = std::move(labels), inv](
                               Tape& t, std::size_t self) {
                             const Real g = t.out_grad(self).item();
                             const Tensor& lp = t.value(logp);
                             Tensor d(lp.rows(), lp.cols());
                             for (std::size_t k = 0; k < rows.size(); ++k) {
                               d(rows[k], static_cast<std::size_t>(labels[k])) -= g * inv;
                             }
                             t.accumulate(logp, d);
                           });
}

/// Mean cross-entropy of row-wise softmax(logits) against y over `mask`.
inline Var cross_entropy_loss(Var logits, const LabelVector& y, const Mask& mask) {
  return masked_nll(log_softmax(logits), y, mask);
}

inline Var sum(Var x) {
  Real s = 0.0;
  for (Real v : x.value().data()) s += v;
  return x.tape->record(OpKind::Sum, {x.id}, Tensor::scalar(s), [x = x.id](Tape& t, std::size_t self) {
    const Tensor& in = t.value(x);
    t.accumulate(x, Tensor(in.rows(), in.cols(), t.out_grad(self).item()));
  });
}

/// Dense relaxation of normalize_adjacency: D^{-1/2}(A+I)D^{-1/2} with
/// D = diag(rowsum(A) + 1). Entries of A are treated as independent, so the
/// gradient of a symmetric flip (u,v) is grad(u,v) + grad(v,u).
inline Var sym_normalize_dense(Var a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw ShapeError("sym_normalize_dense: adjacency must be square, got " + av.shape());
  const std::size_t n = av.rows();
  std::vector<Real> deg(n, 1.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) deg[u] += av(u, v);
    if (!(deg[u] > 0.0)) throw NumericError("sym_normalize_dense: non-positive degree at row " + std::to_string(u));
  }
  std::vector<Real> s(n);
  for (std::size_t u = 0; u < n; ++u) s[u] = 1.0 / std::sqrt(deg[u]);
  Tensor out(n, n);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) out(u, v) = (av(u, v) + (u == v ? 1.0 : 0.0)) * s[u] * s[v];
  }
  return a.tape->record(OpKind::SymNormalizeDense, {a.id}, std::move(out),
                        [a = a.id, deg = std::move(deg), s = std::move(s)](Tape& t, std::size_t self) {
                          const Tensor& G = t.out_grad(self);
                          const Tensor& Ah = t.value(self);
                          const std::size_t n = G.rows();
                          std::vector<Real> c(n, 0.0);
                          for (std::size_t u = 0; u < n; ++u) {
                            for (std::size_t v = 0; v < n; ++v) {
                              c[u] += G(u, v) * Ah(u, v);
                              c[v] += G(u, v) * Ah(u, v);
                            }
                          }
                          for (std::size_t u = 0; u < n; ++u) c[u] *= -0.5 / deg[u];
                          Tensor dA(n, n);
                          for (std::size_t u = 0; u < n; ++u) {
                            for (std::size_t v = 0; v < n; ++v) dA(u, v) = G(u, v) * s[u] * s[v] + c[u];
                          }
                          t.accumulate(a, dA);
                        });
}

}  // namespace betagnn
