#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fff/errors.hpp"
#include "fff/linalg.hpp"
#include "fff/rng.hpp"

namespace fff {

// MLPs with optional global skip connection and conditioning by
// concatenation. Everything here is per-sample; batching is a caller loop.
//
// The differentiation surface is wider than usual: besides forward/JVP/VJP we
// support reverse-mode differentiation of scalars that depend on both the
// output y = net(x) and a directional derivative t = J w ("dual_backward").
// That requires second derivatives of the activation, so only twice
// continuously differentiable activations are admitted.

enum class Activation { tanh, silu };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double act_value(Activation a, double x) {
  switch (a) {
    case Activation::tanh:
      return std::tanh(x);
    case Activation::silu:
      return x * sigmoid(x);
  }
  return 0.0;
}

inline double act_d1(Activation a, double x) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::silu: {
      const double s = sigmoid(x);
      return s * (1.0 + x * (1.0 - s));
    }
  }
  return 0.0;
}

inline double act_d2(Activation a, double x) {
  switch (a) {
    case Activation::tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::silu: {
      const double s = sigmoid(x);
      return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
    }
  }
  return 0.0;
}

inline Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + name + "' (expected tanh or silu)");
}

inline std::string activation_to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "silu";
}

// ---------------------------------------------------------------------------

struct NetworkSpec {
  int input_dim = 0;
  int context_dim = 0;
  std::vector<int> hidden_widths;
  Activation activation = Activation::tanh;
  bool global_skip = true;
  bool context_every_layer = false;

  bool operator==(const NetworkSpec&) const = default;
};

struct LayerShape {
  int in = 0;
  int out = 0;
  bool operator==(const LayerShape&) const = default;
};

// Linear layers 0..L-1; an activation follows every layer except the last.
inline std::vector<LayerShape> layer_shapes(const NetworkSpec& s) {
  if (s.input_dim < 1) throw ConfigError("NetworkSpec: input_dim must be >= 1");
  if (s.context_dim < 0) throw ConfigError("NetworkSpec: context_dim must be >= 0");
  for (int w : s.hidden_widths)
    if (w < 1) throw ConfigError("NetworkSpec: hidden widths must be >= 1");
  std::vector<LayerShape> shapes;
  const int extra = s.context_dim;
  const int per_layer_extra = s.context_every_layer ? s.context_dim : 0;
  int in = s.input_dim + extra;
  for (int w : s.hidden_widths) {
    shapes.push_back({in, w});
    in = w + per_layer_extra;
  }
  shapes.push_back({in, s.input_dim});
  return shapes;
}

// Flat parameter block with per-layer weight/bias views. Layout per layer:
// W (out x in, row-major) followed by b (out). GradStore shares the layout so
// optimizer updates are a single flat loop.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const NetworkSpec& spec) : shapes_(layer_shapes(spec)) {
    offsets_.reserve(shapes_.size());
    std::size_t total = 0;
    for (const auto& sh : shapes_) {
      offsets_.push_back(total);
      total += static_cast<std::size_t>(sh.in) * sh.out + sh.out;
    }
    data_.assign(total, 0.0);
  }

  std::size_t size() const { return data_.size(); }
  std::size_t layer_count() const { return shapes_.size(); }
  const std::vector<LayerShape>& shapes() const { return shapes_; }

  double* weight(std::size_t l) { return data_.data() + offsets_[l]; }
  const double* weight(std::size_t l) const { return data_.data() + offsets_[l]; }
  double* bias(std::size_t l) {
    return data_.data() + offsets_[l] + static_cast<std::size_t>(shapes_[l].in) * shapes_[l].out;
  }
  const double* bias(std::size_t l) const {
    return data_.data() + offsets_[l] + static_cast<std::size_t>(shapes_[l].in) * shapes_[l].out;
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

 private:
  std::vector<LayerShape> shapes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> data_;
};

using GradStore = ParamStore;

struct Network {
  NetworkSpec spec;
  ParamStore params;
};

// Fan-in scaled uniform init; the last layer is multiplied by
// final_layer_scale, default 0 so a skip network starts at the identity map.
inline ParamStore init_params(const NetworkSpec& spec, std::uint64_t seed,
                              double final_layer_scale = 0.0) {
  ParamStore p(spec);
  RngStream root(seed);
  const auto& shapes = p.shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    RngStream rng = root.split(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shapes[l].in));
    const double scale = (l + 1 == shapes.size()) ? final_layer_scale : 1.0;
    double* w = p.weight(l);
    const std::size_t nw = static_cast<std::size_t>(shapes[l].in) * shapes[l].out;
    for (std::size_t i = 0; i < nw; ++i) w[i] = scale * bound * (2.0 * rng.uniform() - 1.0);
    double* b = p.bias(l);
    for (int i = 0; i < shapes[l].out; ++i) b[i] = scale * bound * (2.0 * rng.uniform() - 1.0);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Internal kernels.

namespace detail {

inline void check_io(const NetworkSpec& spec, const Vector& x, const Vector& ctx) {
  if (static_cast<int>(x.size()) != spec.input_dim)
    throw DimensionMismatch("network input has size " + std::to_string(x.size()) + ", expected " +
                            std::to_string(spec.input_dim));
  if (static_cast<int>(ctx.size()) != spec.context_dim)
    throw DimensionMismatch("network context has size " + std::to_string(ctx.size()) +
                            ", expected " + std::to_string(spec.context_dim));
}

inline Vector concat(const Vector& a, const Vector& b) {
  Vector out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// p = W a + b
inline Vector linear(const double* w, const double* b, const Vector& a, int out) {
  const int in = static_cast<int>(a.size());
  Vector p(out);
  for (int i = 0; i < out; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * in;
    double s = b ? b[i] : 0.0;
    for (int j = 0; j < in; ++j) s += row[j] * a[j];
    p[i] = s;
  }
  return p;
}

// u_a = W^T u_p
inline Vector linear_t(const double* w, const Vector& u_p, int in) {
  const int out = static_cast<int>(u_p.size());
  Vector u_a(in, 0.0);
  for (int i = 0; i < out; ++i) {
    const double* row = w + static_cast<std::size_t>(i) * in;
    const double ui = u_p[i];
    for (int j = 0; j < in; ++j) u_a[j] += row[j] * ui;
  }
  return u_a;
}

// grad_W += u outer a, grad_b += u
inline void accumulate_linear_grads(double* gw, double* gb, const Vector& u, const Vector& a) {
  const int out = static_cast<int>(u.size());
  const int in = static_cast<int>(a.size());
  for (int i = 0; i < out; ++i) {
    double* row = gw + static_cast<std::size_t>(i) * in;
    const double ui = u[i];
    for (int j = 0; j < in; ++j) row[j] += ui * a[j];
    if (gb) gb[i] += ui;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward / JVP / VJP.

inline Vector forward(const NetworkSpec& spec, const ParamStore& params, const Vector& x,
                      const Vector& ctx = {}) {
  detail::check_io(spec, x, ctx);
  const auto& shapes = params.shapes();
  const std::size_t last = shapes.size() - 1;
  Vector h = spec.context_dim > 0 ? detail::concat(x, ctx) : x;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    Vector p = detail::linear(params.weight(l), params.bias(l), h, shapes[l].out);
    if (l < last) {
      for (auto& v : p) v = act_value(spec.activation, v);
      h = (spec.context_every_layer && spec.context_dim > 0) ? detail::concat(p, ctx) : std::move(p);
    } else {
      h = std::move(p);
    }
  }
  if (spec.global_skip)
    for (int i = 0; i < spec.input_dim; ++i) h[i] += x[i];
  return h;
}

struct JvpResult {
  Vector y;  // net(x)
  Vector t;  // J(x) w
};

// Tape from a dual (value + tangent) forward pass. Holds exactly what
// dual_backward needs: per linear layer its input and input tangent, per
// activation its pre-activation and pre-activation tangent.
struct DualTape {
  std::vector<LayerShape> shapes;
  Activation activation = Activation::tanh;
  bool global_skip = false;
  int input_dim = 0;
  int context_dim = 0;
  bool context_every_layer = false;
  std::vector<Vector> input;          // per linear layer, context included
  std::vector<Vector> input_tangent;  // same shape; context slots are zero
  std::vector<Vector> pre;            // per activation (layers 0..L-2)
  std::vector<Vector> pre_tangent;
  Vector y;
  Vector t;
};

// Value and tangent forward with tape recording. The context carries no
// tangent: only x-directions are differentiated.
inline JvpResult jvp_record(const NetworkSpec& spec, const ParamStore& params, const Vector& x,
                            const Vector& w, DualTape* tape, const Vector& ctx = {}) {
  detail::check_io(spec, x, ctx);
  if (w.size() != x.size()) throw DimensionMismatch("jvp: tangent size mismatch");
  const auto& shapes = params.shapes();
  const std::size_t last = shapes.size() - 1;
  if (tape) {
    *tape = DualTape{};
    tape->shapes = shapes;
    tape->activation = spec.activation;
    tape->global_skip = spec.global_skip;
    tape->input_dim = spec.input_dim;
    tape->context_dim = spec.context_dim;
    tape->context_every_layer = spec.context_every_layer;
  }
  const Vector zero_ctx(spec.context_dim, 0.0);
  Vector h = spec.context_dim > 0 ? detail::concat(x, ctx) : x;
  Vector th = spec.context_dim > 0 ? detail::concat(w, zero_ctx) : w;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    if (tape) {
      tape->input.push_back(h);
      tape->input_tangent.push_back(th);
    }
    Vector p = detail::linear(params.weight(l), params.bias(l), h, shapes[l].out);
    Vector tp = detail::linear(params.weight(l), nullptr, th, shapes[l].out);
    if (l < last) {
      if (tape) {
        tape->pre.push_back(p);
        tape->pre_tangent.push_back(tp);
      }
      Vector hp(p.size()), thp(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) {
        hp[i] = act_value(spec.activation, p[i]);
        thp[i] = act_d1(spec.activation, p[i]) * tp[i];
      }
      if (spec.context_every_layer && spec.context_dim > 0) {
        h = detail::concat(hp, ctx);
        th = detail::concat(thp, zero_ctx);
      } else {
        h = std::move(hp);
        th = std::move(thp);
      }
    } else {
      h = std::move(p);
      th = std::move(tp);
    }
  }
  if (spec.global_skip)
    for (int i = 0; i < spec.input_dim; ++i) {
      h[i] += x[i];
      th[i] += w[i];
    }
  if (tape) {
    tape->y = h;
    tape->t = th;
  }
  return {std::move(h), std::move(th)};
}

inline JvpResult jvp(const NetworkSpec& spec, const ParamStore& params, const Vector& x,
                     const Vector& w, const Vector& ctx = {}) {
  return jvp_record(spec, params, x, w, nullptr, ctx);
}

struct VjpResult {
  Vector y;    // net(x)
  Vector u_x;  // J(x)^T u
};

// Reverse pass for u^T y. Parameter gradients are accumulated into *grads
// when given (same layout as params).
inline VjpResult vjp(const NetworkSpec& spec, const ParamStore& params, const Vector& x,
                     const Vector& u, const Vector& ctx = {}, GradStore* grads = nullptr) {
  detail::check_io(spec, x, ctx);
  if (static_cast<int>(u.size()) != spec.input_dim)
    throw DimensionMismatch("vjp: cotangent size mismatch");
  const auto& shapes = params.shapes();
  const std::size_t last = shapes.size() - 1;

  std::vector<Vector> inputs(shapes.size());
  std::vector<Vector> pres(last);  // activations only
  Vector h = spec.context_dim > 0 ? detail::concat(x, ctx) : x;
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    inputs[l] = h;
    Vector p = detail::linear(params.weight(l), params.bias(l), h, shapes[l].out);
    if (l < last) {
      pres[l] = p;
      for (auto& v : p) v = act_value(spec.activation, v);
      h = (spec.context_every_layer && spec.context_dim > 0) ? detail::concat(p, ctx) : std::move(p);
    } else {
      h = std::move(p);
    }
  }
  Vector y = h;
  if (spec.global_skip)
    for (int i = 0; i < spec.input_dim; ++i) y[i] += x[i];

  Vector u_h = u;
  for (std::size_t l = shapes.size(); l-- > 0;) {
    Vector u_p;
    if (l < last) {
      u_p.resize(u_h.size());
      for (std::size_t i = 0; i < u_h.size(); ++i)
        u_p[i] = act_d1(spec.activation, pres[l][i]) * u_h[i];
    } else {
      u_p = std::move(u_h);
    }
    if (grads) detail::accumulate_linear_grads(grads->weight(l), grads->bias(l), u_p, inputs[l]);
    Vector u_in = detail::linear_t(params.weight(l), u_p, shapes[l].in);
    // Drop cotangent mass on context slots; they are constants.
    const int keep = (l == 0) ? spec.input_dim
                              : (spec.context_every_layer ? shapes[l].in - spec.context_dim
                                                          : shapes[l].in);
    u_in.resize(keep);
    u_h = std::move(u_in);
  }
  if (spec.global_skip)
    for (int i = 0; i < spec.input_dim; ++i) u_h[i] += u[i];
  return {std::move(y), std::move(u_h)};
}

struct DualCotangents {
  Vector u_x;  // gradient of the scalar with respect to x
  Vector u_w;  // gradient of the scalar with respect to the tangent seed w
};

// Reverse pass for a scalar l(y, t) of a recorded dual forward, where
// y = net(x) and t = J(x) w. Per layer:
//   linear:     grad_W += u_p a^T + u_tp ta^T,  grad_b += u_p,
//               u_a = W^T u_p,  u_ta = W^T u_tp
//   activation: u_p = act'(p) u_h + act''(p) tp u_th,  u_tp = act'(p) u_th
// The skip connection routes both cotangents additively. This is how
// d/dtheta of trace surrogates is computed without a second-order tape.
inline DualCotangents dual_backward(const NetworkSpec& spec, const ParamStore& params,
                                    const DualTape& tape, const Vector& u_y, const Vector& u_t,
                                    GradStore* grads) {
  const auto& shapes = params.shapes();
  if (tape.shapes != shapes || tape.activation != spec.activation ||
      tape.global_skip != spec.global_skip || tape.input_dim != spec.input_dim ||
      tape.context_dim != spec.context_dim ||
      tape.context_every_layer != spec.context_every_layer)
    throw TapeMismatch("dual_backward: tape was recorded for a different network");
  if (static_cast<int>(u_y.size()) != spec.input_dim ||
      static_cast<int>(u_t.size()) != spec.input_dim)
    throw DimensionMismatch("dual_backward: cotangent size mismatch");
  const std::size_t last = shapes.size() - 1;

  Vector u_h = u_y;
  Vector u_th = u_t;
  for (std::size_t l = shapes.size(); l-- > 0;) {
    Vector u_p, u_tp;
    if (l < last) {
      const Vector& p = tape.pre[l];
      const Vector& tp = tape.pre_tangent[l];
      u_p.resize(u_h.size());
      u_tp.resize(u_h.size());
      for (std::size_t i = 0; i < u_h.size(); ++i) {
        const double d1 = act_d1(spec.activation, p[i]);
        const double d2 = act_d2(spec.activation, p[i]);
        u_p[i] = d1 * u_h[i] + d2 * tp[i] * u_th[i];
        u_tp[i] = d1 * u_th[i];
      }
    } else {
      u_p = std::move(u_h);
      u_tp = std::move(u_th);
    }
    if (grads) {
      detail::accumulate_linear_grads(grads->weight(l), grads->bias(l), u_p, tape.input[l]);
      detail::accumulate_linear_grads(grads->weight(l), nullptr, u_tp, tape.input_tangent[l]);
    }
    Vector u_in = detail::linear_t(params.weight(l), u_p, shapes[l].in);
    Vector u_tin = detail::linear_t(params.weight(l), u_tp, shapes[l].in);
    const int keep = (l == 0) ? spec.input_dim
                              : (spec.context_every_layer ? shapes[l].in - spec.context_dim
                                                          : shapes[l].in);
    u_in.resize(keep);
    u_tin.resize(keep);
    u_h = std::move(u_in);
    u_th = std::move(u_tin);
  }
  if (spec.global_skip)
    for (int i = 0; i < spec.input_dim; ++i) {
      u_h[i] += u_y[i];
      u_th[i] += u_t[i];
    }
  return {std::move(u_h), std::move(u_th)};
}

// Full D x D Jacobian via D basis-tangent JVPs. O(D) forward passes; meant
// for exact likelihood evaluation and verification, not training.
inline Matrix full_jacobian(const NetworkSpec& spec, const ParamStore& params, const Vector& x,
                            const Vector& ctx = {}) {
  const int d = spec.input_dim;
  Matrix jac(d, d);
  Vector e(d, 0.0);
  for (int j = 0; j < d; ++j) {
    e[j] = 1.0;
    const JvpResult r = jvp(spec, params, x, e, ctx);
    for (int i = 0; i < d; ++i) jac(i, j) = r.t[i];
    e[j] = 0.0;
  }
  return jac;
}

}  // namespace fff
