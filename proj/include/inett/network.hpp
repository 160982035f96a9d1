#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "inett/rng.hpp"
#include "inett/tape.hpp"

namespace inett {

enum class LayerKind {
  Conv,       // kernel (+ optional bias), pad, stride
  BatchNorm,  // gamma/beta; population stats once finalized
  ReLU,
  MaxPool2,
  Upsample2,  // nearest-neighbor 2x, a frozen binary operator
  Concat,     // channel concat C(z^{i_k}, z^k); source indexes earlier outputs
  Dense,      // weight (+ optional bias), optional skip term A^{k,j_k} z^{j_k}
  Identity,
};

/// One layer of the network graph. Parameters are referenced by name into a
/// ParamSet. Output index k+1 corresponds to z^{k+1}; index 0 is the input x.
struct LayerSpec {
  LayerKind kind = LayerKind::Identity;

  std::string kernel;   // Conv
  std::string weight;   // Dense
  std::string bias;     // Conv / Dense, optional
  PadSpec pad;
  std::size_t stride = 1;

  std::string gamma, beta;  // BatchNorm
  double eps = 1e-5;

  long concat_source = -1;  // Concat: index into outputs (0 = input)
  long skip_source = -1;    // Dense skip: index into outputs
  std::string skip_weight;  // matrix A^{k,j_k}
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> input_shape;

  std::size_t depth() const { return layers.size(); }
};

struct ParamSet {
  std::map<std::string, Tensor> values;
  std::set<std::string> frozen;

  bool is_frozen(const std::string& name) const { return frozen.count(name) > 0; }
  const Tensor& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw Error("unknown parameter: " + name);
    return it->second;
  }
};

/// Parameter ids carrying the nonnegativity constraint (C2 plus plan extras).
struct ConstraintPlan {
  std::vector<std::string> nonneg;

  bool empty() const { return nonneg.empty(); }
};

enum class Mode { Train, Infer };

inline std::string bn_pop_mean_name(const LayerSpec& l) { return l.gamma + ".pop_mean"; }
inline std::string bn_pop_var_name(const LayerSpec& l) { return l.gamma + ".pop_var"; }

inline bool bn_finalized(const NetworkSpec& net, const ParamSet& params) {
  for (const auto& l : net.layers)
    if (l.kind == LayerKind::BatchNorm &&
        (params.values.count(bn_pop_mean_name(l)) == 0 ||
         params.values.count(bn_pop_var_name(l)) == 0))
      return false;
  return true;
}

/// Tape leaves for every parameter, created once per forward pass.
struct ParamLeaves {
  std::map<std::string, ValueId> ids;

  ValueId at(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw Error("unknown parameter leaf: " + name);
    return it->second;
  }
};

inline ParamLeaves make_param_leaves(GradTape& tape, const ParamSet& params,
                                     bool track_frozen = false) {
  ParamLeaves leaves;
  for (const auto& [name, value] : params.values)
    leaves.ids[name] = tape.leaf(value, track_frozen || !params.is_frozen(name));
  return leaves;
}

/// Forward pass for a whole mini-batch in lockstep, so that train-mode BN can
/// couple the samples through the batch statistics. In infer mode the samples
/// are independent.
inline std::vector<ValueId> forward_batch(const NetworkSpec& net, const ParamSet& params,
                                          GradTape& tape, const ParamLeaves& leaves,
                                          const std::vector<ValueId>& inputs, Mode mode) {
  if (mode == Mode::Infer && !bn_finalized(net, params))
    throw Error("forward: BN statistics not finalized; infer mode unavailable");
  const std::size_t B = inputs.size();
  // outputs[k][s]: z^{k+1} of sample s; outputs[0] = inputs
  std::vector<std::vector<ValueId>> outputs;
  outputs.push_back(inputs);
  for (const LayerSpec& l : net.layers) {
    const std::vector<ValueId>& cur = outputs.back();
    std::vector<ValueId> next(B);
    switch (l.kind) {
      case LayerKind::Conv:
        for (std::size_t s = 0; s < B; ++s) {
          ValueId v = tape.conv2d(cur[s], leaves.at(l.kernel), l.pad, l.stride);
          if (!l.bias.empty()) v = tape.add_bias(v, leaves.at(l.bias));
          next[s] = v;
        }
        break;
      case LayerKind::Dense:
        for (std::size_t s = 0; s < B; ++s) {
          ValueId v = tape.matvec(leaves.at(l.weight), cur[s]);
          if (l.skip_source >= 0) {
            ValueId skip = tape.matvec(
                leaves.at(l.skip_weight),
                outputs.at(static_cast<std::size_t>(l.skip_source))[s]);
            v = tape.add(v, skip);
          }
          if (!l.bias.empty()) v = tape.add_bias(v, leaves.at(l.bias));
          next[s] = v;
        }
        break;
      case LayerKind::BatchNorm:
        if (mode == Mode::Train) {
          next = tape.batchnorm_train(cur, leaves.at(l.gamma), leaves.at(l.beta), l.eps);
        } else {
          for (std::size_t s = 0; s < B; ++s)
            next[s] = tape.batchnorm_infer(cur[s], leaves.at(l.gamma), leaves.at(l.beta),
                                           leaves.at(bn_pop_mean_name(l)),
                                           leaves.at(bn_pop_var_name(l)), l.eps);
        }
        break;
      case LayerKind::ReLU:
        for (std::size_t s = 0; s < B; ++s) next[s] = tape.relu(cur[s]);
        break;
      case LayerKind::MaxPool2:
        for (std::size_t s = 0; s < B; ++s) next[s] = tape.maxpool2(cur[s]);
        break;
      case LayerKind::Upsample2:
        for (std::size_t s = 0; s < B; ++s) next[s] = tape.upsample_nn(cur[s]);
        break;
      case LayerKind::Concat: {
        if (l.concat_source < 0) throw Error("concat layer without source");
        const auto& src = outputs.at(static_cast<std::size_t>(l.concat_source));
        for (std::size_t s = 0; s < B; ++s) {
          const Tensor& a = tape.value(src[s]);
          if (a.ndim() == 3)
            next[s] = tape.concat_channels(src[s], cur[s]);
          else
            next[s] = tape.concat_flat(src[s], cur[s]);
        }
        break;
      }
      case LayerKind::Identity:
        next = cur;
        break;
    }
    outputs.push_back(std::move(next));
  }
  return outputs.back();
}

/// Single-sample forward returning a plain tensor.
inline Tensor forward(const NetworkSpec& net, const ParamSet& params, const Tensor& x,
                      Mode mode = Mode::Infer, GradTape* tape = nullptr,
                      ValueId* x_id = nullptr, ValueId* out_id = nullptr) {
  if (x.shape() != net.input_shape)
    throw DimensionError("forward: input shape " + x.shape_str() + " does not match net");
  GradTape local;
  GradTape& t = tape ? *tape : local;
  ParamLeaves leaves = make_param_leaves(t, params);
  ValueId xid = t.leaf(x, true);
  if (x_id) *x_id = xid;
  auto outs = forward_batch(net, params, t, leaves, {xid}, mode);
  if (out_id) *out_id = outs[0];
  return t.value(outs[0]);
}

/// Component-wise max with 0 on every plan-constrained parameter.
inline ParamSet project_convex(ParamSet params, const ConstraintPlan& plan) {
  for (const std::string& name : plan.nonneg) {
    auto it = params.values.find(name);
    if (it == params.values.end())
      throw Error("constraint plan references unknown parameter: " + name);
    Tensor& t = it->second;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::max(0.0, t[i]);
  }
  return params;
}

struct ConvexityWitness {
  Tensor x, omega;
  double t = 0.0;
  double violation = 0.0;  // positive = convexity violated by this amount
};

struct ConvexityReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  ConvexityWitness worst;

  bool passed() const { return violations == 0; }
};

/// Midpoint sampler for convexity checks: N(0,1) entries scaled into
/// [0, scale]; 10% of draws at 10x scale for outliers.
class MidpointSampler {
 public:
  MidpointSampler(std::vector<std::size_t> shape, double scale, std::uint64_t seed)
      : shape_(std::move(shape)), scale_(scale), rng_(seed) {}

  Tensor draw_point() {
    const double s = rng_.uniform() < 0.1 ? 10.0 * scale_ : scale_;
    Tensor t(shape_);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng_.normal() * s;
    return t;
  }

  double draw_t() { return rng_.uniform(); }

 private:
  std::vector<std::size_t> shape_;
  double scale_;
  Rng rng_;
};

/// Randomized falsifier for component-wise convexity of the inference-mode
/// network: checks the midpoint inequality on random (x, omega, t) triples.
inline ConvexityReport check_componentwise_convex(const NetworkSpec& net,
                                                  const ParamSet& params,
                                                  std::size_t trials, double tol,
                                                  MidpointSampler& sampler) {
  ConvexityReport report;
  report.trials = trials;
  for (std::size_t k = 0; k < trials; ++k) {
    Tensor x = sampler.draw_point();
    Tensor omega = sampler.draw_point();
    const double t = sampler.draw_t();
    Tensor mid = x * t + omega * (1.0 - t);
    Tensor fx = forward(net, params, x);
    Tensor fo = forward(net, params, omega);
    Tensor fm = forward(net, params, mid);
    double worst = -1e300;
    for (std::size_t i = 0; i < fm.size(); ++i)
      worst = std::max(worst, fm[i] - (t * fx[i] + (1.0 - t) * fo[i]));
    if (worst > tol) {
      ++report.violations;
      if (worst > report.worst.violation) report.worst = {x, omega, t, worst};
    }
  }
  return report;
}

/// Uniformly convex regularizer R(x) = a ||x||_p^p + ||Phi^c(x)||_q^q with a
/// subgradient through reverse-mode differentiation. Structurally this is the
/// depth-(L+1) network with a frozen terminal combination layer.
class Regularizer {
 public:
  Regularizer() = default;
  Regularizer(NetworkSpec net, ParamSet params, double a, double p, double q)
      : net_(std::move(net)), params_(std::move(params)), a_(a), p_(p), q_(q) {
    if (p_ < 2.0) throw Error("regularizer: p must be >= 2");
    if (q_ < 1.0) throw Error("regularizer: q must be >= 1");
    if (a_ <= 0.0) throw Error("regularizer: a must be positive");
  }

  double operator()(const Tensor& x) const { return evaluate(x); }

  double evaluate(const Tensor& x) const {
    double fx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) fx += std::pow(std::abs(x[i]), p_);
    Tensor z = forward(net_, params_, x);
    double gz = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) gz += std::pow(std::abs(z[i]), q_);
    return a_ * fx + gz;
  }

  /// One element of the subdifferential (exact gradient off the ReLU kinks,
  /// the 0-subgradient convention on them).
  Tensor subgrad(const Tensor& x) const {
    GradTape tape;
    ValueId xid, outid;
    forward(net_, params_, x, Mode::Infer, &tape, &xid, &outid);
    ValueId r = tape.add(tape.scale(tape.sum_pow(xid, p_), a_), tape.sum_pow(outid, q_));
    return tape.grad_of(r, xid);
  }

  double modulus_constant() const { return a_; }
  double p() const { return p_; }
  double q() const { return q_; }
  const NetworkSpec& net() const { return net_; }
  const ParamSet& params() const { return params_; }

 private:
  NetworkSpec net_;
  ParamSet params_;
  double a_ = 0.0, p_ = 2.0, q_ = 2.0;
};

inline Regularizer make_uniformly_convex(const NetworkSpec& netC, const ParamSet& params,
                                         double a, double p = 2.0, double q = 2.0) {
  if (!bn_finalized(netC, params))
    throw Error("make_uniformly_convex: BN statistics must be finalized first");
  return Regularizer(netC, params, a, p, q);
}

/// Modulus check for the p=2 build: R(tx+(1-t)x') <= tR(x)+(1-t)R(x')
/// - a t(1-t) ||x-x'||_2^2 + tol.
inline ConvexityReport check_uniformly_convex(const Regularizer& R, double a,
                                              std::size_t trials, double tol,
                                              MidpointSampler& sampler) {
  if (R.p() != 2.0) throw Error("check_uniformly_convex: requires the p=2 build");
  ConvexityReport report;
  report.trials = trials;
  for (std::size_t k = 0; k < trials; ++k) {
    Tensor x = sampler.draw_point();
    Tensor xhat = sampler.draw_point();
    const double t = sampler.draw_t();
    Tensor mid = x * t + xhat * (1.0 - t);
    const double lhs = R.evaluate(mid);
    const double rhs = t * R.evaluate(x) + (1.0 - t) * R.evaluate(xhat) -
                       a * t * (1.0 - t) * norm2_sq(x - xhat);
    const double v = lhs - rhs;
    if (v > tol) {
      ++report.violations;
      if (v > report.worst.violation) report.worst = {x, xhat, t, v};
    }
  }
  return report;
}

// ---- NCKPT checkpoint format ----
// magic "NCKP", u8 version=1, u32 count, then per parameter:
// u16 name length, UTF-8 name, u8 frozen flag, embedded NIMG tensor.

inline void write_nckpt(std::ostream& os, const ParamSet& params) {
  os.write("NCKP", 4);
  os.put(static_cast<char>(1));
  detail::put_u32le(os, static_cast<std::uint32_t>(params.values.size()));
  for (const auto& [name, value] : params.values) {
    const std::uint16_t n = static_cast<std::uint16_t>(name.size());
    os.put(static_cast<char>(n & 0xff));
    os.put(static_cast<char>((n >> 8) & 0xff));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    os.put(params.is_frozen(name) ? '\1' : '\0');
    write_nimg(os, value);
  }
}

inline ParamSet read_nckpt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NCKP", 4) != 0)
    throw ParseError("bad NCKPT magic at byte offset 0 (expected 'NCKP')");
  int version = is.get();
  if (version != 1) throw ParseError("unsupported NCKPT version");
  std::uint32_t count = detail::get_u32le(is);
  ParamSet params;
  for (std::uint32_t k = 0; k < count; ++k) {
    int lo = is.get(), hi = is.get();
    if (lo < 0 || hi < 0) throw ParseError("truncated NCKPT header");
    const std::size_t n = static_cast<std::size_t>(lo) | (static_cast<std::size_t>(hi) << 8);
    std::string name(n, '\0');
    is.read(name.data(), static_cast<std::streamsize>(n));
    const int frozen = is.get();
    params.values.emplace(name, read_nimg(is));
    if (frozen) params.frozen.insert(name);
  }
  return params;
}

inline void save_nckpt(const std::string& path, const ParamSet& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_nckpt(os, params);
}

inline ParamSet load_nckpt(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);
  return read_nckpt(is);
}

}  // namespace inett
