#pragma once

#include <string>
#include <vector>

#include "inett/network.hpp"

namespace inett {

struct UnetConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t levels = 2;         // resolution levels d
  std::size_t base_channels = 8;  // c
  std::size_t channel_mult = 2;
  double bn_eps = 1e-5;
  // terminal combination constants
  double a = 1e-3;
  double p = 2.0;
  double q = 2.0;

  void validate() const {
    if (base_channels < 1 || levels < 1)
      throw Error("unet config: need base_channels >= 1 and levels >= 1");
    const std::size_t div = std::size_t(1) << levels;
    if (height % div != 0 || width % div != 0)
      throw Error("unet config: image dims must be divisible by 2^levels");
  }
};

struct UnetBuildReport {
  std::size_t depth = 0;  // layer count L
  std::size_t n_right_arrows = 0;
  std::size_t n_down_arrows = 0;
  std::size_t n_up_arrows = 0;
  std::size_t n_params_free = 0;
  std::size_t n_params_frozen = 0;
};

namespace detail_unet {

class Builder {
 public:
  Builder(const UnetConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  /// Conv(3x3, pad 1) + BN + ReLU; spatial size preserved.
  void right_arrow(std::size_t in_ch, std::size_t out_ch) {
    conv_bn_relu(in_ch, out_ch, 3, PadSpec::uniform(1));
    ++report_.n_right_arrows;
  }

  /// 2x2 max-pool; W = I frozen, no trainable parameters.
  void down_arrow() {
    net_.layers.push_back({.kind = LayerKind::MaxPool2});
    ++report_.n_down_arrows;
  }

  /// Nearest-neighbor 2x enlargement (frozen binary operator, entries in
  /// {0,1}) then conv(2x2, pad (0,1,0,1)) + BN + ReLU restoring exact size.
  void up_arrow(std::size_t in_ch, std::size_t out_ch) {
    net_.layers.push_back({.kind = LayerKind::Upsample2});
    conv_bn_relu(in_ch, out_ch, 2, PadSpec{0, 1, 0, 1});
    ++report_.n_up_arrows;
  }

  /// 1x1 conv to one channel with a single scalar bias, identity activation.
  /// The scalar bias joins the constraint plan (nonnegative output).
  void last_arrow(std::size_t in_ch) {
    ++conv_idx_;
    const std::string K = "K" + std::to_string(conv_idx_);
    const std::string b = "b" + std::to_string(conv_idx_);
    params_.values.emplace(K, init_kernel(1, 1, in_ch, 1));
    params_.values.emplace(b, Tensor({1}));
    if (conv_idx_ >= 2) plan_.nonneg.push_back(K);
    plan_.nonneg.push_back(b);  // b^L
    LayerSpec l;
    l.kind = LayerKind::Conv;
    l.kernel = K;
    l.bias = b;
    l.pad = PadSpec{};
    net_.layers.push_back(l);
  }

  void concat_with(std::size_t output_index) {
    LayerSpec l;
    l.kind = LayerKind::Concat;
    l.concat_source = static_cast<long>(output_index);
    net_.layers.push_back(l);
  }

  std::size_t current_output_index() const { return net_.layers.size(); }

  NetworkSpec net_;
  ParamSet params_;
  ConstraintPlan plan_;
  UnetBuildReport report_;

 private:
  void conv_bn_relu(std::size_t in_ch, std::size_t out_ch, std::size_t f, PadSpec pad) {
    ++conv_idx_;
    const std::string idx = std::to_string(conv_idx_);
    const std::string K = "K" + idx, b = "b" + idx;
    const std::string g = "gamma" + idx, be = "beta" + idx;
    params_.values.emplace(K, init_kernel(f, f, in_ch, out_ch));
    params_.values.emplace(b, Tensor({out_ch}));
    params_.values.emplace(g, Tensor({out_ch}, 1.0));
    params_.values.emplace(be, Tensor({out_ch}));
    if (conv_idx_ >= 2) plan_.nonneg.push_back(K);  // K^1 exempt
    plan_.nonneg.push_back(g);
    LayerSpec conv;
    conv.kind = LayerKind::Conv;
    conv.kernel = K;
    conv.bias = b;
    conv.pad = pad;
    net_.layers.push_back(conv);
    LayerSpec bn;
    bn.kind = LayerKind::BatchNorm;
    bn.gamma = g;
    bn.beta = be;
    bn.eps = cfg_.bn_eps;
    net_.layers.push_back(bn);
    net_.layers.push_back({.kind = LayerKind::ReLU});
  }

  Tensor init_kernel(std::size_t f1, std::size_t f2, std::size_t cin, std::size_t cout) {
    Tensor k({f1, f2, cin, cout});
    const double bound = std::sqrt(1.0 / static_cast<double>(f1 * f2 * cin));
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = rng_.uniform(-bound, bound);
    return k;
  }

  const UnetConfig& cfg_;
  Rng rng_;
  std::size_t conv_idx_ = 0;
};

}  // namespace detail_unet

struct UnetBuild {
  NetworkSpec net;
  ParamSet params;
  ConstraintPlan plan;
  UnetBuildReport report;
};

/// Modified U-net: contracting path of `levels` double-conv blocks with
/// max-pool, a double-conv bottleneck, an expanding path with up arrows and
/// skip concatenations, and a final 1x1 conv.
inline UnetBuild build_unet(const UnetConfig& cfg, std::uint64_t seed = 1) {
  cfg.validate();
  detail_unet::Builder b(cfg, seed);
  auto ch = [&](std::size_t level) {
    std::size_t c = cfg.base_channels;
    for (std::size_t l = 0; l < level; ++l) c *= cfg.channel_mult;
    return c;
  };

  std::vector<std::size_t> skip_idx(cfg.levels);
  std::size_t cur = 1;
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    b.right_arrow(cur, ch(l));
    b.right_arrow(ch(l), ch(l));
    cur = ch(l);
    skip_idx[l] = b.current_output_index();
    b.down_arrow();
  }
  b.right_arrow(cur, ch(cfg.levels));
  b.right_arrow(ch(cfg.levels), ch(cfg.levels));
  cur = ch(cfg.levels);
  for (std::size_t l = cfg.levels; l-- > 0;) {
    b.up_arrow(cur, ch(l));
    b.concat_with(skip_idx[l]);
    b.right_arrow(2 * ch(l), ch(l));
    b.right_arrow(ch(l), ch(l));
    cur = ch(l);
  }
  b.last_arrow(cur);

  b.net_.input_shape = {cfg.height, cfg.width, 1};
  b.report_.depth = b.net_.layers.size();
  for (const auto& [name, value] : b.params_.values)
    (b.params_.is_frozen(name) ? b.report_.n_params_frozen : b.report_.n_params_free)++;
  return {std::move(b.net_), std::move(b.params_), std::move(b.plan_), b.report_};
}

/// Same architecture with the nonnegativity plan applied once, so training
/// starts from a feasible point. The plan covers every conv kernel except
/// K^1, every gamma, and the last bias.
inline UnetBuild build_convex_unet(const UnetConfig& cfg, std::uint64_t seed = 1) {
  UnetBuild ub = build_unet(cfg, seed);
  ub.params = project_convex(std::move(ub.params), ub.plan);
  return ub;
}

inline Regularizer build_regularizer(const NetworkSpec& convex_net, const ParamSet& params,
                                     double a = 1e-3, double p = 2.0, double q = 2.0) {
  return make_uniformly_convex(convex_net, params, a, p, q);
}

}  // namespace inett
