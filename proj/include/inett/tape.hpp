#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "inett/ops.hpp"
#include "inett/tensor.hpp"

namespace inett {

using ValueId = std::size_t;

/// Define-by-run reverse-mode tape. A tape is rebuilt per forward pass and is
/// single-threaded; run one tape per worker for data parallelism.
class GradTape {
 public:
  ValueId leaf(Tensor t, bool tracked = true) {
    ValueId id = push(std::move(t));
    if (tracked) tracked_.push_back(id);
    is_tracked_leaf_.resize(values_.size(), false);
    is_tracked_leaf_[id] = tracked;
    return id;
  }

  ValueId constant(Tensor t) { return leaf(std::move(t), false); }

  const Tensor& value(ValueId id) const { return values_.at(id); }

  const std::vector<ValueId>& tracked_leaves() const { return tracked_; }

  // ---- differentiable operations ----

  ValueId conv2d(ValueId in, ValueId kernel, PadSpec pad, std::size_t stride = 1) {
    ValueId out = push(inett::conv2d(values_[in], values_[kernel], pad, stride));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(out);
      t.accumulate(in, conv2d_grad_input(go, t.values_[in], t.values_[kernel], pad, stride));
      t.accumulate(kernel, conv2d_grad_kernel(go, t.values_[in], t.values_[kernel], pad, stride));
    });
    return out;
  }

  ValueId zero_pad(ValueId in, PadSpec pad) {
    const std::size_t H = values_[in].dim(0), W = values_[in].dim(1);
    ValueId out = push(inett::zero_pad(values_[in], pad));
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(in, zero_pad_adjoint(t.adj(out), pad, H, W));
    });
    return out;
  }

  ValueId relu(ValueId in) {
    ValueId out = push(inett::relu(values_[in]));
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(in, relu_adjoint(t.adj(out), t.values_[in]));
    });
    return out;
  }

  ValueId maxpool2(ValueId in) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    ValueId out = push(inett::maxpool2(values_[in], argmax.get()));
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(in, maxpool2_adjoint(t.adj(out), t.values_[in], *argmax));
    });
    return out;
  }

  ValueId upsample_nn(ValueId in) {
    const std::size_t H = values_[in].dim(0), W = values_[in].dim(1);
    ValueId out = push(inett::upsample_nn(values_[in]));
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(in, upsample_nn_adjoint(t.adj(out), H, W));
    });
    return out;
  }

  ValueId concat_channels(ValueId z, ValueId x) {
    const std::size_t Cz = values_[z].dim(2), Cx = values_[x].dim(2);
    ValueId out = push(inett::concat_channels(values_[z], values_[x]));
    nodes_.push_back([=](GradTape& t) {
      auto [gz, gx] = concat_channels_adjoint(t.adj(out), Cz, Cx);
      t.accumulate(z, gz);
      t.accumulate(x, gx);
    });
    return out;
  }

  /// Per-channel bias add: bias has shape {C} (or matches in's shape exactly).
  ValueId add_bias(ValueId in, ValueId bias) {
    const Tensor& u = values_[in];
    const Tensor& b = values_[bias];
    Tensor out = u;
    if (b.same_shape(u)) {
      out += b;
    } else if (u.ndim() == 3 && b.size() == u.dim(2)) {
      for (std::size_t i = 0; i < u.dim(0); ++i)
        for (std::size_t j = 0; j < u.dim(1); ++j)
          for (std::size_t c = 0; c < u.dim(2); ++c) out.at3(i, j, c) += b[c];
    } else if (b.size() == 1) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[0];
    } else {
      throw DimensionError("add_bias: bias " + b.shape_str() + " does not broadcast to " +
                           u.shape_str());
    }
    ValueId outid = push(std::move(out));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(outid);
      t.accumulate(in, go);
      const Tensor& bb = t.values_[bias];
      Tensor gb(bb.shape());
      if (bb.same_shape(t.values_[in])) {
        gb = go;
      } else if (bb.size() == 1) {
        for (std::size_t i = 0; i < go.size(); ++i) gb[0] += go[i];
      } else {
        const Tensor& uu = t.values_[in];
        for (std::size_t i = 0; i < uu.dim(0); ++i)
          for (std::size_t j = 0; j < uu.dim(1); ++j)
            for (std::size_t c = 0; c < uu.dim(2); ++c) gb[c] += go.at3(i, j, c);
      }
      t.accumulate(bias, gb);
    });
    return outid;
  }

  ValueId add(ValueId a, ValueId b) {
    ValueId out = push(values_[a] + values_[b]);
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(a, t.adj(out));
      t.accumulate(b, t.adj(out));
    });
    return out;
  }

  ValueId sub(ValueId a, ValueId b) {
    ValueId out = push(values_[a] - values_[b]);
    nodes_.push_back([=](GradTape& t) {
      t.accumulate(a, t.adj(out));
      Tensor neg = t.adj(out);
      neg *= -1.0;
      t.accumulate(b, neg);
    });
    return out;
  }

  ValueId scale(ValueId a, double c) {
    ValueId out = push(values_[a] * c);
    nodes_.push_back([=](GradTape& t) { t.accumulate(a, t.adj(out) * c); });
    return out;
  }

  /// Dense matrix-vector product: W is {out,in}, x is flat {in}.
  ValueId matvec(ValueId w, ValueId x) {
    const Tensor& W = values_[w];
    const Tensor& v = values_[x];
    if (W.ndim() != 2 || v.ndim() != 1 || W.dim(1) != v.size())
      throw DimensionError("matvec: " + W.shape_str() + " x " + v.shape_str());
    Tensor out({W.dim(0)});
    for (std::size_t i = 0; i < W.dim(0); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < W.dim(1); ++j) s += W[i * W.dim(1) + j] * v[j];
      out[i] = s;
    }
    ValueId outid = push(std::move(out));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(outid);
      const Tensor& WW = t.values_[w];
      const Tensor& vv = t.values_[x];
      Tensor gW(WW.shape()), gx(vv.shape());
      for (std::size_t i = 0; i < WW.dim(0); ++i)
        for (std::size_t j = 0; j < WW.dim(1); ++j) {
          gW[i * WW.dim(1) + j] += go[i] * vv[j];
          gx[j] += WW[i * WW.dim(1) + j] * go[i];
        }
      t.accumulate(w, gW);
      t.accumulate(x, gx);
    });
    return outid;
  }

  ValueId concat_flat(ValueId z, ValueId x) {
    const std::size_t nz = values_[z].size();
    ValueId out = push(inett::concat_flat(values_[z], values_[x]));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(out);
      Tensor gz(t.values_[z].shape()), gx(t.values_[x].shape());
      for (std::size_t i = 0; i < gz.size(); ++i) gz[i] = go[i];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[nz + i];
      t.accumulate(z, gz);
      t.accumulate(x, gx);
    });
    return out;
  }

  ValueId reshape(ValueId a, std::vector<std::size_t> shape) {
    const Tensor& v = values_[a];
    if (Tensor::checked_size(shape) != v.size())
      throw DimensionError("reshape: element count mismatch");
    Tensor out(shape, std::vector<double>(v.data(), v.data() + v.size()));
    ValueId outid = push(std::move(out));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(outid);
      Tensor g(t.values_[a].shape(),
               std::vector<double>(go.data(), go.data() + go.size()));
      t.accumulate(a, g);
    });
    return outid;
  }

  ValueId batchnorm_infer(ValueId in, ValueId gamma, ValueId beta, ValueId pop_mean,
                          ValueId pop_var, double eps) {
    ValueId out = push(inett::batchnorm_infer(values_[in], values_[gamma], values_[beta],
                                              values_[pop_mean], values_[pop_var], eps));
    nodes_.push_back([=](GradTape& t) {
      const Tensor& go = t.adj(out);
      const Tensor& u = t.values_[in];
      const Tensor& g = t.values_[gamma];
      const Tensor& mu = t.values_[pop_mean];
      const Tensor& var = t.values_[pop_var];
      const std::size_t C = u.dim(2);
      Tensor gu(u.shape()), ggamma({C}), gbeta({C});
      for (std::size_t i = 0; i < u.dim(0); ++i)
        for (std::size_t j = 0; j < u.dim(1); ++j)
          for (std::size_t c = 0; c < C; ++c) {
            const double s = std::sqrt(var[c] + eps);
            const double o = go.at3(i, j, c);
            gu.at3(i, j, c) = o * g[c] / s;
            ggamma[c] += o * (u.at3(i, j, c) - mu[c]) / s;
            gbeta[c] += o;
          }
      t.accumulate(in, gu);
      t.accumulate(gamma, ggamma);
      t.accumulate(beta, gbeta);
    });
    return out;
  }

  /// Batch-statistics normalization over a mini-batch of same-shape images.
  /// The gradient flows through the batch mean and variance.
  std::vector<ValueId> batchnorm_train(const std::vector<ValueId>& batch, ValueId gamma,
                                       ValueId beta, double eps,
                                       Tensor* mean_out = nullptr,
                                       Tensor* var_out = nullptr) {
    if (batch.empty()) throw Error("batchnorm_train: empty batch");
    std::vector<const Tensor*> ptrs;
    for (ValueId id : batch) ptrs.push_back(&values_[id]);
    auto stats = std::make_shared<ChannelStats>(channel_stats(ptrs));
    if (mean_out) *mean_out = stats->mean;
    if (var_out) *var_out = stats->var;
    std::vector<ValueId> outs;
    outs.reserve(batch.size());
    for (ValueId id : batch)
      outs.push_back(push(inett::batchnorm_infer(values_[id], values_[gamma], values_[beta],
                                                 stats->mean, stats->var, eps)));
    std::vector<ValueId> ins = batch;
    nodes_.push_back([=](GradTape& t) {
      const Tensor& g = t.values_[gamma];
      const std::size_t C = t.values_[ins[0]].dim(2);
      const std::size_t B = ins.size();
      const std::size_t H = t.values_[ins[0]].dim(0), W = t.values_[ins[0]].dim(1);
      const double m = static_cast<double>(B * H * W);
      Tensor ggamma({C}), gbeta({C});
      // per-channel sums of dxhat and dxhat*xhat
      Tensor sum_dxhat({C}), sum_dxhat_xhat({C});
      auto xhat = [&](std::size_t s, std::size_t i, std::size_t j, std::size_t c) {
        return (t.values_[ins[s]].at3(i, j, c) - stats->mean[c]) /
               std::sqrt(stats->var[c] + eps);
      };
      for (std::size_t s = 0; s < B; ++s) {
        const Tensor& go = t.adj(outs[s]);
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            for (std::size_t c = 0; c < C; ++c) {
              const double o = go.at3(i, j, c);
              const double xh = xhat(s, i, j, c);
              ggamma[c] += o * xh;
              gbeta[c] += o;
              sum_dxhat[c] += o * g[c];
              sum_dxhat_xhat[c] += o * g[c] * xh;
            }
      }
      for (std::size_t s = 0; s < B; ++s) {
        const Tensor& go = t.adj(outs[s]);
        Tensor gu(t.values_[ins[s]].shape());
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            for (std::size_t c = 0; c < C; ++c) {
              const double sdev = std::sqrt(stats->var[c] + eps);
              const double dxhat = go.at3(i, j, c) * g[c];
              gu.at3(i, j, c) = (dxhat - sum_dxhat[c] / m -
                                 xhat(s, i, j, c) * sum_dxhat_xhat[c] / m) /
                                sdev;
            }
        t.accumulate(ins[s], gu);
      }
      t.accumulate(gamma, ggamma);
      t.accumulate(beta, gbeta);
    });
    return outs;
  }

  /// sum_i |v_i|^p as a scalar value (shape {1}).
  ValueId sum_pow(ValueId a, double p) {
    const Tensor& v = values_[a];
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += std::pow(std::abs(v[i]), p);
    ValueId out = push(Tensor({1}, {s}));
    nodes_.push_back([=](GradTape& t) {
      const double go = t.adj(out)[0];
      const Tensor& vv = t.values_[a];
      Tensor g(vv.shape());
      for (std::size_t i = 0; i < vv.size(); ++i) {
        if (p == 2.0) {
          g[i] = go * 2.0 * vv[i];
        } else {
          const double av = std::abs(vv[i]);
          g[i] = av == 0.0 ? 0.0
                           : go * p * std::pow(av, p - 1.0) * (vv[i] > 0.0 ? 1.0 : -1.0);
        }
      }
      t.accumulate(a, g);
    });
    return out;
  }

  ValueId sum(ValueId a) {
    const Tensor& v = values_[a];
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
    ValueId out = push(Tensor({1}, {s}));
    nodes_.push_back([=](GradTape& t) {
      const double go = t.adj(out)[0];
      Tensor g(t.values_[a].shape(), go);
      t.accumulate(a, g);
    });
    return out;
  }

  // ---- gradients ----

  /// Backward pass from a scalar output; returns one gradient per tracked leaf.
  std::unordered_map<ValueId, Tensor> grad(ValueId output) {
    if (values_.at(output).size() != 1)
      throw Error("grad: output must be a scalar value");
    adjoints_.assign(values_.size(), Tensor());
    has_adjoint_.assign(values_.size(), false);
    accumulate(output, Tensor({1}, {1.0}));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
    std::unordered_map<ValueId, Tensor> out;
    for (ValueId leaf : tracked_) {
      if (has_adjoint_[leaf])
        out.emplace(leaf, adjoints_[leaf]);
      else
        out.emplace(leaf, Tensor(values_[leaf].shape()));
    }
    return out;
  }

  Tensor grad_of(ValueId output, ValueId leaf) {
    if (leaf >= is_tracked_leaf_.size() || !is_tracked_leaf_[leaf])
      throw Error("grad_of: value " + std::to_string(leaf) + " is not a tracked leaf");
    auto g = grad(output);
    return g.at(leaf);
  }

 private:
  ValueId push(Tensor t) {
    values_.push_back(std::move(t));
    return values_.size() - 1;
  }

  Tensor& adj(ValueId id) {
    if (!has_adjoint_[id]) {
      adjoints_[id] = Tensor(values_[id].shape());
      has_adjoint_[id] = true;
    }
    return adjoints_[id];
  }

  void accumulate(ValueId id, const Tensor& g) { adj(id) += g; }

  std::vector<Tensor> values_;
  std::vector<Tensor> adjoints_;
  std::vector<bool> has_adjoint_;
  std::vector<bool> is_tracked_leaf_;
  std::vector<ValueId> tracked_;
  std::vector<std::function<void(GradTape&)>> nodes_;
};

}  // namespace inett
