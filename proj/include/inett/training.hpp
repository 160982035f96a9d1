#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "inett/network.hpp"
#include "inett/tomo.hpp"

namespace inett {

enum class SampleKind { Artifact, Clean };

/// Training pair: network input z_s and label r_s = |x*_s - z_s| (>= 0).
struct Sample {
  Tensor z;
  Tensor r;
  SampleKind kind = SampleKind::Clean;
  double noise_level = 0.0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
};

/// First N1 samples carry reconstruction artifacts (z = F_dagger(F x* + eta)),
/// last N2 are artifact-free (z = x*, r = 0). Per-sample noise level is
/// uniform in [noise_lo, noise_hi]. Splits mirror the 10:2:1 proportion
/// within each kind.
inline Dataset build_dataset(const std::vector<Tensor>& phantoms,
                             const ProjectionOperator& op, std::size_t n1, std::size_t n2,
                             double noise_lo, double noise_hi, std::uint64_t seed,
                             std::size_t art_rounds = 5) {
  if (phantoms.size() != n1 + n2)
    throw Error("build_dataset: phantom count " + std::to_string(phantoms.size()) +
                " != N1 + N2 = " + std::to_string(n1 + n2));
  Rng rng(seed);
  Dataset ds;
  ds.samples.reserve(n1 + n2);
  for (std::size_t s = 0; s < n1; ++s) {
    Sample smp;
    smp.kind = SampleKind::Artifact;
    smp.noise_level = rng.uniform(noise_lo, noise_hi);
    Sinogram y = apply(op, phantoms[s]);
    Sinogram y_noisy = add_noise(op, y, smp.noise_level, rng.raw());
    smp.z = pseudo_inverse(op, y_noisy, art_rounds);
    smp.r = phantoms[s] - smp.z;
    for (std::size_t i = 0; i < smp.r.size(); ++i) smp.r[i] = std::abs(smp.r[i]);
    ds.samples.push_back(std::move(smp));
  }
  for (std::size_t s = n1; s < n1 + n2; ++s) {
    Sample smp;
    smp.kind = SampleKind::Clean;
    smp.z = phantoms[s];
    smp.r = Tensor(phantoms[s].shape());
    ds.samples.push_back(std::move(smp));
  }
  auto split_kind = [&ds](std::size_t begin, std::size_t count) {
    const std::size_t n_train = count * 10 / 13;
    const std::size_t n_val = count * 2 / 13;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t idx = begin + i;
      if (i < n_train)
        ds.train_idx.push_back(idx);
      else if (i < n_train + n_val)
        ds.val_idx.push_back(idx);
      else
        ds.test_idx.push_back(idx);
    }
  };
  split_kind(0, n1);
  split_kind(n1, n2);
  return ds;
}

/// Mini-batch loss (1/|I|) sum ||Phi(z_s) - r_s||_2^2 + lambda ||Theta_free||_2^2
/// with gradients for the free parameters only.
inline std::pair<double, std::map<std::string, Tensor>> loss_batch(
    const NetworkSpec& net, const ParamSet& params, const std::vector<const Sample*>& batch,
    double lambda, Mode mode = Mode::Train) {
  if (batch.empty()) throw Error("loss_batch: empty batch");
  GradTape tape;
  ParamLeaves leaves = make_param_leaves(tape, params);
  std::vector<ValueId> inputs;
  inputs.reserve(batch.size());
  for (const Sample* s : batch) inputs.push_back(tape.constant(s->z));
  std::vector<ValueId> outs = forward_batch(net, params, tape, leaves, inputs, mode);
  ValueId acc = 0;
  bool first = true;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    ValueId term = tape.sum_pow(tape.sub(outs[s], tape.constant(batch[s]->r)), 2.0);
    acc = first ? term : tape.add(acc, term);
    first = false;
  }
  ValueId loss = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
  if (lambda > 0.0) {
    for (const auto& [name, value] : params.values) {
      if (params.is_frozen(name)) continue;
      loss = tape.add(loss, tape.scale(tape.sum_pow(leaves.at(name), 2.0), lambda));
    }
  }
  auto grads_by_id = tape.grad(loss);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, id] : leaves.ids)
    if (!params.is_frozen(name)) grads.emplace(name, std::move(grads_by_id.at(id)));
  return {tape.value(loss)[0], std::move(grads)};
}

/// Adam with bias-corrected moments.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor> m, v;

  void update(ParamSet& params, const std::map<std::string, Tensor>& grads) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& [name, g] : grads) {
      Tensor& theta = params.values.at(name);
      if (!theta.same_shape(g))
        throw DimensionError("adam: gradient shape mismatch for " + name);
      auto mi = m.try_emplace(name, Tensor(g.shape())).first;
      auto vi = v.try_emplace(name, Tensor(g.shape())).first;
      for (std::size_t i = 0; i < g.size(); ++i) {
        mi->second[i] = beta1 * mi->second[i] + (1.0 - beta1) * g[i];
        vi->second[i] = beta2 * vi->second[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = mi->second[i] / bc1;
        const double vhat = vi->second[i] / bc2;
        theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

struct TrainHistory {
  struct BatchRecord {
    std::size_t epoch, batch;
    double train_loss;
  };
  std::vector<BatchRecord> batches;
  std::vector<double> val_loss;  // one per epoch
};

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 10;
  double lr = 5e-4;
  double lambda = 5e-4;
  std::uint64_t seed = 1;
  bool verbose = false;
};

inline double validation_loss(const NetworkSpec& net, const ParamSet& params,
                              const std::vector<const Sample*>& batch, double lambda);

/// Random-shuffling mini-batch Adam with the nonnegativity projection applied
/// after every update. Trailing partial batches are processed.
inline TrainHistory train(const NetworkSpec& net, ParamSet& params,
                          const ConstraintPlan& plan, const Dataset& ds,
                          const TrainOptions& opt) {
  Rng rng(opt.seed);
  AdamState adam;
  adam.lr = opt.lr;
  TrainHistory hist;
  std::vector<std::size_t> order = ds.train_idx;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      std::vector<const Sample*> batch;
      for (std::size_t i = b; i < std::min(b + opt.batch_size, order.size()); ++i)
        batch.push_back(&ds.samples[order[i]]);
      auto [loss, grads] = loss_batch(net, params, batch, opt.lambda);
      adam.update(params, grads);
      params = project_convex(std::move(params), plan);
      hist.batches.push_back({epoch, ++batch_no, loss});
    }
    // validation with train-mode BN over the full validation set as one batch
    double vloss = 0.0;
    if (!ds.val_idx.empty()) {
      std::vector<const Sample*> vb;
      for (std::size_t i : ds.val_idx) vb.push_back(&ds.samples[i]);
      vloss = validation_loss(net, params, vb, opt.lambda);
    }
    hist.val_loss.push_back(vloss);
    if (opt.verbose) {
      double tl = 0.0;
      std::size_t nb = 0;
      for (auto it = hist.batches.rbegin(); it != hist.batches.rend() && it->epoch == epoch;
           ++it, ++nb)
        tl += it->train_loss;
      std::fprintf(stderr, "epoch %zu: train %.6g  val %.6g\n", epoch,
                   nb ? tl / static_cast<double>(nb) : 0.0, vloss);
    }
  }
  return hist;
}

/// Loss value only (no gradients), train-mode BN.
inline double validation_loss(const NetworkSpec& net, const ParamSet& params,
                              const std::vector<const Sample*>& batch, double lambda) {
  if (batch.empty()) return 0.0;
  GradTape tape;
  ParamLeaves leaves = make_param_leaves(tape, params);
  std::vector<ValueId> inputs;
  for (const Sample* s : batch) inputs.push_back(tape.constant(s->z));
  std::vector<ValueId> outs = forward_batch(net, params, tape, leaves, inputs, Mode::Train);
  double loss = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s)
    loss += norm2_sq(tape.value(outs[s]) - batch[s]->r);
  loss /= static_cast<double>(batch.size());
  if (lambda > 0.0)
    for (const auto& [name, value] : params.values)
      if (!params.is_frozen(name)) loss += lambda * norm2_sq(value);
  return loss;
}

/// One pass over the full training population fixes E(B^k) and Var(B^k) per
/// BN layer; the statistics become frozen parameters and subsequent forwards
/// must use infer mode.
inline ParamSet finalize_bn(const NetworkSpec& net, ParamSet params, const Dataset& ds) {
  std::vector<Tensor> batch;
  batch.reserve(ds.train_idx.size());
  for (std::size_t i : ds.train_idx) batch.push_back(ds.samples[i].z);
  if (batch.empty()) throw Error("finalize_bn: empty training set");

  std::vector<std::vector<Tensor>> outputs;
  outputs.push_back(std::move(batch));
  for (const LayerSpec& l : net.layers) {
    std::vector<Tensor>& cur = outputs.back();
    std::vector<Tensor> next;
    next.reserve(cur.size());
    switch (l.kind) {
      case LayerKind::Conv:
        for (const Tensor& t : cur) {
          Tensor v = conv2d(t, params.at(l.kernel), l.pad, l.stride);
          if (!l.bias.empty()) {
            const Tensor& b = params.at(l.bias);
            if (b.size() == 1) {
              for (std::size_t i = 0; i < v.size(); ++i) v[i] += b[0];
            } else {
              for (std::size_t i = 0; i < v.dim(0); ++i)
                for (std::size_t j = 0; j < v.dim(1); ++j)
                  for (std::size_t c = 0; c < v.dim(2); ++c) v.at3(i, j, c) += b[c];
            }
          }
          next.push_back(std::move(v));
        }
        break;
      case LayerKind::BatchNorm: {
        std::vector<const Tensor*> ptrs;
        for (const Tensor& t : cur) ptrs.push_back(&t);
        ChannelStats st = channel_stats(ptrs);
        for (const Tensor& t : cur)
          next.push_back(batchnorm_infer(t, params.at(l.gamma), params.at(l.beta), st.mean,
                                         st.var, l.eps));
        params.values[bn_pop_mean_name(l)] = st.mean;
        params.values[bn_pop_var_name(l)] = st.var;
        params.frozen.insert(bn_pop_mean_name(l));
        params.frozen.insert(bn_pop_var_name(l));
        break;
      }
      case LayerKind::ReLU:
        for (const Tensor& t : cur) next.push_back(relu(t));
        break;
      case LayerKind::MaxPool2:
        for (const Tensor& t : cur) next.push_back(maxpool2(t));
        break;
      case LayerKind::Upsample2:
        for (const Tensor& t : cur) next.push_back(upsample_nn(t));
        break;
      case LayerKind::Concat: {
        const auto& src = outputs.at(static_cast<std::size_t>(l.concat_source));
        for (std::size_t s = 0; s < cur.size(); ++s)
          next.push_back(concat_channels(src[s], cur[s]));
        break;
      }
      case LayerKind::Dense: {
        for (std::size_t s = 0; s < cur.size(); ++s) {
          const Tensor& W = params.at(l.weight);
          const Tensor& x = cur[s];
          Tensor v({W.dim(0)});
          for (std::size_t i = 0; i < W.dim(0); ++i)
            for (std::size_t j = 0; j < W.dim(1); ++j)
              v[i] += W[i * W.dim(1) + j] * x[j];
          if (l.skip_source >= 0) {
            const Tensor& A = params.at(l.skip_weight);
            const Tensor& zs = outputs.at(static_cast<std::size_t>(l.skip_source))[s];
            for (std::size_t i = 0; i < A.dim(0); ++i)
              for (std::size_t j = 0; j < A.dim(1); ++j)
                v[i] += A[i * A.dim(1) + j] * zs[j];
          }
          if (!l.bias.empty()) {
            const Tensor& b = params.at(l.bias);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.size() == 1 ? b[0] : b[i];
          }
          next.push_back(std::move(v));
        }
        break;
      }
      case LayerKind::Identity:
        next = cur;
        break;
    }
    outputs.push_back(std::move(next));
  }
  return params;
}

/// Per-sample MSE (1/N) ||Phi(z_s) - r_s||_2^2 on a split, inference mode.
inline std::vector<double> evaluate_mse(const NetworkSpec& net, const ParamSet& params,
                                        const Dataset& ds,
                                        const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    Tensor y = forward(net, params, ds.samples[i].z);
    out.push_back(norm2_sq(y - ds.samples[i].r) / static_cast<double>(y.size()));
  }
  return out;
}

}  // namespace inett
