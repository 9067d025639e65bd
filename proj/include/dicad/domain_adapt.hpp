#pragma once

// Fine-tuning of the feature extractor so that features of nominal inputs
// and of their (frozen) reconstructions agree:
//   L = sum_j GAP(1 - cos(phi_j(x0), phi_j(x_hat)))

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "dicad/autograd.hpp"
#include "dicad/feature_extractor.hpp"
#include "dicad/optim.hpp"

namespace dicad {

struct DomainAdaptConfig {
  int gamma = 1;  // epochs
  std::vector<int> blocks{2, 3};
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const {
    if (gamma < 0) throw std::invalid_argument("gamma must be >= 0");
    if (blocks.empty()) throw std::invalid_argument("domain adaptation needs at least one block");
    if (!(learning_rate > 0) || batch_size < 1) throw std::invalid_argument("invalid domain adaptation optimizer config");
  }
};

// Cosine-distance loss on already extracted feature blocks, averaged over
// batch and space, summed over blocks.
template <class T>
ag::Var<T> lda_loss_features(std::span<const ag::Var<T>> fa, std::span<const ag::Var<T>> fb) {
  if (fa.empty() || fa.size() != fb.size()) throw std::invalid_argument("lda loss needs matching, non-empty block lists");
  std::vector<ag::Var<T>> terms;
  for (std::size_t j = 0; j < fa.size(); ++j) terms.push_back(ag::mean(ag::cosine_distance_map(fa[j], fb[j])));
  return ag::add_scalars(terms);
}

inline ag::Var<float> lda_loss_var(const FeatureExtractor& phi, const Tensor& x0_batch, const Tensor& x_hat_batch,
                                   std::span<const int> blocks) {
  x0_batch.require_same_shape(x_hat_batch, "lda_loss");
  if (blocks.empty()) throw std::invalid_argument("lda loss needs at least one block");
  int upto = 0;
  for (int b : blocks) upto = std::max(upto, phi.check_block(b));
  const auto fa = phi.forward(ag::constant(x0_batch), upto);
  const auto fb = phi.forward(ag::constant(x_hat_batch), upto);
  std::vector<ag::Var<float>> sa, sb;
  for (int b : blocks) {
    sa.push_back(fa[std::size_t(b - 1)]);
    sb.push_back(fb[std::size_t(b - 1)]);
  }
  return lda_loss_features<float>(sa, sb);
}

// Loss value for one CHW pair; lies in [0, 2 |blocks|].
inline double lda_loss(const Tensor& x0, const Tensor& x_hat, const FeatureExtractor& phi, std::span<const int> blocks) {
  ag::NoGradGuard g;
  return lda_loss_var(phi, as_batch(x0), as_batch(x_hat), blocks).value()[0];
}

using Reconstructor = std::function<Tensor(const Tensor&)>;

struct DomainAdaptResult {
  FeatureExtractor phi;
  std::vector<double> epoch_loss;
  std::vector<Tensor> reconstructions;
};

// Returns an adapted copy of phi. Reconstructions of the nominal images are
// computed once with the frozen pipeline and reused every epoch.
inline DomainAdaptResult finetune_extractor(const FeatureExtractor& phi, std::span<const Tensor> train_images,
                                            const Reconstructor& frozen_pipeline, const DomainAdaptConfig& cfg,
                                            std::vector<Tensor> cached_reconstructions = {}) {
  cfg.validate();
  DomainAdaptResult out{phi, {}, std::move(cached_reconstructions)};
  if (cfg.gamma == 0) return out;
  if (train_images.empty()) throw std::invalid_argument("finetune_extractor: empty training set");
  for (int b : cfg.blocks) phi.check_block(b);
  if (out.reconstructions.empty())
    for (const auto& x : train_images) out.reconstructions.push_back(frozen_pipeline(x));
  if (out.reconstructions.size() != train_images.size())
    throw std::invalid_argument("finetune_extractor: reconstruction count does not match training set");

  std::mt19937_64 rng(cfg.seed);
  AdamW<float> opt(out.phi.params(), {cfg.learning_rate, cfg.weight_decay, 0.9, 0.999, 1e-8, 1.0});
  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.gamma; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += std::size_t(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), s + std::size_t(cfg.batch_size));
      std::vector<Tensor> xs, rs;
      for (std::size_t i = s; i < e; ++i) {
        xs.push_back(train_images[order[i]]);
        rs.push_back(out.reconstructions[order[i]]);
      }
      out.phi.params().zero_grad();
      auto loss = lda_loss_var(out.phi, stack<float>(xs), stack<float>(rs), cfg.blocks);
      ag::backward(loss);
      opt.step();
      total += loss.value()[0];
      ++batches;
    }
    out.epoch_loss.push_back(total / double(batches));
  }
  return out;
}

}  // namespace dicad
