#pragma once

#include <vector>

#include "soundstream/discriminator.hpp"
#include "soundstream/spectral.hpp"
#include "soundstream/tensor.hpp"

namespace soundstream {

struct LossWeights {
  float adv = 1.0f;
  float feat = 100.0f;
  float rec = 1.0f;
};

// Mean over discriminators of the time-averaged hinge terms.
Tensor loss_d(const std::vector<Tensor>& real_logits, const std::vector<Tensor>& fake_logits);
Tensor loss_g_adv(const std::vector<Tensor>& fake_logits);

// Mean over all (discriminator, layer) pairs of the element-wise mean
// absolute difference. The real features are treated as constants.
Tensor loss_feat(const std::vector<std::vector<Tensor>>& real_features,
                 const std::vector<std::vector<Tensor>>& fake_features);

// Multi-scale mel reconstruction loss over windows 2^6 .. 2^11 with hop s/4,
// 64 bins, weight sqrt(s/2) on the log term.
inline constexpr int kRecMinLog2 = 6;
inline constexpr int kRecMaxLog2 = 11;
inline constexpr float kLogEpsilon = 1e-5f;
double rec_alpha(int window);
Tensor loss_rec(const Tensor& x, const Tensor& x_hat, double sample_rate,
                ops::SpectrumKind kind = ops::SpectrumKind::Magnitude);

Tensor loss_g_total(const Tensor& adv, const Tensor& feat, const Tensor& rec, const LossWeights& weights = {});

std::vector<Tensor> logits_of(const std::vector<DiscriminatorOutput>& outputs);
std::vector<std::vector<Tensor>> features_of(const std::vector<DiscriminatorOutput>& outputs);

}  // namespace soundstream
