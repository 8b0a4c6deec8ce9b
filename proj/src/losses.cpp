#include "soundstream/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "soundstream/ops.hpp"

namespace soundstream {

namespace {

Tensor mean_of(const std::vector<Tensor>& terms) {
  if (terms.empty()) throw std::invalid_argument("loss: nothing to average");
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return ops::scale(acc, 1.0f / static_cast<float>(terms.size()));
}

Tensor as_scalar(const Tensor& t) { return t.ndim() == 1 && t.dim(0) == 1 ? t : ops::reshape(t, {1}); }

}  // namespace

Tensor loss_d(const std::vector<Tensor>& real_logits, const std::vector<Tensor>& fake_logits) {
  if (real_logits.size() != fake_logits.size()) throw std::invalid_argument("loss_d: discriminator count mismatch");
  std::vector<Tensor> terms;
  for (std::size_t k = 0; k < real_logits.size(); ++k) {
    terms.push_back(ops::add(ops::hinge_mean(real_logits[k], 1.0f), ops::hinge_mean(fake_logits[k], -1.0f)));
  }
  return mean_of(terms);
}

Tensor loss_g_adv(const std::vector<Tensor>& fake_logits) {
  std::vector<Tensor> terms;
  for (const auto& l : fake_logits) terms.push_back(ops::hinge_mean(l, 1.0f));
  return mean_of(terms);
}

Tensor loss_feat(const std::vector<std::vector<Tensor>>& real_features,
                 const std::vector<std::vector<Tensor>>& fake_features) {
  if (real_features.size() != fake_features.size()) throw std::invalid_argument("loss_feat: discriminator count mismatch");
  std::vector<Tensor> terms;
  for (std::size_t k = 0; k < real_features.size(); ++k) {
    if (real_features[k].size() != fake_features[k].size()) {
      throw std::invalid_argument("loss_feat: layer count mismatch for discriminator " + std::to_string(k));
    }
    for (std::size_t l = 0; l < real_features[k].size(); ++l) {
      if (real_features[k][l].shape() != fake_features[k][l].shape()) {
        throw std::invalid_argument("loss_feat: feature shape mismatch at discriminator " + std::to_string(k) +
                                    ", layer " + std::to_string(l));
      }
      terms.push_back(ops::mean_abs_diff(real_features[k][l].detach(), fake_features[k][l]));
    }
  }
  return mean_of(terms);
}

double rec_alpha(int window) { return std::sqrt(window / 2.0); }

Tensor loss_rec(const Tensor& x, const Tensor& x_hat, double sample_rate, ops::SpectrumKind kind) {
  if (x.numel() != x_hat.numel()) throw std::invalid_argument("loss_rec: length mismatch");
  const std::int64_t T = x.numel();
  if (T < (1 << kRecMaxLog2)) {
    throw std::invalid_argument("loss_rec: need at least " + std::to_string(1 << kRecMaxLog2) + " samples, got " +
                                std::to_string(T));
  }
  const Tensor ref = ops::reshape(x, {T});
  const Tensor est = ops::reshape(x_hat, {T});
  Tensor total;
  for (int e = kRecMinLog2; e <= kRecMaxLog2; ++e) {
    const int s = 1 << e;
    const Tensor sx = ops::mel_spectrogram(ref, s, 64, sample_rate, kind);
    const Tensor sy = ops::mel_spectrogram(est, s, 64, sample_rate, kind);
    const Tensor lin = ops::sum_abs_diff(sx, sy);
    const Tensor log = ops::sum_frame_l2_diff(ops::log_eps(sx, kLogEpsilon), ops::log_eps(sy, kLogEpsilon));
    const Tensor term = ops::add(lin, ops::scale(log, static_cast<float>(rec_alpha(s))));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

Tensor loss_g_total(const Tensor& adv, const Tensor& feat, const Tensor& rec, const LossWeights& w) {
  Tensor a = ops::scale(as_scalar(adv), w.adv);
  Tensor f = ops::scale(as_scalar(feat), w.feat);
  Tensor r = ops::scale(as_scalar(rec), w.rec);
  return ops::add(ops::add(a, f), r);
}

std::vector<Tensor> logits_of(const std::vector<DiscriminatorOutput>& outputs) {
  std::vector<Tensor> out;
  for (const auto& o : outputs) out.push_back(o.logits);
  return out;
}

std::vector<std::vector<Tensor>> features_of(const std::vector<DiscriminatorOutput>& outputs) {
  std::vector<std::vector<Tensor>> out;
  for (const auto& o : outputs) out.push_back(o.features);
  return out;
}

}  // namespace soundstream
