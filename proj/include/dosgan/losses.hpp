#pragma once

#include "dosgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dosgan {

/// Balance between the adversarial term and the two reconstruction families.
struct LossWeights {
  double lambda_f = 5.0;
  double lambda_im = 10.0;

  void validate() const {
    if (!std::isfinite(lambda_f) || !std::isfinite(lambda_im) || lambda_f < 0 || lambda_im < 0)
      throw Error("loss weights must be finite and non-negative");
  }
};

/// Per-step loss values. `cls` is only non-zero for joint classifier training.
struct LossBreakdown {
  double gan = 0;
  double ds_real = 0;
  double ds_fake = 0;
  double im = 0;
  double cls = 0;
  double total_net = 0;
  double total_d = 0;
};

/// Clamp applied to discriminator probabilities before taking logs.
inline constexpr double kLogEps = 1e-7;

/// How the joint-training classification term turns P(label | x) into a loss.
enum class ClsTermForm { NegLogProb, NegProb };

template <typename Scalar>
struct ClassificationLoss {
  Scalar value = 0;
  Matrix<Scalar> grad_logits;
};

namespace detail {

template <typename Scalar>
void require_finite(const Matrix<Scalar>& m, const char* what) {
  if (!m.allFinite()) throw Error(std::string(what) + ": non-finite input");
}

template <typename Scalar>
void check_labels(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  if (Eigen::Index(labels.size()) != logits.rows() || logits.rows() == 0)
    throw Error("classification loss: label count does not match logits rows");
  for (int l : labels)
    if (l < 0 || l >= logits.cols()) throw Error("classification loss: label out of range");
}

/// Row-wise softmax, max-shifted.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p = logits;
  for (Eigen::Index k = 0; k < p.rows(); ++k) {
    p.row(k).array() -= p.row(k).maxCoeff();
    p.row(k) = p.row(k).array().exp();
    p.row(k) /= p.row(k).sum();
  }
  return p;
}

}  // namespace detail

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <typename Scalar>
ClassificationLoss<Scalar> classification_loss(const Matrix<Scalar>& logits, const std::vector<int>& labels) {
  detail::require_finite(logits, "classification loss");
  detail::check_labels(logits, labels);
  const Eigen::Index k = logits.rows();
  ClassificationLoss<Scalar> out;
  out.grad_logits = detail::softmax_rows(logits);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
    total += lse - logits(i, labels[std::size_t(i)]);
    out.grad_logits(i, labels[std::size_t(i)]) -= Scalar(1);
  }
  out.value = total / Scalar(k);
  out.grad_logits /= Scalar(k);
  return out;
}

/// Classification term of joint training: mean of -log P(label|x) or, in the
/// literal form, mean of -P(label|x).
template <typename Scalar>
ClassificationLoss<Scalar> joint_cls_term(const Matrix<Scalar>& logits, const std::vector<int>& labels,
                                          ClsTermForm form) {
  if (form == ClsTermForm::NegLogProb) return classification_loss(logits, labels);
  detail::require_finite(logits, "classification term");
  detail::check_labels(logits, labels);
  const Eigen::Index k = logits.rows();
  const Matrix<Scalar> p = detail::softmax_rows(logits);
  ClassificationLoss<Scalar> out;
  out.grad_logits = Matrix<Scalar>::Zero(p.rows(), p.cols());
  Scalar total = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const int y = labels[std::size_t(i)];
    const Scalar py = p(i, y);
    total -= py;
    // d(-p_y)/dz_j = -p_y (delta_jy - p_j)
    out.grad_logits.row(i) = p.row(i) * py;
    out.grad_logits(i, y) -= py;
  }
  out.value = total / Scalar(k);
  out.grad_logits /= Scalar(k);
  return out;
}

template <typename Scalar>
struct AdversarialLoss {
  Scalar value = 0;
  Tensor<Scalar> grad_real;
  Tensor<Scalar> grad_fake;
};

namespace detail {

template <typename Scalar>
void check_probabilities(const Tensor<Scalar>& t, const char* what) {
  if (!t.all_finite()) throw Error(std::string(what) + ": NaN or infinite probability");
  if (t.size() > 0 && (t.data().minCoeff() < Scalar(0) || t.data().maxCoeff() > Scalar(1)))
    throw Error(std::string(what) + ": probability outside [0, 1]");
}

/// Mean over the patch grid of image k, and whether the clamp was inactive.
template <typename Scalar>
Scalar patch_mean(const Tensor<Scalar>& t, int k) {
  return t.data().segment(k * t.shape().image_size(), t.shape().image_size()).mean();
}

}  // namespace detail

/// Mean over the batch of log D(real) + log(1 - D(fake)), where D(x) is the
/// patch-grid mean. Probabilities are clamped to [eps, 1 - eps]; gradients
/// vanish where the clamp is active.
template <typename Scalar>
AdversarialLoss<Scalar> adversarial_loss(const Tensor<Scalar>& adv_real, const Tensor<Scalar>& adv_fake,
                                         double eps = kLogEps) {
  detail::check_probabilities(adv_real, "adversarial loss (real)");
  detail::check_probabilities(adv_fake, "adversarial loss (fake)");
  if (adv_real.shape() != adv_fake.shape()) throw Error("adversarial loss: real/fake grid shapes differ");
  const int k = adv_real.shape().n;
  if (k == 0) throw Error("adversarial loss: empty batch");
  const Scalar lo = Scalar(eps);
  const Scalar hi = Scalar(1 - eps);
  const auto patches = Scalar(adv_real.shape().image_size());
  AdversarialLoss<Scalar> out{0, Tensor<Scalar>(adv_real.shape()), Tensor<Scalar>(adv_fake.shape())};
  for (int i = 0; i < k; ++i) {
    const Scalar mr = detail::patch_mean(adv_real, i);
    const Scalar mf = detail::patch_mean(adv_fake, i);
    const Scalar cr = std::clamp(mr, lo, hi);
    const Scalar cf = std::clamp(mf, lo, hi);
    out.value += std::log(cr) + std::log(Scalar(1) - cf);
    const std::int64_t off = i * adv_real.shape().image_size();
    if (mr > lo && mr < hi)
      out.grad_real.data().segment(off, adv_real.shape().image_size()).setConstant(Scalar(1) / (cr * patches * k));
    if (mf > lo && mf < hi)
      out.grad_fake.data().segment(off, adv_fake.shape().image_size())
          .setConstant(Scalar(-1) / ((Scalar(1) - cf) * patches * k));
  }
  out.value /= Scalar(k);
  return out;
}

template <typename Scalar>
struct GeneratorAdversarialLoss {
  Scalar value = 0;
  Tensor<Scalar> grad_fake;
};

/// Non-saturating generator surrogate: -mean log D(fake).
template <typename Scalar>
GeneratorAdversarialLoss<Scalar> generator_adversarial_loss(const Tensor<Scalar>& adv_fake, double eps = kLogEps) {
  detail::check_probabilities(adv_fake, "generator adversarial loss");
  const int k = adv_fake.shape().n;
  if (k == 0) throw Error("generator adversarial loss: empty batch");
  const Scalar lo = Scalar(eps);
  const Scalar hi = Scalar(1 - eps);
  const auto patches = Scalar(adv_fake.shape().image_size());
  GeneratorAdversarialLoss<Scalar> out{0, Tensor<Scalar>(adv_fake.shape())};
  for (int i = 0; i < k; ++i) {
    const Scalar mf = detail::patch_mean(adv_fake, i);
    const Scalar cf = std::clamp(mf, lo, hi);
    out.value -= std::log(cf);
    if (mf > lo && mf < hi)
      out.grad_fake.data().segment(i * adv_fake.shape().image_size(), adv_fake.shape().image_size())
          .setConstant(Scalar(-1) / (cf * patches * k));
  }
  out.value /= Scalar(k);
  return out;
}

template <typename Scalar>
struct FeatureL1Loss {
  Scalar value = 0;
  Matrix<Scalar> grad_pred;
  Matrix<Scalar> grad_target;  ///< same shape as the target argument
};

/// Mean over rows of the L1 distance between pred [K, F] and target, which is
/// either [K, F] or a single [1, F] row broadcast to every sample.
template <typename Scalar>
FeatureL1Loss<Scalar> feature_l1_loss(const Matrix<Scalar>& pred, const Matrix<Scalar>& target) {
  detail::require_finite(pred, "feature L1 loss");
  detail::require_finite(target, "feature L1 loss");
  const Eigen::Index k = pred.rows();
  if (k == 0) throw Error("feature L1 loss: empty batch");
  if (target.cols() != pred.cols() || (target.rows() != k && target.rows() != 1))
    throw Error("feature L1 loss: target shape does not match predictions");
  Matrix<Scalar> diff = pred;
  if (target.rows() == 1)
    diff.rowwise() -= target.row(0);
  else
    diff -= target;
  FeatureL1Loss<Scalar> out;
  out.value = diff.cwiseAbs().sum() / Scalar(k);
  out.grad_pred = diff.cwiseSign() / Scalar(k);
  if (target.rows() == 1)
    out.grad_target = -out.grad_pred.colwise().sum();
  else
    out.grad_target = -out.grad_pred;
  return out;
}

/// Discriminator feature head on real images against their extracted features.
template <typename Scalar>
FeatureL1Loss<Scalar> ds_recon_real(const Matrix<Scalar>& d_feats_real, const Matrix<Scalar>& styles_real) {
  return feature_l1_loss(d_feats_real, styles_real);
}

/// Discriminator feature head on translations against the target style
/// (a broadcast domain style, or per-image styles in conditional mode).
template <typename Scalar>
FeatureL1Loss<Scalar> ds_recon_fake(const Matrix<Scalar>& d_feats_fake, const Matrix<Scalar>& target_style) {
  return feature_l1_loss(d_feats_fake, target_style);
}

/// Feature loss measured through the extractor itself instead of the
/// discriminator's feature head.
template <typename Scalar>
FeatureL1Loss<Scalar> ablation_feat_loss(const Matrix<Scalar>& alpha_feats_of_fake,
                                         const Matrix<Scalar>& target_style) {
  return feature_l1_loss(alpha_feats_of_fake, target_style);
}

template <typename Scalar>
struct ImageReconLoss {
  Scalar value = 0;
  Tensor<Scalar> grad_x;
  Tensor<Scalar> grad_self;
  Tensor<Scalar> grad_cycle;
};

/// Mean over the batch of |x - x_self|_1 + |x - x_cycle|_1 (per-image sums).
template <typename Scalar>
ImageReconLoss<Scalar> image_recon_loss(const Tensor<Scalar>& x, const Tensor<Scalar>& x_self,
                                        const Tensor<Scalar>& x_cycle) {
  if (x.shape() != x_self.shape() || x.shape() != x_cycle.shape())
    throw Error("image reconstruction loss: shape mismatch " + to_string(x.shape()) + " / " +
                to_string(x_self.shape()) + " / " + to_string(x_cycle.shape()));
  if (!x.all_finite() || !x_self.all_finite() || !x_cycle.all_finite())
    throw Error("image reconstruction loss: non-finite input");
  const int k = x.shape().n;
  if (k == 0) throw Error("image reconstruction loss: empty batch");
  const Vector<Scalar> d_self = x.data() - x_self.data();
  const Vector<Scalar> d_cycle = x.data() - x_cycle.data();
  ImageReconLoss<Scalar> out{0, Tensor<Scalar>(x.shape()), Tensor<Scalar>(x.shape()), Tensor<Scalar>(x.shape())};
  out.value = (d_self.cwiseAbs().sum() + d_cycle.cwiseAbs().sum()) / Scalar(k);
  out.grad_self.data() = -d_self.cwiseSign() / Scalar(k);
  out.grad_cycle.data() = -d_cycle.cwiseSign() / Scalar(k);
  out.grad_x.data() = -(out.grad_self.data() + out.grad_cycle.data());
  return out;
}

// Conditional (two-direction) forms: each is the sum of the one-direction
// term evaluated for A->B and for B->A.

template <typename Scalar>
struct ConditionalAdversarialLoss {
  Scalar value = 0;
  AdversarialLoss<Scalar> a;  ///< real A vs fake AB
  AdversarialLoss<Scalar> b;  ///< real B vs fake BA
};

template <typename Scalar>
ConditionalAdversarialLoss<Scalar> conditional_adversarial_loss(const Tensor<Scalar>& real_a,
                                                                const Tensor<Scalar>& fake_ab,
                                                                const Tensor<Scalar>& real_b,
                                                                const Tensor<Scalar>& fake_ba) {
  if (real_a.shape().n != real_b.shape().n) throw Error("conditional adversarial loss: |D_A| != |D_B|");
  ConditionalAdversarialLoss<Scalar> out;
  out.a = adversarial_loss(real_a, fake_ab);
  out.b = adversarial_loss(real_b, fake_ba);
  out.value = out.a.value + out.b.value;
  return out;
}

template <typename Scalar>
struct ConditionalFeatureLoss {
  Scalar value = 0;
  FeatureL1Loss<Scalar> a;
  FeatureL1Loss<Scalar> b;
};

/// Real-image feature reconstruction over both batches.
template <typename Scalar>
ConditionalFeatureLoss<Scalar> conditional_ds_recon_real(const Matrix<Scalar>& d_feats_a, const Matrix<Scalar>& styles_a,
                                                         const Matrix<Scalar>& d_feats_b, const Matrix<Scalar>& styles_b) {
  ConditionalFeatureLoss<Scalar> out;
  out.a = ds_recon_real(d_feats_a, styles_a);
  out.b = ds_recon_real(d_feats_b, styles_b);
  out.value = out.a.value + out.b.value;
  return out;
}

/// Fake-image feature reconstruction: d(x_AB) against x_B^s and d(x_BA)
/// against x_A^s, paired per image.
template <typename Scalar>
ConditionalFeatureLoss<Scalar> conditional_ds_recon_fake(const Matrix<Scalar>& d_feats_ab, const Matrix<Scalar>& styles_b,
                                                         const Matrix<Scalar>& d_feats_ba, const Matrix<Scalar>& styles_a) {
  if (styles_a.rows() != d_feats_ba.rows() || styles_b.rows() != d_feats_ab.rows())
    throw Error("conditional feature loss: targets must be per-image");
  ConditionalFeatureLoss<Scalar> out;
  out.a = ds_recon_fake(d_feats_ab, styles_b);
  out.b = ds_recon_fake(d_feats_ba, styles_a);
  out.value = out.a.value + out.b.value;
  return out;
}

template <typename Scalar>
struct ConditionalImageLoss {
  Scalar value = 0;
  ImageReconLoss<Scalar> a;
  ImageReconLoss<Scalar> b;
};

template <typename Scalar>
ConditionalImageLoss<Scalar> conditional_image_recon_loss(const Tensor<Scalar>& x_a, const Tensor<Scalar>& x_aa,
                                                          const Tensor<Scalar>& x_aba, const Tensor<Scalar>& x_b,
                                                          const Tensor<Scalar>& x_bb, const Tensor<Scalar>& x_bab) {
  ConditionalImageLoss<Scalar> out;
  out.a = image_recon_loss(x_a, x_aa, x_aba);
  out.b = image_recon_loss(x_b, x_bb, x_bab);
  out.value = out.a.value + out.b.value;
  return out;
}

/// gan + lambda_f * ds_fake + lambda_im * im (the encoder/generator objective).
inline double total_net_loss(double gan, double ds_fake, double im, const LossWeights& w) {
  return gan + w.lambda_f * ds_fake + w.lambda_im * im;
}

/// -gan + lambda_f * ds_real (the discriminator objective).
inline double total_d_loss(double gan, double ds_real, const LossWeights& w) { return -gan + w.lambda_f * ds_real; }

/// Objective of joint training, where the extractor learns alongside the
/// encoder and generator.
inline double joint_train_net_loss(double gan, double cls_term, double ds_fake, double im, const LossWeights& w) {
  return gan + cls_term + w.lambda_f * ds_fake + w.lambda_im * im;
}

/// Fills both totals of `b` from its parts.
inline void assemble_totals(LossBreakdown& b, const LossWeights& w) {
  b.total_net = joint_train_net_loss(b.gan, b.cls, b.ds_fake, b.im, w);
  b.total_d = total_d_loss(b.gan, b.ds_real, w);
}

/// Checks the weighted-total identities to a relative tolerance.
inline bool totals_consistent(const LossBreakdown& b, const LossWeights& w, double rel_tol = 1e-6) {
  auto close = [&](double got, double want) {
    return std::abs(got - want) <= rel_tol * std::max({1.0, std::abs(got), std::abs(want)});
  };
  return close(b.total_net, joint_train_net_loss(b.gan, b.cls, b.ds_fake, b.im, w)) &&
         close(b.total_d, total_d_loss(b.gan, b.ds_real, w));
}

}  // namespace dosgan
