#pragma once

#include "dosgan/layers.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dosgan {

using Rng = std::mt19937_64;

/// Shape and width plan shared by all four networks.
struct NetConfig {
  int image_h = 128;
  int image_w = 128;
  int channels = 3;
  int feature_dim = 1024;   ///< width of the domain-specific feature vector
  int num_domains = 2;
  int base_width = 64;      ///< channels of the first convolution
  int residual_blocks = 3;
  int downsample_stages = 6;  ///< stride-2 stages in the classifier and discriminator trunks

  /// Throws Error when the configuration cannot be built.
  void validate() const;

  int encoder_channels() const { return 4 * base_width; }
  /// Channel width after stride-2 stage `i` (0-based) of a trunk whose first
  /// stage emits `first` channels; doubling, capped at 8x base width.
  int trunk_width(int first, int i) const { return std::min(first << i, 8 * base_width); }
  int grid_h() const { return image_h >> downsample_stages; }
  int grid_w() const { return image_w >> downsample_stages; }

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

std::string describe(const NetConfig& cfg);

/// FNV-1a over the raw bytes of every parameter value, in collection order.
template <typename Scalar>
std::uint64_t checksum(const ConstParameterList<Scalar>& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t count = std::size_t(p->value.size()) * sizeof(Scalar);
    for (std::size_t i = 0; i < count; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

template <typename Scalar>
std::int64_t parameter_count(const ConstParameterList<Scalar>& params) {
  std::int64_t n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

template <typename Scalar>
void zero_grad(const ParameterList<Scalar>& params) {
  for (auto* p : params) p->zero_grad();
}

/// Throws unless `s` is a batch of images of the configured geometry.
void check_image_shape(const NetConfig& cfg, const Shape4& s, const char* who);

template <typename Scalar>
struct ClassifierOutput {
  Matrix<Scalar> styles;  ///< [K, F] penultimate activations
  Matrix<Scalar> logits;  ///< [K, N]
};

/// Domain classifier. The input-to-penultimate part is the domain-specific
/// feature extractor; the last layer maps features to domain logits.
template <typename Scalar>
class ClassifierNet {
 public:
  static constexpr Scalar kSlope = Scalar(0.01);

  ClassifierNet() = default;
  ClassifierNet(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int b = cfg.base_width;
    stem_ = Conv2d<Scalar>("stem", cfg.channels, b, 4, 1, 1, 2);
    stem_.init(rng);
    int in = b;
    for (int i = 0; i < cfg.downsample_stages; ++i) {
      const int out = cfg.trunk_width(2 * b, i);
      stages_.emplace_back("stage" + std::to_string(i), in, out, 4, 2, 1, 1);
      stages_.back().init(rng);
      in = out;
    }
    feature_head_ = Conv2d<Scalar>("feature_head", in, cfg.feature_dim, 1, 1, 0, 0);
    feature_head_.init(rng);
    class_head_ = Linear<Scalar>("class_head", cfg.feature_dim, cfg.num_domains);
    class_head_.init(rng);
  }

  const NetConfig& config() const { return cfg_; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }

  ClassifierOutput<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape = nullptr) const {
    check_image_shape(cfg_, x.shape(), "classifier");
    Tensor<Scalar> h = relu_forward(stem_.forward(x, tape), tape, kSlope);
    for (const auto& stage : stages_) h = relu_forward(stage.forward(h, tape), tape, kSlope);
    h = feature_head_.forward(h, tape);
    if (tape) tape->push(Tensor<Scalar>(Shape4{0, 0, h.shape().h, h.shape().w}));
    ClassifierOutput<Scalar> out;
    out.styles = spatial_mean(h);
    out.logits = class_head_.forward(out.styles, tape);
    return out;
  }

  /// Gradient with respect to the input images. Parameter gradients are only
  /// accumulated when the network is not frozen. Either gradient may be empty.
  Tensor<Scalar> backward(const Matrix<Scalar>& dstyles, const Matrix<Scalar>& dlogits, Tape<Scalar>& tape) {
    const bool pg = !frozen_;
    Matrix<Scalar> ds;
    if (dlogits.size() > 0) {
      ds = class_head_.backward(dlogits, tape, pg);
      if (dstyles.size() > 0) ds += dstyles;
    } else {
      tape.pop_matrix();
      ds = dstyles;
    }
    const Tensor<Scalar> grid = tape.pop_tensor();
    Tensor<Scalar> g = spatial_mean_backward(ds, grid.shape().h, grid.shape().w);
    g = feature_head_.backward(g, tape, pg);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it)
      g = it->backward(relu_backward(std::move(g), tape, kSlope), tape, pg);
    return stem_.backward(relu_backward(std::move(g), tape, kSlope), tape, pg);
  }

  /// Mutable parameters; refuses while frozen.
  ParameterList<Scalar> parameters() {
    if (frozen_) throw Error("classifier is frozen; its parameters are read-only");
    return unchecked_parameters();
  }
  ConstParameterList<Scalar> parameters() const {
    ConstParameterList<Scalar> out;
    stem_.collect(out);
    for (const auto& s : stages_) s.collect(out);
    feature_head_.collect(out);
    class_head_.collect(out);
    return out;
  }
  /// Used by checkpoint loading, which restores the frozen flag afterwards.
  ParameterList<Scalar> unchecked_parameters() {
    ParameterList<Scalar> out;
    stem_.collect(out);
    for (auto& s : stages_) s.collect(out);
    feature_head_.collect(out);
    class_head_.collect(out);
    return out;
  }

 private:
  NetConfig cfg_;
  bool frozen_ = false;
  Conv2d<Scalar> stem_;
  std::vector<Conv2d<Scalar>> stages_;
  Conv2d<Scalar> feature_head_;
  Linear<Scalar> class_head_;
};

/// Domain-independent feature extractor: 7x7 stem, two stride-2 stages,
/// residual blocks; instance norm + ReLU after each convolution.
template <typename Scalar>
class EncoderNet {
 public:
  EncoderNet() = default;
  EncoderNet(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int b = cfg.base_width;
    convs_.emplace_back("conv0", cfg.channels, b, 7, 1, 3, 3);
    norms_.emplace_back("norm0", b);
    convs_.emplace_back("down1", b, 2 * b, 4, 2, 1, 1);
    norms_.emplace_back("norm1", 2 * b);
    convs_.emplace_back("down2", 2 * b, 4 * b, 4, 2, 1, 1);
    norms_.emplace_back("norm2", 4 * b);
    for (auto& c : convs_) c.init(rng);
    for (int i = 0; i < cfg.residual_blocks; ++i) {
      blocks_.emplace_back("res" + std::to_string(i), 4 * b);
      blocks_.back().init(rng);
    }
  }

  const NetConfig& config() const { return cfg_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape = nullptr) const {
    check_image_shape(cfg_, x.shape(), "encoder");
    Tensor<Scalar> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      h = relu_forward(norms_[i].forward(convs_[i].forward(h, tape), tape), tape);
    for (const auto& blk : blocks_) h = blk.forward(h, tape);
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads = true) {
    Tensor<Scalar> g = dy;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g, tape, param_grads);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      g = relu_backward(std::move(g), tape);
      g = norms_[i].backward(g, tape, param_grads);
      g = convs_[i].backward(g, tape, param_grads);
    }
    return g;
  }

  ParameterList<Scalar> parameters() { return collect_all<ParameterList<Scalar>>(*this); }
  ConstParameterList<Scalar> parameters() const { return collect_all<ConstParameterList<Scalar>>(*this); }

 private:
  template <typename List, typename Self>
  static List collect_all(Self& self) {
    List out;
    for (std::size_t i = 0; i < self.convs_.size(); ++i) {
      self.convs_[i].collect(out);
      self.norms_[i].collect(out);
    }
    for (auto& blk : self.blocks_) blk.collect(out);
    return out;
  }

  NetConfig cfg_;
  std::vector<Conv2d<Scalar>> convs_;
  std::vector<InstanceNorm2d<Scalar>> norms_;
  std::vector<ResidualBlock<Scalar>> blocks_;
};

template <typename Scalar>
struct GeneratorGrad {
  Tensor<Scalar> features;
  Matrix<Scalar> styles;  ///< same row count as the styles passed to forward
};

/// Decoder. Styles go through a fully-connected projector and are added
/// channel-wise to the encoder output before the residual blocks.
template <typename Scalar>
class GeneratorNet {
 public:
  GeneratorNet() = default;
  GeneratorNet(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int c = cfg.encoder_channels();
    projector_ = Linear<Scalar>("projector", cfg.feature_dim, c);
    projector_.init(rng);
    for (int i = 0; i < cfg.residual_blocks; ++i) {
      blocks_.emplace_back("res" + std::to_string(i), c);
      blocks_.back().init(rng);
    }
    up_.emplace_back("up1", c, c / 2, 3, 2, 1, 0);
    up_norms_.emplace_back("up_norm1", c / 2);
    up_.emplace_back("up2", c / 2, c / 4, 3, 2, 1, 0);
    up_norms_.emplace_back("up_norm2", c / 4);
    for (auto& u : up_) u.init(rng);
    out_ = Conv2d<Scalar>("out", c / 4, cfg.channels, 7, 1, 3, 3);
    out_.init(rng);
  }

  const NetConfig& config() const { return cfg_; }

  /// styles is [K, F] or a single [1, F] row broadcast over the batch.
  Tensor<Scalar> forward(const Tensor<Scalar>& features, const Matrix<Scalar>& styles,
                         Tape<Scalar>* tape = nullptr) const {
    const Shape4& s = features.shape();
    if (s.c != cfg_.encoder_channels() || s.h * 4 != cfg_.image_h || s.w * 4 != cfg_.image_w)
      throw Error("generator: feature map " + to_string(s) + " does not match config");
    if (styles.cols() != cfg_.feature_dim)
      throw Error("generator: style width " + std::to_string(styles.cols()) + " != feature_dim " +
                  std::to_string(cfg_.feature_dim));
    if (styles.rows() != 1 && styles.rows() != s.n)
      throw Error("generator: " + std::to_string(styles.rows()) + " style rows for a batch of " +
                  std::to_string(s.n));
    const Matrix<Scalar> proj = projector_.forward(styles, tape);
    Tensor<Scalar> h = features;
    for (int n = 0; n < s.n; ++n) h.image(n).rowwise() += proj.row(proj.rows() == 1 ? 0 : n);
    if (tape) tape->push(Matrix<Scalar>(Matrix<Scalar>::Zero(styles.rows(), 0)));
    for (const auto& blk : blocks_) h = blk.forward(h, tape);
    for (std::size_t i = 0; i < up_.size(); ++i)
      h = relu_forward(up_norms_[i].forward(up_[i].forward(h, tape), tape), tape);
    return tanh_forward(out_.forward(h, tape), tape);
  }

  GeneratorGrad<Scalar> backward(const Tensor<Scalar>& dy, Tape<Scalar>& tape, bool param_grads = true) {
    Tensor<Scalar> g = out_.backward(tanh_backward(dy, tape), tape, param_grads);
    for (std::size_t i = up_.size(); i-- > 0;) {
      g = relu_backward(std::move(g), tape);
      g = up_norms_[i].backward(g, tape, param_grads);
      g = up_[i].backward(g, tape, param_grads);
    }
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g, tape, param_grads);
    const Eigen::Index style_rows = tape.pop_matrix().rows();
    Matrix<Scalar> dproj(style_rows, g.shape().c);
    if (style_rows == 1) {
      dproj.setZero();
      for (int n = 0; n < g.shape().n; ++n) dproj.row(0) += g.image(n).colwise().sum();
    } else {
      for (int n = 0; n < g.shape().n; ++n) dproj.row(n) = g.image(n).colwise().sum();
    }
    GeneratorGrad<Scalar> out;
    out.styles = projector_.backward(dproj, tape, param_grads);
    out.features = std::move(g);
    return out;
  }

  ParameterList<Scalar> parameters() { return collect_all<ParameterList<Scalar>>(*this); }
  ConstParameterList<Scalar> parameters() const { return collect_all<ConstParameterList<Scalar>>(*this); }

 private:
  template <typename List, typename Self>
  static List collect_all(Self& self) {
    List out;
    self.projector_.collect(out);
    for (auto& blk : self.blocks_) blk.collect(out);
    for (std::size_t i = 0; i < self.up_.size(); ++i) {
      self.up_[i].collect(out);
      self.up_norms_[i].collect(out);
    }
    self.out_.collect(out);
    return out;
  }

  NetConfig cfg_;
  Linear<Scalar> projector_;
  std::vector<ResidualBlock<Scalar>> blocks_;
  std::vector<ConvTranspose2d<Scalar>> up_;
  std::vector<InstanceNorm2d<Scalar>> up_norms_;
  Conv2d<Scalar> out_;
};

template <typename Scalar>
struct DiscriminatorOutput {
  Tensor<Scalar> adv;     ///< [K, 1, h', w'] per-patch real probabilities
  Matrix<Scalar> feats;   ///< [K, F] predicted domain-specific features
};

/// PatchGAN trunk with an adversarial head and a feature-regression head.
template <typename Scalar>
class DiscriminatorNet {
 public:
  static constexpr Scalar kSlope = Scalar(0.01);

  DiscriminatorNet() = default;
  DiscriminatorNet(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    int in = cfg.channels;
    for (int i = 0; i < cfg.downsample_stages; ++i) {
      const int out = cfg.trunk_width(cfg.base_width, i);
      stages_.emplace_back("stage" + std::to_string(i), in, out, 4, 2, 1, 1);
      stages_.back().init(rng);
      in = out;
    }
    adv_head_ = Conv2d<Scalar>("adv_head", in, 1, 3, 1, 1, 1);
    adv_head_.init(rng);
    feature_head_ = Conv2d<Scalar>("feature_head", in, cfg.feature_dim, 1, 1, 0, 0);
    feature_head_.init(rng);
  }

  const NetConfig& config() const { return cfg_; }

  DiscriminatorOutput<Scalar> forward(const Tensor<Scalar>& x, Tape<Scalar>* tape = nullptr) const {
    check_image_shape(cfg_, x.shape(), "discriminator");
    Tensor<Scalar> h = x;
    for (const auto& stage : stages_) h = relu_forward(stage.forward(h, tape), tape, kSlope);
    DiscriminatorOutput<Scalar> out;
    out.adv = sigmoid_forward(adv_head_.forward(h, tape), tape);
    const Tensor<Scalar> f = feature_head_.forward(h, tape);
    out.feats = spatial_mean(f);
    return out;
  }

  /// Either gradient may be empty (size 0), meaning that head is unused.
  Tensor<Scalar> backward(const Tensor<Scalar>& dadv, const Matrix<Scalar>& dfeats, Tape<Scalar>& tape,
                          bool param_grads = true) {
    const int gh = cfg_.grid_h();
    const int gw = cfg_.grid_w();
    const int k = dadv.size() > 0 ? dadv.shape().n : int(dfeats.rows());
    Matrix<Scalar> df = dfeats.size() > 0 ? dfeats : Matrix<Scalar>::Zero(k, cfg_.feature_dim);
    Tensor<Scalar> g = feature_head_.backward(spatial_mean_backward(df, gh, gw), tape, param_grads);
    Tensor<Scalar> da = dadv.size() > 0 ? dadv : Tensor<Scalar>(Shape4{k, 1, gh, gw});
    g.data() += adv_head_.backward(sigmoid_backward(da, tape), tape, param_grads).data();
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it)
      g = it->backward(relu_backward(std::move(g), tape, kSlope), tape, param_grads);
    return g;
  }

  ParameterList<Scalar> parameters() { return collect_all<ParameterList<Scalar>>(*this); }
  ConstParameterList<Scalar> parameters() const { return collect_all<ConstParameterList<Scalar>>(*this); }
  /// Parameters of the feature-regression head only.
  ParameterList<Scalar> feature_head_parameters() {
    ParameterList<Scalar> out;
    feature_head_.collect(out);
    return out;
  }

 private:
  template <typename List, typename Self>
  static List collect_all(Self& self) {
    List out;
    for (auto& s : self.stages_) s.collect(out);
    self.adv_head_.collect(out);
    self.feature_head_.collect(out);
    return out;
  }

  NetConfig cfg_;
  std::vector<Conv2d<Scalar>> stages_;
  Conv2d<Scalar> adv_head_;
  Conv2d<Scalar> feature_head_;
};

extern template class ClassifierNet<float>;
extern template class ClassifierNet<double>;
extern template class EncoderNet<float>;
extern template class EncoderNet<double>;
extern template class GeneratorNet<float>;
extern template class GeneratorNet<double>;
extern template class DiscriminatorNet<float>;
extern template class DiscriminatorNet<double>;

}  // namespace dosgan
