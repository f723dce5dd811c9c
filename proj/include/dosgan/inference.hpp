#pragma once

#include "dosgan/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dosgan {

/// Frozen extractor, encoder and generator loaded for translation. Every
/// method is const and deterministic.
class TranslatorHandle {
 public:
  TranslatorHandle(const NetBundle& nets, std::optional<StyleTable> styles);

  const NetConfig& config() const { return config_; }
  const ClassifierNet<float>& classifier() const { return classifier_; }
  const std::optional<StyleTable>& styles() const { return styles_; }
  int num_domains() const { return styles_ ? styles_->num_domains() : 0; }
  std::uint64_t fingerprint() const;

  /// Extractor features, [K, F].
  Matrix<float> style_of(const Tensor<float>& images) const;

  /// g(b(x), S_target) for every image of the batch.
  Tensor<float> translate(const Tensor<float>& images, int target_domain) const;
  /// Per-image targets.
  Tensor<float> translate(const Tensor<float>& images, const std::vector<int>& target_domains) const;
  /// g(b(x), a(cond)); `cond` has one image per input or a single image.
  Tensor<float> translate_conditional(const Tensor<float>& images, const Tensor<float>& cond) const;
  /// g(b(x), a(x)).
  Tensor<float> reconstruct(const Tensor<float>& images) const;
  /// Generator output for explicit style rows ([K, F] or [1, F]).
  Tensor<float> decode(const Tensor<float>& images, const Matrix<float>& styles) const;

  /// Frames for styles (1-t) a(cond1) + t a(cond2), t evenly spaced over
  /// [0, 1]. Every argument holds one image.
  std::vector<Tensor<float>> interpolate(const Tensor<float>& image, const Tensor<float>& cond1,
                                         const Tensor<float>& cond2, int steps) const;

 private:
  NetConfig config_;
  ClassifierNet<float> classifier_;
  EncoderNet<float> encoder_;
  GeneratorNet<float> generator_;
  std::optional<StyleTable> styles_;
};

/// Loads a translation checkpoint.
TranslatorHandle load_translator(const std::filesystem::path& checkpoint);

/// Interpolation weights 0, 1/(steps-1), ..., 1.
std::vector<double> interpolation_weights(int steps);

/// A conditional-mode configuration that reuses a pretrained extractor on a
/// new dataset; the extractor stays frozen and batches need no domain labels.
TrainConfig transfer_extractor(const std::filesystem::path& classifier_ckpt, const DatasetManifest& new_manifest,
                               const TrainConfig& base);

struct ResultEntry {
  std::filesystem::path input;
  std::vector<std::filesystem::path> cond;
  std::optional<int> target_domain;
  std::filesystem::path output;
};

nlohmann::json to_json(const std::vector<ResultEntry>& entries);
void write_results_manifest(const std::filesystem::path& path, const std::vector<ResultEntry>& entries);

}  // namespace dosgan
