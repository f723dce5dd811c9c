#include "dosgan/inference.hpp"

#include <fstream>

namespace fs = std::filesystem;

namespace dosgan {

TranslatorHandle::TranslatorHandle(const NetBundle& nets, std::optional<StyleTable> styles)
    : config_(nets.config),
      classifier_(nets.classifier),
      encoder_(nets.encoder),
      generator_(nets.generator),
      styles_(std::move(styles)) {
  classifier_.freeze();
}

std::uint64_t TranslatorHandle::fingerprint() const {
  ConstParameterList<float> all = classifier_.parameters();
  for (const auto& list : {encoder_.parameters(), generator_.parameters()}) all.insert(all.end(), list.begin(), list.end());
  return checksum(all);
}

Matrix<float> TranslatorHandle::style_of(const Tensor<float>& images) const {
  return classifier_.forward(images).styles;
}

Tensor<float> TranslatorHandle::decode(const Tensor<float>& images, const Matrix<float>& styles) const {
  return generator_.forward(encoder_.forward(images), styles);
}

Tensor<float> TranslatorHandle::translate(const Tensor<float>& images, int target_domain) const {
  if (!styles_) throw Error("translator has no style table; only conditional translation is available");
  return decode(images, styles_->row(target_domain));
}

Tensor<float> TranslatorHandle::translate(const Tensor<float>& images, const std::vector<int>& target_domains) const {
  if (!styles_) throw Error("translator has no style table; only conditional translation is available");
  if (int(target_domains.size()) != images.batch())
    throw Error("got " + std::to_string(target_domains.size()) + " target domains for " +
                std::to_string(images.batch()) + " images");
  Matrix<float> s(images.batch(), config_.feature_dim);
  for (int i = 0; i < images.batch(); ++i) s.row(i) = styles_->row(target_domains[std::size_t(i)]);
  return decode(images, s);
}

Tensor<float> TranslatorHandle::translate_conditional(const Tensor<float>& images, const Tensor<float>& cond) const {
  if (cond.batch() != 1 && cond.batch() != images.batch())
    throw Error("conditional batch has " + std::to_string(cond.batch()) + " images, expected 1 or " +
                std::to_string(images.batch()));
  return decode(images, style_of(cond));
}

Tensor<float> TranslatorHandle::reconstruct(const Tensor<float>& images) const {
  return decode(images, style_of(images));
}

std::vector<double> interpolation_weights(int steps) {
  if (steps < 2) throw Error("interpolation needs at least 2 steps, got " + std::to_string(steps));
  std::vector<double> t(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) t[std::size_t(i)] = double(i) / double(steps - 1);
  return t;
}

std::vector<Tensor<float>> TranslatorHandle::interpolate(const Tensor<float>& image, const Tensor<float>& cond1,
                                                         const Tensor<float>& cond2, int steps) const {
  const std::vector<double> ts = interpolation_weights(steps);
  if (image.batch() != 1 || cond1.batch() != 1 || cond2.batch() != 1)
    throw Error("interpolate takes single images");
  const Matrix<float> s1 = style_of(cond1);
  const Matrix<float> s2 = style_of(cond2);
  const Tensor<float> feat = encoder_.forward(image);
  std::vector<Tensor<float>> frames;
  frames.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    Matrix<float> s;
    if (i == 0)
      s = s1;
    else if (i + 1 == ts.size())
      s = s2;
    else
      s = (s1 + float(ts[i]) * (s2 - s1)).eval();
    frames.push_back(generator_.forward(feat, s));
  }
  return frames;
}

TranslatorHandle load_translator(const fs::path& checkpoint) {
  const Archive a = load_archive(checkpoint);
  return TranslatorHandle(load_bundle(a), read_style_table(a));
}

TrainConfig transfer_extractor(const fs::path& classifier_ckpt, const DatasetManifest& new_manifest,
                               const TrainConfig& base) {
  const ClassifierCheckpoint ck = load_classifier_checkpoint(classifier_ckpt);
  const NetConfig& c = ck.classifier.config();
  if (c.image_h != new_manifest.image_h || c.image_w != new_manifest.image_w || c.channels != new_manifest.channels)
    throw Error("extractor expects " + std::to_string(c.channels) + "x" + std::to_string(c.image_h) + "x" +
                std::to_string(c.image_w) + " images but the dataset has " + std::to_string(new_manifest.channels) +
                "x" + std::to_string(new_manifest.image_h) + "x" + std::to_string(new_manifest.image_w));
  TrainConfig cfg = base;
  cfg.mode = TrainMode::Conditional;
  cfg.classifier_ckpt = classifier_ckpt;
  cfg.manifest_path = new_manifest.root;
  cfg.net.image_h = c.image_h;
  cfg.net.image_w = c.image_w;
  cfg.net.channels = c.channels;
  cfg.net.feature_dim = c.feature_dim;
  cfg.net.num_domains = new_manifest.num_domains();
  cfg.unlabeled_pairs = true;
  cfg.symmetric_gan = false;
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const std::vector<ResultEntry>& entries) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json j = {{"input", e.input.string()}, {"output", e.output.string()}};
    nlohmann::json cond = nlohmann::json::array();
    for (const auto& c : e.cond) cond.push_back(c.string());
    j["cond"] = cond;
    j["target_domain"] = e.target_domain ? nlohmann::json(*e.target_domain) : nlohmann::json();
    out.push_back(j);
  }
  return out;
}

void write_results_manifest(const fs::path& path, const std::vector<ResultEntry>& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(entries).dump(2) << "\n";
}

}  // namespace dosgan
