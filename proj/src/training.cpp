#include "dosgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace dosgan {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::NonConditional: return "nc";
    case TrainMode::Conditional: return "c";
    case TrainMode::AblationF: return "ablation_f";
    case TrainMode::AblationP: return "ablation_p";
    case TrainMode::NoIm: return "no_im";
    case TrainMode::NoDsFake: return "no_ds_fake";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "nc" || name == "nonconditional") return TrainMode::NonConditional;
  if (name == "c" || name == "conditional") return TrainMode::Conditional;
  if (name == "ablation_f") return TrainMode::AblationF;
  if (name == "ablation_p") return TrainMode::AblationP;
  if (name == "no_im") return TrainMode::NoIm;
  if (name == "no_ds_fake") return TrainMode::NoDsFake;
  throw Error("unknown training mode '" + name + "' (expected nc, c, ablation_f, ablation_p, no_im, no_ds_fake)");
}

bool is_conditional(TrainMode mode) { return mode == TrainMode::Conditional; }

LossWeights effective_weights(TrainMode mode, const LossWeights& w) {
  LossWeights e = w;
  if (mode == TrainMode::NoIm) e.lambda_im = 0;
  if (mode == TrainMode::NoDsFake) e.lambda_f = 0;
  return e;
}

void TrainConfig::validate() const {
  if (!(eta > 0) || !std::isfinite(eta)) throw Error("eta must be > 0");
  if (!(pretrain_eta > 0)) throw Error("pretrain_eta must be > 0");
  if (total_iters < 1) throw Error("total_iters must be >= 1");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (decay_interval_iters < 1) throw Error("decay_interval_iters must be >= 1");
  if (decay_start_iter < 0) throw Error("decay_start_iter must be >= 0");
  if (checkpoint_interval < 1 || log_interval < 1 || style_refresh_interval < 1)
    throw Error("checkpoint, log and style refresh intervals must be >= 1");
  if (keep_checkpoints < 1) throw Error("keep_checkpoints must be >= 1");
  if (pretrain_iters < 0 || pretrain_eval_interval < 1 || pretrain_patience < 1)
    throw Error("invalid pretraining budget");
  weights.validate();
}

Matrix<float> StyleTable::row(int domain) const {
  if (domain < 0 || domain >= styles.rows())
    throw Error("domain " + std::to_string(domain) + " has no style (table has " + std::to_string(styles.rows()) +
                " domains)");
  return styles.row(domain);
}

namespace {

constexpr int kEvalBatch = 64;

void require_geometry(const NetConfig& net, const DatasetManifest& m) {
  if (net.image_h != m.image_h || net.image_w != m.image_w || net.channels != m.channels)
    throw Error("network geometry " + describe(net) + " does not match dataset images " + std::to_string(m.channels) +
                "x" + std::to_string(m.image_h) + "x" + std::to_string(m.image_w));
}

template <typename Fn>
void for_each_chunk(const DatasetManifest& m, int domain, Fn&& fn) {
  const auto& images = m.domains[std::size_t(domain)].images;
  for (std::size_t first = 0; first < images.size(); first += kEvalBatch) {
    const std::size_t last = std::min(images.size(), first + kEvalBatch);
    std::vector<fs::path> chunk(images.begin() + std::ptrdiff_t(first), images.begin() + std::ptrdiff_t(last));
    fn(load_batch(m, chunk, domain));
  }
}

StyleTable style_means(const ClassifierNet<float>& classifier, const DatasetManifest& manifest) {
  StyleTable t;
  t.styles.resize(manifest.num_domains(), classifier.config().feature_dim);
  for (int d = 0; d < manifest.num_domains(); ++d) {
    RowVector<double> sum = RowVector<double>::Zero(classifier.config().feature_dim);
    std::size_t count = 0;
    for_each_chunk(manifest, d, [&](const ImageBatch& b) {
      const auto out = classifier.forward(b.pixels);
      sum += out.styles.cast<double>().colwise().sum();
      count += std::size_t(out.styles.rows());
    });
    t.styles.row(d) = (sum / double(count)).cast<float>();
    t.counts.push_back(count);
  }
  t.manifest_fingerprint = manifest.fingerprint();
  return t;
}

void check_finite_breakdown(const LossBreakdown& b, const char* phase) {
  if (!std::isfinite(b.gan) || !std::isfinite(b.ds_real) || !std::isfinite(b.ds_fake) || !std::isfinite(b.im) ||
      !std::isfinite(b.cls)) {
    std::ostringstream os;
    os << "non-finite loss during " << phase << " update: gan=" << b.gan << " ds_real=" << b.ds_real
       << " ds_fake=" << b.ds_fake << " im=" << b.im << " cls=" << b.cls;
    throw Error(os.str());
  }
}

Matrix<float> swap_halves(const Matrix<float>& m) {
  const Eigen::Index k = m.rows() / 2;
  Matrix<float> out(m.rows(), m.cols());
  out.topRows(k) = m.bottomRows(k);
  out.bottomRows(k) = m.topRows(k);
  return out;
}

/// Shared update for every objective. `x` holds the source images; targets
/// are the style rows each source is translated towards (one broadcast row,
/// per-image rows, or, when absent, the source styles with halves swapped).
/// `scale` turns batch means into per-direction sums for two-direction batches.
LossBreakdown translation_step(NetBundle& nets, const Tensor<float>& x, const std::vector<int>& labels,
                               const std::optional<Matrix<float>>& target_in, float scale, const LossWeights& w,
                               double eta, TrainMode mode, ClsTermForm cls_form) {
  const LossWeights ew = effective_weights(mode, w);
  const bool joint = mode == TrainMode::AblationP;
  if (!joint && !nets.classifier.frozen()) throw Error("the feature extractor must be frozen in mode " + to_string(mode));
  const auto wf = float(ew.lambda_f) * scale;
  const auto wi = float(ew.lambda_im) * scale;
  LossBreakdown b;

  Tape<float> alpha_tape;
  const ClassifierOutput<float> src = nets.classifier.forward(x, joint ? &alpha_tape : nullptr);
  const Matrix<float> target = target_in ? *target_in : swap_halves(src.styles);

  Tape<float> enc_tape;
  Tape<float> trans_tape;
  const Tensor<float> feat = nets.encoder.forward(x, &enc_tape);
  const Tensor<float> x_trans = nets.generator.forward(feat, target, &trans_tape);

  // Discriminator: minimize -gan + lambda_f * ds_real.
  {
    const ParameterList<float> dparams = nets.discriminator.parameters();
    zero_grad(dparams);
    Tape<float> real_tape;
    Tape<float> fake_tape;
    const auto real = nets.discriminator.forward(x, &real_tape);
    const auto fake = nets.discriminator.forward(x_trans, &fake_tape);
    auto adv = adversarial_loss(real.adv, fake.adv);
    b.gan = double(scale * adv.value);
    Matrix<float> real_feat_grad;
    if (mode != TrainMode::AblationF) {
      const auto dsr = ds_recon_real(real.feats, src.styles);
      b.ds_real = double(scale * dsr.value);
      real_feat_grad = float(ew.lambda_f) * scale * dsr.grad_pred;
    }
    check_finite_breakdown(b, "discriminator");
    adv.grad_real.data() *= -scale;
    adv.grad_fake.data() *= -scale;
    nets.discriminator.backward(adv.grad_real, real_feat_grad, real_tape);
    nets.discriminator.backward(adv.grad_fake, Matrix<float>(), fake_tape);
    nets.opt_d.step(dparams, eta);
  }

  // Encoder + generator (+ extractor when joint).
  const ParameterList<float> nparams = nets.net_parameters();
  zero_grad(nparams);
  ParameterList<float> aparams;
  if (joint) {
    aparams = nets.classifier.parameters();
    zero_grad(aparams);
  }

  Tape<float> gen_d_tape;
  const auto judged = nets.discriminator.forward(x_trans, &gen_d_tape);
  auto gadv = generator_adversarial_loss(judged.adv);
  gadv.grad_fake.data() *= scale;

  Tensor<float> dx_trans;
  if (mode == TrainMode::AblationF) {
    Tape<float> alpha_fake_tape;
    const auto af = nets.classifier.forward(x_trans, &alpha_fake_tape);
    const auto l = ablation_feat_loss(af.styles, target);
    b.ds_fake = double(scale * l.value);
    dx_trans = nets.discriminator.backward(gadv.grad_fake, Matrix<float>(), gen_d_tape, false);
    const Tensor<float> via_alpha = nets.classifier.backward(wf * l.grad_pred, Matrix<float>(), alpha_fake_tape);
    dx_trans.data() += via_alpha.data();
  } else {
    const auto l = ds_recon_fake(judged.feats, target);
    b.ds_fake = double(scale * l.value);
    dx_trans = nets.discriminator.backward(gadv.grad_fake, Matrix<float>(wf * l.grad_pred), gen_d_tape, false);
  }

  const bool im_active = wi > 0;
  Tape<float> self_tape;
  Tape<float> cyc_enc_tape;
  Tape<float> cyc_tape;
  const Tensor<float> x_self = nets.generator.forward(feat, src.styles, im_active ? &self_tape : nullptr);
  const Tensor<float> feat_trans = nets.encoder.forward(x_trans, im_active ? &cyc_enc_tape : nullptr);
  const Tensor<float> x_cycle = nets.generator.forward(feat_trans, src.styles, im_active ? &cyc_tape : nullptr);
  auto iml = image_recon_loss(x, x_self, x_cycle);
  b.im = double(scale * iml.value);

  Matrix<float> dstyle_src = Matrix<float>::Zero(src.styles.rows(), src.styles.cols());
  Tensor<float> dfeat;
  if (joint) {
    const auto cls = joint_cls_term(src.logits, labels, cls_form);
    b.cls = double(scale * cls.value);
  }
  check_finite_breakdown(b, "encoder/generator");

  if (im_active) {
    iml.grad_cycle.data() *= wi;
    const auto gc = nets.generator.backward(iml.grad_cycle, cyc_tape);
    dstyle_src += gc.styles;
    dx_trans.data() += nets.encoder.backward(gc.features, cyc_enc_tape).data();
    iml.grad_self.data() *= wi;
    const auto gs = nets.generator.backward(iml.grad_self, self_tape);
    dstyle_src += gs.styles;
    dfeat = gs.features;
  }
  const auto gt = nets.generator.backward(dx_trans, trans_tape);
  if (dfeat.size() > 0)
    dfeat.data() += gt.features.data();
  else
    dfeat = gt.features;
  nets.encoder.backward(dfeat, enc_tape);
  nets.opt_net.step(nparams, eta);

  if (joint) {
    auto cls = joint_cls_term(src.logits, labels, cls_form);
    nets.classifier.backward(dstyle_src, Matrix<float>(scale * cls.grad_logits), alpha_tape);
    nets.opt_alpha.step(aparams, eta);
  }

  assemble_totals(b, ew);
  return b;
}

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw Error("corrupt random state in checkpoint");
}

std::pair<int, int> pick_pair(int n, Rng& rng) {
  std::uniform_int_distribution<int> first(0, n - 1);
  std::uniform_int_distribution<int> second(0, n - 2);
  const int a = first(rng);
  int b = second(rng);
  if (b >= a) ++b;
  return {a, b};
}

void store_styles(Archive& a, const StyleTable& t) {
  a.blobs["styles"] = t.styles;
  a.meta["style_counts"] = t.counts;
  a.meta["style_fingerprint"] = t.manifest_fingerprint;
}


}  // namespace

std::optional<StyleTable> read_style_table(const Archive& a) {
  auto it = a.blobs.find("styles");
  if (it == a.blobs.end()) return std::nullopt;
  StyleTable t;
  t.styles = it->second;
  t.counts = a.meta.value("style_counts", std::vector<std::size_t>{});
  t.manifest_fingerprint = a.meta.value("style_fingerprint", std::uint64_t(0));
  return t;
}

double classifier_accuracy(const ClassifierNet<float>& classifier, const DatasetManifest& manifest) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (int d = 0; d < manifest.num_domains(); ++d) {
    for_each_chunk(manifest, d, [&](const ImageBatch& b) {
      const auto out = classifier.forward(b.pixels);
      for (Eigen::Index i = 0; i < out.logits.rows(); ++i) {
        Eigen::Index arg = 0;
        out.logits.row(i).maxCoeff(&arg);
        correct += arg == d;
        ++total;
      }
    });
  }
  return total ? double(correct) / double(total) : 0.0;
}

Matrix<float> extract_features(const ClassifierNet<float>& classifier, const DatasetManifest& manifest,
                               std::vector<int>* labels) {
  Matrix<float> out(Eigen::Index(manifest.total_images()), classifier.config().feature_dim);
  Eigen::Index row = 0;
  if (labels) labels->clear();
  for (int d = 0; d < manifest.num_domains(); ++d) {
    for_each_chunk(manifest, d, [&](const ImageBatch& b) {
      const auto o = classifier.forward(b.pixels);
      out.middleRows(row, o.styles.rows()) = o.styles;
      row += o.styles.rows();
      if (labels) labels->insert(labels->end(), b.labels.begin(), b.labels.end());
    });
  }
  return out;
}

StyleTable compute_domain_styles(const ClassifierNet<float>& classifier, const DatasetManifest& manifest) {
  if (!classifier.frozen()) throw Error("domain styles require a frozen feature extractor");
  require_geometry(classifier.config(), manifest);
  return style_means(classifier, manifest);
}

PretrainResult pretrain_classifier(const TrainConfig& cfg, const DatasetManifest& manifest) {
  cfg.validate();
  NetConfig net = cfg.net;
  net.num_domains = manifest.num_domains();
  require_geometry(net, manifest);
  Rng rng(cfg.seed);
  PretrainResult r{ClassifierNet<float>(net, rng), 0, 0, {}, {}, {}};
  if (!cfg.resume_from.empty()) {
    ClassifierCheckpoint ck = load_classifier_checkpoint(cfg.resume_from);
    if (!(ck.classifier.config() == net))
      throw Error("resume checkpoint network " + describe(ck.classifier.config()) + " differs from " + describe(net));
    if (!ck.optimizer || !ck.meta.contains("rng")) throw Error("classifier checkpoint has no training state to resume");
    r.classifier = std::move(ck.classifier);
    r.classifier.unfreeze();
    r.iterations = ck.meta.at("iterations").get<std::int64_t>();
    r.optimizer = std::move(*ck.optimizer);
    restore_rng(rng, ck.meta.at("rng").get<std::string>());
  } else {
    r.optimizer = Adam<float>(r.classifier.parameters());
  }
  const ParameterList<float> params = r.classifier.parameters();
  std::uniform_int_distribution<int> pick(0, manifest.num_domains() - 1);
  double best = -1;
  int stale = 0;
  for (std::int64_t it = r.iterations; it < cfg.pretrain_iters; ++it) {
    const int d = pick(rng);
    const ImageBatch batch = sample_batch(manifest, d, cfg.batch_size, rng);
    Tape<float> tape;
    const auto out = r.classifier.forward(batch.pixels, &tape);
    const auto loss = classification_loss(out.logits, batch.labels);
    if (!std::isfinite(loss.value))
      throw Error("classifier pretraining diverged at iteration " + std::to_string(it) + " (loss " +
                  std::to_string(loss.value) + ")");
    r.losses.push_back(loss.value);
    zero_grad(params);
    r.classifier.backward(Matrix<float>(), loss.grad_logits, tape);
    r.optimizer.step(params, cfg.pretrain_eta);
    r.iterations = it + 1;
    if ((it + 1) % cfg.pretrain_eval_interval == 0) {
      const double acc = classifier_accuracy(r.classifier, manifest);
      if (acc >= 1.0) break;
      if (acc > best) {
        best = acc;
        stale = 0;
      } else if (++stale >= cfg.pretrain_patience) {
        break;
      }
    }
  }
  r.train_accuracy = classifier_accuracy(r.classifier, manifest);
  r.rng_state = rng_state(rng);
  r.classifier.freeze();
  return r;
}

PretrainResult pretrain_classifier(const TrainConfig& cfg) {
  const DatasetManifest m = load_manifest(cfg.manifest_path, cfg.net.image_h, cfg.net.image_w, cfg.net.channels);
  return pretrain_classifier(cfg, m);
}

void save_classifier_checkpoint(const fs::path& path, const ClassifierNet<float>& classifier, const StyleTable* styles,
                                const nlohmann::json& extra) {
  Archive a;
  if (extra.is_object()) a.meta = extra;
  a.meta["kind"] = "classifier";
  a.meta["net_config"] = to_json(classifier.config());
  a.meta["frozen"] = classifier.frozen();
  store_parameters(a, "classifier", classifier.parameters());
  if (styles) store_styles(a, *styles);
  save_archive(path, a);
}

void save_classifier_checkpoint(const fs::path& path, const PretrainResult& result, const StyleTable* styles,
                                const nlohmann::json& extra) {
  Archive a;
  if (extra.is_object()) a.meta = extra;
  a.meta["kind"] = "classifier";
  a.meta["net_config"] = to_json(result.classifier.config());
  a.meta["frozen"] = true;
  a.meta["iterations"] = result.iterations;
  a.meta["train_accuracy"] = result.train_accuracy;
  a.meta["rng"] = result.rng_state;
  store_parameters(a, "classifier", result.classifier.parameters());
  store_optimizer(a, "opt_classifier", result.optimizer, result.classifier.parameters());
  if (styles) store_styles(a, *styles);
  save_archive(path, a);
}

ClassifierCheckpoint load_classifier_checkpoint(const fs::path& path) {
  const Archive a = load_archive(path);
  if (a.meta.value("kind", "") != "classifier") throw Error("not a classifier checkpoint: " + path.string());
  const NetConfig cfg = net_config_from_json(a.meta.at("net_config"));
  Rng rng(0);
  ClassifierCheckpoint c{ClassifierNet<float>(cfg, rng), read_style_table(a), a.meta, std::nullopt};
  restore_parameters(a, "classifier", c.classifier.unchecked_parameters());
  if (a.meta.contains("optimizers") && a.meta["optimizers"].contains("opt_classifier")) {
    Adam<float> opt;
    restore_optimizer(a, "opt_classifier", opt, c.classifier.unchecked_parameters());
    c.optimizer = std::move(opt);
  }
  c.classifier.freeze();
  return c;
}

NetBundle NetBundle::create(const NetConfig& cfg, ClassifierNet<float> classifier, Rng& rng) {
  const NetConfig& cc = classifier.config();
  if (cc.image_h != cfg.image_h || cc.image_w != cfg.image_w || cc.channels != cfg.channels ||
      cc.feature_dim != cfg.feature_dim)
    throw Error("feature extractor " + describe(cc) + " is incompatible with " + describe(cfg));
  NetBundle b;
  b.config = cfg;
  b.classifier = std::move(classifier);
  b.encoder = EncoderNet<float>(cfg, rng);
  b.generator = GeneratorNet<float>(cfg, rng);
  b.discriminator = DiscriminatorNet<float>(cfg, rng);
  b.opt_net = Adam<float>(b.net_parameters());
  b.opt_d = Adam<float>(b.discriminator.parameters());
  if (!b.classifier.frozen()) b.opt_alpha = Adam<float>(b.classifier.parameters());
  return b;
}

ParameterList<float> NetBundle::net_parameters() {
  ParameterList<float> out = encoder.parameters();
  const ParameterList<float> g = generator.parameters();
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

ConstParameterList<float> NetBundle::net_parameters() const {
  ConstParameterList<float> out = encoder.parameters();
  const ConstParameterList<float> g = generator.parameters();
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

LossBreakdown train_step_nc(NetBundle& nets, const StyleTable& styles, const ImageBatch& batch_a, int target_b,
                            const LossWeights& w, double eta, const StepOptions& opts, const ImageBatch* batch_b) {
  if (is_conditional(opts.mode)) throw Error("train_step_nc called with the conditional mode");
  if (batch_a.labels.empty()) throw Error("empty source batch");
  const int a = batch_a.labels.front();
  if (target_b < 0 || target_b >= styles.num_domains()) throw Error("target domain out of range");
  if (target_b == a) throw Error("source and target domains must differ");
  if (!opts.symmetric_gan) {
    return translation_step(nets, batch_a.pixels, batch_a.labels, styles.row(target_b), 1.0f, w, eta, opts.mode,
                            opts.cls_form);
  }
  if (!batch_b || batch_b->pixels.batch() != batch_a.pixels.batch())
    throw Error("symmetric adversarial term needs a target batch of equal size");
  const int k = batch_a.pixels.batch();
  const Tensor<float> x = concat_batch<float>({&batch_a.pixels, &batch_b->pixels});
  Matrix<float> target(2 * k, styles.styles.cols());
  target.topRows(k).rowwise() = styles.styles.row(target_b);
  target.bottomRows(k).rowwise() = styles.styles.row(a);
  std::vector<int> labels = batch_a.labels;
  labels.insert(labels.end(), batch_b->labels.begin(), batch_b->labels.end());
  return translation_step(nets, x, labels, target, 2.0f, w, eta, opts.mode, opts.cls_form);
}

LossBreakdown train_step_c(NetBundle& nets, const ImageBatch& batch_a, const ImageBatch& batch_b, const LossWeights& w,
                           double eta) {
  if (batch_a.pixels.batch() != batch_b.pixels.batch())
    throw Error("conditional step needs equal batch sizes, got " + std::to_string(batch_a.pixels.batch()) + " and " +
                std::to_string(batch_b.pixels.batch()));
  const Tensor<float> x = concat_batch<float>({&batch_a.pixels, &batch_b.pixels});
  std::vector<int> labels = batch_a.labels;
  labels.insert(labels.end(), batch_b.labels.begin(), batch_b.labels.end());
  return translation_step(nets, x, labels, std::nullopt, 2.0f, w, eta, TrainMode::Conditional,
                          ClsTermForm::NegLogProb);
}

double lr_schedule(std::int64_t iter, const TrainConfig& cfg) {
  if (iter < cfg.decay_start_iter) return cfg.eta;
  if (iter >= cfg.total_iters) return 0.0;
  const double span = double(cfg.total_iters - cfg.decay_start_iter);
  const std::int64_t stepped = ((iter - cfg.decay_start_iter) / cfg.decay_interval_iters) * cfg.decay_interval_iters;
  return std::max(0.0, cfg.eta * (1.0 - double(stepped) / span));
}

nlohmann::json to_json(const LossBreakdown& b, std::int64_t iter, double lr) {
  nlohmann::json j = {{"iter", iter},           {"gan", b.gan},         {"ds_real", b.ds_real},
                      {"ds_fake", b.ds_fake},   {"im", b.im},           {"total_net", b.total_net},
                      {"total_d", b.total_d},   {"lr", lr}};
  if (b.cls != 0) j["cls"] = b.cls;
  return j;
}

nlohmann::json to_json(const StyleTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.styles.rows(); ++i) {
    std::vector<float> r(t.styles.row(i).data(), t.styles.row(i).data() + 0);
    for (Eigen::Index j = 0; j < t.styles.cols(); ++j) r.push_back(t.styles(i, j));
    rows.push_back(r);
  }
  return {{"styles", rows}, {"counts", t.counts}, {"manifest_fingerprint", t.manifest_fingerprint}};
}

void save_bundle(const fs::path& path, const NetBundle& nets, const StyleTable* styles, const nlohmann::json& extra) {
  Archive a;
  if (extra.is_object()) a.meta = extra;
  a.meta["kind"] = "translator";
  a.meta["net_config"] = to_json(nets.config);
  a.meta["classifier_config"] = to_json(nets.classifier.config());
  a.meta["classifier_frozen"] = nets.classifier.frozen();
  a.meta["iteration"] = nets.iteration;
  store_parameters(a, "classifier", nets.classifier.parameters());
  store_parameters(a, "encoder", nets.encoder.parameters());
  store_parameters(a, "generator", nets.generator.parameters());
  store_parameters(a, "discriminator", nets.discriminator.parameters());
  store_optimizer(a, "opt_net", nets.opt_net, nets.net_parameters());
  store_optimizer(a, "opt_d", nets.opt_d, nets.discriminator.parameters());
  if (!nets.classifier.frozen()) store_optimizer(a, "opt_alpha", nets.opt_alpha, nets.classifier.parameters());
  if (styles) store_styles(a, *styles);
  save_archive(path, a);
}

NetBundle load_bundle(const Archive& a) {
  if (a.meta.value("kind", "") != "translator") throw Error("checkpoint does not hold a translation model");
  const NetConfig cfg = net_config_from_json(a.meta.at("net_config"));
  const NetConfig ccfg = net_config_from_json(a.meta.at("classifier_config"));
  Rng rng(0);
  ClassifierNet<float> classifier(ccfg, rng);
  restore_parameters(a, "classifier", classifier.unchecked_parameters());
  const bool frozen = a.meta.value("classifier_frozen", true);
  if (frozen) classifier.freeze();
  NetBundle b = NetBundle::create(cfg, std::move(classifier), rng);
  restore_parameters(a, "encoder", b.encoder.parameters());
  restore_parameters(a, "generator", b.generator.parameters());
  restore_parameters(a, "discriminator", b.discriminator.parameters());
  restore_optimizer(a, "opt_net", b.opt_net, b.net_parameters());
  restore_optimizer(a, "opt_d", b.opt_d, b.discriminator.parameters());
  if (!frozen) restore_optimizer(a, "opt_alpha", b.opt_alpha, b.classifier.parameters());
  b.iteration = a.meta.at("iteration").get<std::int64_t>();
  return b;
}

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest) {
  cfg.validate();
  NetConfig net = cfg.net;
  net.num_domains = manifest.num_domains();
  require_geometry(net, manifest);
  const bool joint = cfg.mode == TrainMode::AblationP;
  const bool conditional = is_conditional(cfg.mode);
  if (conditional && cfg.symmetric_gan) throw Error("symmetric_gan applies to domain-style modes only");

  Rng init_rng(cfg.seed);
  Rng loop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);

  ClassifierNet<float> classifier;
  std::optional<StyleTable> stored_styles;
  if (joint) {
    classifier = ClassifierNet<float>(net, init_rng);
  } else {
    if (cfg.classifier_ckpt.empty() || !fs::exists(cfg.classifier_ckpt))
      throw Error("no classifier checkpoint at '" + cfg.classifier_ckpt.string() + "': run pretrain first");
    ClassifierCheckpoint ck = load_classifier_checkpoint(cfg.classifier_ckpt);
    classifier = std::move(ck.classifier);
    stored_styles = std::move(ck.styles);
    if (!conditional && !stored_styles)
      throw Error("classifier checkpoint has no style table: run pretrain first");
    net.feature_dim = classifier.config().feature_dim;
  }

  NetBundle nets = NetBundle::create(net, std::move(classifier), init_rng);
  std::int64_t start = 0;
  double best_im = std::numeric_limits<double>::infinity();
  if (!cfg.resume_from.empty()) {
    const Archive a = load_archive(cfg.resume_from);
    if (a.meta.value("mode", "") != to_string(cfg.mode))
      throw Error("checkpoint was trained in mode '" + a.meta.value("mode", "") + "', not '" + to_string(cfg.mode) + "'");
    nets = load_bundle(a);
    if (!a.meta.contains("rng")) throw Error("checkpoint has no random state; cannot resume");
    restore_rng(loop_rng, a.meta.at("rng").get<std::string>());
    start = nets.iteration;
    best_im = a.meta.value("best_im", best_im);
  }

  StyleTable styles;
  if (joint) {
    styles = style_means(nets.classifier, manifest);
  } else if (!conditional) {
    styles = compute_domain_styles(nets.classifier, manifest);
    if (stored_styles && stored_styles->manifest_fingerprint == styles.manifest_fingerprint &&
        stored_styles->styles != styles.styles)
      throw Error("style table recomputed from the frozen extractor differs from the stored one");
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream log(cfg.out_dir / "train_log.jsonl", start > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot write training log in " + cfg.out_dir.string());

  std::vector<fs::path> kept;
  auto meta_for = [&](std::int64_t) {
    nlohmann::json m = {{"mode", to_string(cfg.mode)}, {"rng", rng_state(loop_rng)}, {"seed", cfg.seed},
                        {"best_im", std::isfinite(best_im) ? nlohmann::json(best_im) : nlohmann::json()}};
    if (!std::isfinite(best_im)) m.erase("best_im");
    return m;
  };
  const StyleTable* table_ptr = conditional ? nullptr : &styles;

  TrainResult result;
  result.start_iter = start;
  const StepOptions opts{cfg.mode, cfg.symmetric_gan, cfg.cls_form};
  std::vector<double> window_im;
  for (std::int64_t it = start; it < cfg.total_iters; ++it) {
    const double lr = lr_schedule(it, cfg);
    if (joint && it > start && it % cfg.style_refresh_interval == 0) styles = style_means(nets.classifier, manifest);

    LossBreakdown br;
    if (conditional) {
      ImageBatch a;
      ImageBatch b;
      if (cfg.unlabeled_pairs) {
        a = sample_pooled_batch(manifest, cfg.batch_size, loop_rng);
        b = sample_pooled_batch(manifest, cfg.batch_size, loop_rng);
      } else {
        const auto [da, db] = pick_pair(manifest.num_domains(), loop_rng);
        a = sample_batch(manifest, da, cfg.batch_size, loop_rng);
        b = sample_batch(manifest, db, cfg.batch_size, loop_rng);
      }
      br = train_step_c(nets, a, b, cfg.weights, lr);
    } else {
      const auto [da, db] = pick_pair(manifest.num_domains(), loop_rng);
      const ImageBatch a = sample_batch(manifest, da, cfg.batch_size, loop_rng);
      if (cfg.symmetric_gan) {
        const ImageBatch b = sample_batch(manifest, db, cfg.batch_size, loop_rng);
        br = train_step_nc(nets, styles, a, db, cfg.weights, lr, opts, &b);
      } else {
        br = train_step_nc(nets, styles, a, db, cfg.weights, lr, opts);
      }
    }
    nets.iteration = it + 1;
    result.history.push_back(br);
    window_im.push_back(br.im);
    if (it % cfg.log_interval == 0) log << to_json(br, it, lr).dump() << "\n" << std::flush;

    const bool last = it + 1 == cfg.total_iters;
    if ((it + 1) % cfg.checkpoint_interval == 0 || last) {
      const double mean_im = std::accumulate(window_im.begin(), window_im.end(), 0.0) / double(window_im.size());
      window_im.clear();
      const fs::path path = cfg.out_dir / ("ckpt_" + std::to_string(it + 1) + ".ckpt");
      if (mean_im < best_im) {
        best_im = mean_im;
        save_bundle(cfg.out_dir / "best.ckpt", nets, table_ptr, meta_for(it));
      }
      save_bundle(path, nets, table_ptr, meta_for(it));
      result.checkpoint = path;
      kept.push_back(path);
      while (int(kept.size()) > cfg.keep_checkpoints) {
        std::error_code ec;
        if (!last || kept.front() != path) fs::remove(kept.front(), ec);
        kept.erase(kept.begin());
      }
    }
  }
  if (result.checkpoint.empty()) {
    // resumed at or past the end: the resume checkpoint is the final one
    result.checkpoint = cfg.resume_from;
  }
  return result;
}

TrainResult train(const TrainConfig& cfg) {
  const DatasetManifest m = load_manifest(cfg.manifest_path, cfg.net.image_h, cfg.net.image_w, cfg.net.channels);
  return train(cfg, m);
}

}  // namespace dosgan
