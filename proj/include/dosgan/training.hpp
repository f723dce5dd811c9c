#pragma once

#include "dosgan/checkpoint.hpp"
#include "dosgan/data.hpp"
#include "dosgan/losses.hpp"
#include "dosgan/networks.hpp"
#include "dosgan/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dosgan {

/// Which objective the translation loop optimizes.
enum class TrainMode {
  NonConditional,  ///< domain-mean target styles
  Conditional,     ///< per-image target styles, both directions
  AblationF,       ///< feature loss through the extractor, no real-image feature loss
  AblationP,       ///< extractor trained jointly with a classification term
  NoIm,            ///< image reconstruction removed
  NoDsFake,        ///< fake-image feature reconstruction removed
};

std::string to_string(TrainMode mode);
/// Accepts nc, c, ablation_f, ablation_p, no_im, no_ds_fake (and the long
/// names nonconditional, conditional).
TrainMode parse_train_mode(const std::string& name);
bool is_conditional(TrainMode mode);

/// The weights a mode actually applies (removed terms get weight 0).
LossWeights effective_weights(TrainMode mode, const LossWeights& w);

struct TrainConfig {
  std::filesystem::path manifest_path;   ///< dataset root (one directory per domain)
  TrainMode mode = TrainMode::NonConditional;
  NetConfig net;
  LossWeights weights;
  int batch_size = 16;                   ///< K
  double eta = 1e-4;
  std::int64_t total_iters = 100000;
  std::int64_t decay_start_iter = 100000;
  std::int64_t decay_interval_iters = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path classifier_ckpt;  ///< pretrained extractor (all modes but AblationP)
  std::filesystem::path out_dir;          ///< checkpoints and train_log.jsonl
  std::filesystem::path resume_from;      ///< optional translation checkpoint
  std::int64_t checkpoint_interval = 1000;
  int keep_checkpoints = 3;
  std::int64_t log_interval = 100;
  std::int64_t style_refresh_interval = 1000;
  bool symmetric_gan = false;             ///< also translate B->A with domain styles
  ClsTermForm cls_form = ClsTermForm::NegLogProb;
  bool unlabeled_pairs = false;           ///< conditional: draw both batches from all images

  std::int64_t pretrain_iters = 2000;
  double pretrain_eta = 1e-4;
  std::int64_t pretrain_eval_interval = 250;
  int pretrain_patience = 4;  ///< evaluations without improvement before stopping

  void validate() const;
};

/// Per-domain mean extractor features.
struct StyleTable {
  Matrix<float> styles;             ///< [N, F]
  std::vector<std::size_t> counts;  ///< images averaged per domain
  std::uint64_t manifest_fingerprint = 0;

  Matrix<float> row(int domain) const;
  int num_domains() const { return int(styles.rows()); }
};

struct PretrainResult {
  ClassifierNet<float> classifier;  ///< frozen
  double train_accuracy = 0;
  std::int64_t iterations = 0;  ///< total, including iterations before a resume
  std::vector<double> losses;   ///< this run only
  Adam<float> optimizer;
  std::string rng_state;
};

/// Trains the domain classifier by minibatch negative log-likelihood on
/// single-domain batches, then freezes it. With cfg.resume_from set to a
/// classifier checkpoint, training continues from its iteration counter.
PretrainResult pretrain_classifier(const TrainConfig& cfg, const DatasetManifest& manifest);
PretrainResult pretrain_classifier(const TrainConfig& cfg);

/// Top-1 accuracy of the classifier over every image of the manifest.
double classifier_accuracy(const ClassifierNet<float>& classifier, const DatasetManifest& manifest);

/// Extractor features of every image of a manifest, row i per image in
/// manifest order; labels alongside.
Matrix<float> extract_features(const ClassifierNet<float>& classifier, const DatasetManifest& manifest,
                               std::vector<int>* labels = nullptr);

/// Mean extractor output over each domain's images. Requires a frozen classifier.
StyleTable compute_domain_styles(const ClassifierNet<float>& classifier, const DatasetManifest& manifest);

void save_classifier_checkpoint(const std::filesystem::path& path, const ClassifierNet<float>& classifier,
                                const StyleTable* styles, const nlohmann::json& extra = {});
/// Also stores the optimizer state, iteration counter and random state for resuming.
void save_classifier_checkpoint(const std::filesystem::path& path, const PretrainResult& result,
                                const StyleTable* styles, const nlohmann::json& extra = {});
struct ClassifierCheckpoint {
  ClassifierNet<float> classifier;  ///< frozen
  std::optional<StyleTable> styles;
  nlohmann::json meta;
  std::optional<Adam<float>> optimizer;
};
ClassifierCheckpoint load_classifier_checkpoint(const std::filesystem::path& path);

/// The four networks plus optimizer state owned by one training driver.
struct NetBundle {
  NetConfig config;
  ClassifierNet<float> classifier;
  EncoderNet<float> encoder;
  GeneratorNet<float> generator;
  DiscriminatorNet<float> discriminator;
  Adam<float> opt_net;
  Adam<float> opt_d;
  Adam<float> opt_alpha;
  std::int64_t iteration = 0;

  /// Fresh encoder/generator/discriminator around an existing classifier.
  static NetBundle create(const NetConfig& cfg, ClassifierNet<float> classifier, Rng& rng);

  /// Encoder then generator parameters.
  ParameterList<float> net_parameters();
  ConstParameterList<float> net_parameters() const;
};

struct StepOptions {
  TrainMode mode = TrainMode::NonConditional;
  bool symmetric_gan = false;
  ClsTermForm cls_form = ClsTermForm::NegLogProb;
};

/// One update of each side for the domain-style objective: discriminator
/// first, then encoder+generator (and the extractor in AblationP mode).
/// `batch_b` is only used with symmetric_gan.
LossBreakdown train_step_nc(NetBundle& nets, const StyleTable& styles, const ImageBatch& batch_a, int target_b,
                            const LossWeights& w, double eta, const StepOptions& opts = {},
                            const ImageBatch* batch_b = nullptr);

/// One update of each side for the conditional objective. Batches must have
/// equal size.
LossBreakdown train_step_c(NetBundle& nets, const ImageBatch& batch_a, const ImageBatch& batch_b,
                           const LossWeights& w, double eta);

/// eta until decay_start_iter, then a linear decay to 0 at total_iters,
/// stepped every decay_interval_iters.
double lr_schedule(std::int64_t iter, const TrainConfig& cfg);

struct TrainResult {
  std::filesystem::path checkpoint;      ///< final checkpoint
  std::int64_t start_iter = 0;           ///< > 0 when resumed
  std::vector<LossBreakdown> history;    ///< one entry per iteration run
};

/// Full translation training loop with logging and checkpointing.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest);
TrainResult train(const TrainConfig& cfg);

/// Builds a bundle from a translation checkpoint (all networks and state).
NetBundle load_bundle(const Archive& archive);
void save_bundle(const std::filesystem::path& path, const NetBundle& nets, const StyleTable* styles,
                 const nlohmann::json& extra = {});

/// The style table stored in a checkpoint, if any.
std::optional<StyleTable> read_style_table(const Archive& archive);

nlohmann::json to_json(const LossBreakdown& b, std::int64_t iter, double lr);
nlohmann::json to_json(const StyleTable& t);

}  // namespace dosgan
