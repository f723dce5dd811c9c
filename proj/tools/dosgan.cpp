#include "dosgan/evaluation.hpp"
#include "dosgan/image_io.hpp"
#include "dosgan/inference.hpp"
#include "dosgan/training.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace dosgan;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

struct NetFlags {
  int image_size = 128;
  int channels = 3;
  int feature_dim = 1024;
  int base_width = 64;
  int residual_blocks = 3;
  int downsample_stages = 6;

  void add(CLI::App* app) {
    app->add_option("--image-size", image_size, "Square image side in pixels")->capture_default_str();
    app->add_option("--channels", channels, "Image channels (1 or 3)")->capture_default_str();
    app->add_option("--feature-dim", feature_dim, "Domain-specific feature width")->capture_default_str();
    app->add_option("--base-width", base_width, "Base channel width of every network")->capture_default_str();
    app->add_option("--residual-blocks", residual_blocks, "Residual blocks in encoder and generator")
        ->capture_default_str();
    app->add_option("--downsample-stages", downsample_stages, "Stride-2 stages of classifier and discriminator")
        ->capture_default_str();
  }
  NetConfig config() const {
    NetConfig c;
    c.image_h = c.image_w = image_size;
    c.channels = channels;
    c.feature_dim = feature_dim;
    c.base_width = base_width;
    c.residual_blocks = residual_blocks;
    c.downsample_stages = downsample_stages;
    return c;
  }
};

/// Values from a flat key=value file become `--key=value` arguments placed
/// ahead of the command line, so explicit flags take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const std::set<std::string>& subcommands) {
  std::vector<std::string> out;
  std::vector<std::string> file_args;
  std::size_t sub_pos = args.size();
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    std::string path;
    if (a == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config needs a file");
      path = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    } else {
      if (sub_pos == args.size() && subcommands.count(a)) sub_pos = out.size();
      out.push_back(a);
      continue;
    }
    std::ifstream in(path);
    if (!in) throw CLI::FileError::Missing(path);
    for (const auto& item : CLI::ConfigINI().from_config(in)) {
      if (item.name == "++" || item.name == "--") continue;
      std::string key = item.name;
      for (char& ch : key)
        if (ch == '_') ch = '-';
      std::string value;
      for (std::size_t j = 0; j < item.inputs.size(); ++j) value += (j ? "," : "") + item.inputs[j];
      file_args.push_back("--" + key + "=" + value);
    }
  }
  if (!file_args.empty()) {
    if (sub_pos == out.size()) throw CLI::RequiredError("a subcommand");
    out.insert(out.begin() + std::ptrdiff_t(sub_pos) + 1, file_args.begin(), file_args.end());
  }
  return out;
}

Tensor<float> read_image(const fs::path& path, const NetConfig& c) {
  const auto pixels = decode_image(path, c.image_h, c.image_w, c.channels);
  if (!pixels) throw Error("cannot decode image " + path.string());
  Tensor<float> t(Shape4{1, c.channels, c.image_h, c.image_w});
  std::copy(pixels->begin(), pixels->end(), t.ptr());
  return t;
}

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file()) files.push_back(e.path());
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.emplace_back(in);
    }
  }
  if (out.empty()) throw Error("no input images");
  return out;
}

void print_manifest(const DatasetManifest& m) {
  std::cout << "dataset " << m.root.string() << ": " << m.num_domains() << " domains, " << m.total_images()
            << " images, " << m.channels << "x" << m.image_h << "x" << m.image_w << "\n";
  for (const auto& d : m.domains) std::cout << "  " << d.name << " " << d.images.size() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-supervised multi-domain image translation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  app.footer("Any subcommand accepts --config FILE with key=value lines named after its flags; flags win.");

  std::uint64_t seed = 0;
  fs::path out;

  // synth
  SyntheticSpec synth_spec;
  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-domain dataset");
  synth->add_option("--domains", synth_spec.num_domains, "Number of domains")->capture_default_str();
  synth->add_option("--per-domain", synth_spec.per_domain, "Images per domain")->capture_default_str();
  synth->add_option("--size", synth_spec.image_size, "Image side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", synth_spec.out, "Output directory")->required();

  // pretrain
  TrainConfig pre_cfg;
  NetFlags pre_net;
  double holdout = 0;
  auto* pretrain = app.add_subcommand("pretrain", "Train and freeze the domain classifier, then compute domain styles");
  pretrain->add_option("--data", pre_cfg.manifest_path, "Dataset root with one directory per domain")->required();
  pretrain->add_option("--out", out, "Output directory")->required();
  pretrain->add_option("--seed", seed, "Random seed")->capture_default_str();
  pre_net.add(pretrain);
  pretrain->add_option("--batch-size", pre_cfg.batch_size, "Images per batch")->capture_default_str();
  pretrain->add_option("--iters", pre_cfg.pretrain_iters, "Iteration budget")->capture_default_str();
  pretrain->add_option("--eta", pre_cfg.pretrain_eta, "Adam learning rate")->capture_default_str();
  pretrain->add_option("--eval-interval", pre_cfg.pretrain_eval_interval, "Iterations between accuracy checks")
      ->capture_default_str();
  pretrain->add_option("--patience", pre_cfg.pretrain_patience, "Checks without improvement before stopping")
      ->capture_default_str();
  pretrain->add_option("--holdout", holdout, "Fraction of each domain held out for an accuracy report")
      ->capture_default_str();
  pretrain->add_option("--resume", pre_cfg.resume_from, "Classifier checkpoint to continue from");

  // train
  TrainConfig train_cfg;
  NetFlags train_net;
  std::string mode_name = "nc";
  std::string cls_form = "neg_log_prob";
  auto* train_cmd = app.add_subcommand("train", "Train the encoder, generator and discriminator");
  train_cmd->add_option("--data", train_cfg.manifest_path, "Dataset root with one directory per domain")->required();
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--mode", mode_name, "nc, c, ablation_f, ablation_p, no_im or no_ds_fake")->capture_default_str();
  train_cmd->add_option("--classifier", train_cfg.classifier_ckpt, "Pretrained classifier checkpoint");
  train_cmd->add_option("--resume", train_cfg.resume_from, "Translation checkpoint to continue from");
  train_net.add(train_cmd);
  train_cmd->add_option("--batch-size", train_cfg.batch_size, "Images per domain per batch")->capture_default_str();
  train_cmd->add_option("--iters", train_cfg.total_iters, "Total iterations")->capture_default_str();
  train_cmd->add_option("--eta", train_cfg.eta, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--decay-start", train_cfg.decay_start_iter, "Iteration where linear decay begins")
      ->capture_default_str();
  train_cmd->add_option("--decay-interval", train_cfg.decay_interval_iters, "Iterations per decay step")
      ->capture_default_str();
  train_cmd->add_option("--lambda-f", train_cfg.weights.lambda_f, "Feature reconstruction weight")->capture_default_str();
  train_cmd->add_option("--lambda-im", train_cfg.weights.lambda_im, "Image reconstruction weight")->capture_default_str();
  train_cmd->add_option("--checkpoint-interval", train_cfg.checkpoint_interval, "Iterations between checkpoints")
      ->capture_default_str();
  train_cmd->add_option("--keep", train_cfg.keep_checkpoints, "Periodic checkpoints kept")->capture_default_str();
  train_cmd->add_option("--log-interval", train_cfg.log_interval, "Iterations between log lines")->capture_default_str();
  train_cmd->add_option("--style-refresh", train_cfg.style_refresh_interval, "Style table refresh in ablation_p")
      ->capture_default_str();
  train_cmd->add_flag("--symmetric-gan", train_cfg.symmetric_gan, "Also translate target images back to the source");
  train_cmd->add_option("--cls-form", cls_form, "ablation_p classification term: neg_log_prob or neg_prob")
      ->capture_default_str();
  train_cmd->add_flag("--unlabeled-pairs", train_cfg.unlabeled_pairs, "Conditional mode: draw pairs from all images");

  // translate
  fs::path ckpt;
  std::vector<std::string> inputs;
  std::optional<int> target_domain;
  fs::path cond_path;
  bool reconstruct = false;
  auto* translate = app.add_subcommand("translate", "Translate images with a trained checkpoint");
  translate->add_option("--checkpoint", ckpt, "Translation checkpoint")->required()->check(CLI::ExistingFile);
  translate->add_option("--input", inputs, "Image files or directories")->required();
  auto* target_opt = translate->add_option("--target-domain", target_domain, "Target domain index");
  auto* cond_opt = translate->add_option("--cond", cond_path, "Image supplying the target style")->check(CLI::ExistingFile);
  auto* recon_opt = translate->add_flag("--reconstruct", reconstruct, "Reconstruct with each input's own style");
  target_opt->excludes(cond_opt)->excludes(recon_opt);
  cond_opt->excludes(recon_opt);
  translate->add_option("--out", out, "Output directory")->required();

  // interpolate
  fs::path cond1;
  fs::path cond2;
  int steps = 8;
  std::string interp_input;
  auto* interpolate = app.add_subcommand("interpolate", "Interpolate between the styles of two condition images");
  interpolate->add_option("--checkpoint", ckpt, "Translation checkpoint")->required()->check(CLI::ExistingFile);
  interpolate->add_option("--input", interp_input, "Source image")->required()->check(CLI::ExistingFile);
  interpolate->add_option("--cond1", cond1, "First style image")->required()->check(CLI::ExistingFile);
  interpolate->add_option("--cond2", cond2, "Second style image")->required()->check(CLI::ExistingFile);
  interpolate->add_option("--steps", steps, "Frames including both endpoints")->capture_default_str();
  interpolate->add_option("--out", out, "Output directory")->required();

  // evaluate
  EvalRequest req;
  std::string protocol = "identity_topk";
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint with one evaluation protocol");
  evaluate->add_option("--checkpoint", req.checkpoint, "Translation checkpoint")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--data", req.test_root, "Test dataset root")->required();
  evaluate->add_option("--evaluator", req.evaluator_ckpt, "Independently trained classifier checkpoint");
  evaluate->add_option("--protocol", protocol, "identity_topk, attribute_error, fid_set or paired_psnr_ssim")
      ->capture_default_str();
  evaluate->add_option("--k", req.ks, "Comma-separated k values for top-k")->delimiter(',')->capture_default_str();
  evaluate->add_flag("--conditional", req.conditional, "Use a random target image's style instead of the domain style");
  evaluate->add_option("--batch-size", req.batch, "Images per forward pass")->capture_default_str();
  evaluate->add_option("--seed", seed, "Random seed for target assignment")->capture_default_str();
  evaluate->add_option("--out", out, "Output directory")->required();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args, {"synth", "pretrain", "train", "translate", "interpolate", "evaluate"});
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (synth->parsed()) {
      const DatasetManifest m = make_synthetic_domains(synth_spec);
      print_manifest(m);
      std::cout << "factors " << (synth_spec.out / "factors.tsv").string() << "\n";
    } else if (pretrain->parsed()) {
      pre_cfg.net = pre_net.config();
      pre_cfg.seed = seed;
      const DatasetManifest all =
          load_manifest(pre_cfg.manifest_path, pre_cfg.net.image_h, pre_cfg.net.image_w, pre_cfg.net.channels);
      print_manifest(all);
      DatasetManifest train_set = all;
      std::optional<DatasetManifest> held;
      if (holdout > 0) {
        Rng split_rng(seed);
        auto [tr, te] = split_train_test(all, holdout, split_rng);
        train_set = std::move(tr);
        held = std::move(te);
      }
      const PretrainResult r = pretrain_classifier(pre_cfg, train_set);
      const StyleTable styles = compute_domain_styles(r.classifier, train_set);
      fs::create_directories(out);
      nlohmann::json extra = {{"seed", seed}, {"dataset", all.root.string()}};
      std::cout << "iterations " << r.iterations << " train_accuracy " << r.train_accuracy;
      if (held) {
        const double acc = classifier_accuracy(r.classifier, *held);
        extra["heldout_accuracy"] = acc;
        std::cout << " heldout_accuracy " << acc;
      }
      std::cout << "\n";
      save_classifier_checkpoint(out / "classifier.ckpt", r, &styles, extra);
      std::ofstream(out / "styles.json") << to_json(styles).dump() << "\n";
      std::cout << "checkpoint " << (out / "classifier.ckpt").string() << "\n";
    } else if (train_cmd->parsed()) {
      train_cfg.net = train_net.config();
      train_cfg.seed = seed;
      train_cfg.out_dir = out;
      train_cfg.mode = parse_train_mode(mode_name);
      if (cls_form == "neg_log_prob")
        train_cfg.cls_form = ClsTermForm::NegLogProb;
      else if (cls_form == "neg_prob")
        train_cfg.cls_form = ClsTermForm::NegProb;
      else
        throw Error("unknown --cls-form '" + cls_form + "' (expected neg_log_prob or neg_prob)");
      if (train_cfg.mode != TrainMode::AblationP && train_cfg.classifier_ckpt.empty())
        throw Error("mode " + mode_name + " needs --classifier: run pretrain first");
      if (train_cfg.mode != TrainMode::AblationP && !train_cfg.classifier_ckpt.empty()) {
        const ClassifierCheckpoint ck = load_classifier_checkpoint(train_cfg.classifier_ckpt);
        train_cfg.net.feature_dim = ck.classifier.config().feature_dim;
        if (!is_conditional(train_cfg.mode) && !ck.styles)
          throw Error("classifier checkpoint has no style table: run pretrain first");
      }
      const TrainResult r = train(train_cfg);
      const LossBreakdown& last = r.history.empty() ? LossBreakdown{} : r.history.back();
      std::cout << "iterations " << r.start_iter << ".." << train_cfg.total_iters << " final "
                << to_json(last, train_cfg.total_iters - 1, lr_schedule(train_cfg.total_iters - 1, train_cfg)).dump()
                << "\ncheckpoint " << r.checkpoint.string() << "\n";
    } else if (translate->parsed()) {
      const TranslatorHandle h = load_translator(ckpt);
      const auto files = expand_inputs(inputs);
      if (!target_domain && cond_path.empty() && !reconstruct)
        throw CLI::RequiredError("--target-domain, --cond or --reconstruct");
      std::optional<Tensor<float>> cond;
      if (!cond_path.empty()) cond = read_image(cond_path, h.config());
      std::vector<ResultEntry> results;
      for (const auto& f : files) {
        const Tensor<float> x = read_image(f, h.config());
        ResultEntry e{f, {}, std::nullopt, {}};
        Tensor<float> y;
        std::string suffix;
        if (target_domain) {
          y = h.translate(x, *target_domain);
          e.target_domain = *target_domain;
          suffix = "_to_" + std::to_string(*target_domain);
        } else if (cond) {
          y = h.translate_conditional(x, *cond);
          e.cond.push_back(cond_path);
          suffix = "_as_" + cond_path.stem().string();
        } else {
          y = h.reconstruct(x);
          suffix = "_recon";
        }
        e.output = out / (f.stem().string() + suffix + ".png");
        write_png(e.output, y, 0);
        results.push_back(e);
      }
      write_results_manifest(out / "results.json", results);
      std::cout << "wrote " << results.size() << " images to " << out.string() << "\n";
    } else if (interpolate->parsed()) {
      const TranslatorHandle h = load_translator(ckpt);
      const auto frames = h.interpolate(read_image(interp_input, h.config()), read_image(cond1, h.config()),
                                        read_image(cond2, h.config()), steps);
      std::vector<ResultEntry> results;
      for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%02zu.png", i);
        write_png(out / name, frames[i], 0);
        results.push_back({interp_input, {cond1, cond2}, std::nullopt, out / name});
      }
      write_png_row(out / "grid.png", frames);
      results.push_back({interp_input, {cond1, cond2}, std::nullopt, out / "grid.png"});
      write_results_manifest(out / "results.json", results);
      std::cout << "wrote " << frames.size() << " frames and " << (out / "grid.png").string() << "\n";
    } else if (evaluate->parsed()) {
      req.protocol = parse_protocol(protocol);
      req.seed = seed;
      const MetricReport r = evaluate_translation(req);
      fs::create_directories(out);
      std::ofstream(out / "report.json") << r.to_json().dump(2) << "\n";
      std::ofstream(out / "report.csv") << r.to_csv();
      std::cout << r.to_json().dump(2) << "\n";
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return 0;
}
