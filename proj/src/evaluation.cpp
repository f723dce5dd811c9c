#include "dosgan/evaluation.hpp"

#include <iomanip>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace dosgan {

double topk_accuracy(const ClassifierNet<float>& evaluator, const Tensor<float>& images, const std::vector<int>& targets,
                     int k) {
  return topk_accuracy(evaluator.forward(images).logits, targets, k);
}

double classification_error_rate(const ClassifierNet<float>& evaluator, const Tensor<float>& images,
                                 const std::vector<int>& targets) {
  return 1.0 - topk_accuracy(evaluator, images, targets, 1);
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::IdentityTopK: return "identity_topk";
    case Protocol::AttributeError: return "attribute_error";
    case Protocol::FidSet: return "fid_set";
    case Protocol::PairedPsnrSsim: return "paired_psnr_ssim";
  }
  return "?";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "identity_topk") return Protocol::IdentityTopK;
  if (name == "attribute_error") return Protocol::AttributeError;
  if (name == "fid_set") return Protocol::FidSet;
  if (name == "paired_psnr_ssim") return Protocol::PairedPsnrSsim;
  throw Error("unknown protocol '" + name + "' (expected identity_topk, attribute_error, fid_set, paired_psnr_ssim)");
}

void MetricReport::add(const std::string& name, double value, std::int64_t count) {
  metrics[name] = value;
  sample_counts[name] = count;
}

namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Translated copies of every test image, each sent to a seeded random other domain.
struct TranslatedSet {
  std::vector<Tensor<float>> chunks;
  std::vector<int> sources;
  std::vector<int> targets;
};

TranslatedSet translate_test_set(const TranslatorHandle& tr, const DatasetManifest& test, const EvalRequest& req) {
  const int n = test.num_domains();
  if (n < 2) throw Error("evaluation needs at least 2 test domains");
  const bool use_styles = !req.conditional && tr.styles().has_value();
  if (use_styles && tr.num_domains() < n)
    throw Error("style table has " + std::to_string(tr.num_domains()) + " domains but the test set has " +
                std::to_string(n) + "; use conditional evaluation");
  Rng rng(req.seed);
  TranslatedSet out;
  for (int d = 0; d < n; ++d) {
    const auto& images = test.domains[std::size_t(d)].images;
    for (std::size_t first = 0; first < images.size(); first += std::size_t(req.batch)) {
      const std::size_t last = std::min(images.size(), first + std::size_t(req.batch));
      const std::vector<fs::path> paths(images.begin() + std::ptrdiff_t(first), images.begin() + std::ptrdiff_t(last));
      const ImageBatch batch = load_batch(test, paths, d);
      std::vector<int> targets;
      std::uniform_int_distribution<int> other(0, n - 2);
      for (std::size_t i = 0; i < paths.size(); ++i) {
        int t = other(rng);
        if (t >= d) ++t;
        targets.push_back(t);
      }
      if (use_styles) {
        out.chunks.push_back(tr.translate(batch.pixels, targets));
      } else {
        std::vector<fs::path> cond;
        for (int t : targets) {
          const auto& pool = test.domains[std::size_t(t)].images;
          std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
          cond.push_back(pool[pick(rng)]);
        }
        std::vector<Tensor<float>> parts;
        for (std::size_t i = 0; i < cond.size(); ++i) parts.push_back(load_batch(test, {cond[i]}, targets[i]).pixels);
        std::vector<const Tensor<float>*> ptrs;
        for (const auto& p : parts) ptrs.push_back(&p);
        out.chunks.push_back(tr.translate_conditional(batch.pixels, concat_batch(ptrs)));
      }
      out.sources.insert(out.sources.end(), paths.size(), d);
      out.targets.insert(out.targets.end(), targets.begin(), targets.end());
    }
  }
  return out;
}

Matrix<float> evaluator_logits(const ClassifierNet<float>& evaluator, const TranslatedSet& set, int num_domains) {
  if (evaluator.config().num_domains != num_domains)
    throw Error("evaluator predicts " + std::to_string(evaluator.config().num_domains) + " domains but the test set has " +
                std::to_string(num_domains));
  Matrix<float> logits(Eigen::Index(set.targets.size()), num_domains);
  Eigen::Index row = 0;
  for (const auto& chunk : set.chunks) {
    const Matrix<float> l = evaluator.forward(chunk).logits;
    logits.middleRows(row, l.rows()) = l;
    row += l.rows();
  }
  return logits;
}

const ClassifierNet<float>& require_evaluator(const ClassifierNet<float>* evaluator, Protocol p) {
  if (!evaluator) throw Error("protocol " + to_string(p) + " needs an evaluator checkpoint");
  return *evaluator;
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [name, value] : metrics) m[name] = {{"value", value}, {"samples", sample_counts.at(name)}};
  return {{"protocol", protocol},
          {"metrics", m},
          {"checkpoint_fingerprint", hex(checkpoint_fingerprint)},
          {"evaluator_fingerprint", hex(evaluator_fingerprint)},
          {"seed", seed}};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "protocol,metric,value,samples,checkpoint_fingerprint,seed\n";
  os << std::setprecision(17);
  for (const auto& [name, value] : metrics)
    os << protocol << "," << name << "," << value << "," << sample_counts.at(name) << "," << hex(checkpoint_fingerprint)
       << "," << seed << "\n";
  return os.str();
}

MetricReport evaluate_translation(const TranslatorHandle& tr, const DatasetManifest& test,
                                  const ClassifierNet<float>* evaluator, const EvalRequest& req) {
  if (req.batch < 1) throw Error("evaluation batch must be >= 1");
  const NetConfig& c = tr.config();
  if (c.image_h != test.image_h || c.image_w != test.image_w || c.channels != test.channels)
    throw Error("translator geometry " + describe(c) + " does not match the test images");
  MetricReport r;
  r.protocol = to_string(req.protocol);
  r.checkpoint_fingerprint = tr.fingerprint();
  r.seed = req.seed;
  if (evaluator) r.evaluator_fingerprint = checksum(evaluator->parameters());

  switch (req.protocol) {
    case Protocol::IdentityTopK: {
      const auto& ev = require_evaluator(evaluator, req.protocol);
      const TranslatedSet set = translate_test_set(tr, test, req);
      const Matrix<float> logits = evaluator_logits(ev, set, test.num_domains());
      for (int k : req.ks) r.add("top" + std::to_string(k), topk_accuracy(logits, set.targets, k), logits.rows());
      break;
    }
    case Protocol::AttributeError: {
      const auto& ev = require_evaluator(evaluator, req.protocol);
      const TranslatedSet set = translate_test_set(tr, test, req);
      const Matrix<float> logits = evaluator_logits(ev, set, test.num_domains());
      r.add("error", 1.0 - topk_accuracy(logits, set.targets, 1), logits.rows());
      for (int d = 0; d < test.num_domains(); ++d) {
        std::vector<int> rows;
        for (std::size_t i = 0; i < set.targets.size(); ++i)
          if (set.targets[i] == d) rows.push_back(int(i));
        if (rows.empty()) continue;
        const std::vector<int> truth(rows.size(), d);
        r.add("error/" + test.domains[std::size_t(d)].name, 1.0 - topk_accuracy(gather_rows(logits, rows), truth, 1),
              std::int64_t(rows.size()));
      }
      break;
    }
    case Protocol::FidSet: {
      const ClassifierNet<float>& embed = evaluator ? *evaluator : tr.classifier();
      const TranslatedSet set = translate_test_set(tr, test, req);
      Matrix<float> fake(Eigen::Index(set.targets.size()), embed.config().feature_dim);
      Eigen::Index row = 0;
      for (const auto& chunk : set.chunks) {
        const Matrix<float> f = embed.forward(chunk).styles;
        fake.middleRows(row, f.rows()) = f;
        row += f.rows();
      }
      double sum = 0;
      int used = 0;
      std::int64_t total = 0;
      for (int d = 0; d < test.num_domains(); ++d) {
        std::vector<int> rows;
        for (std::size_t i = 0; i < set.targets.size(); ++i)
          if (set.targets[i] == d) rows.push_back(int(i));
        const ImageBatch real = domain_images(test, d);
        if (rows.size() < 2 || real.labels.size() < 2) continue;
        const auto fr = gaussian_stats<double>(gather_rows(fake, rows).cast<double>());
        const auto rr = gaussian_stats<double>(embed.forward(real.pixels).styles.cast<double>());
        const double v = fid(fr, rr);
        r.add("fid/" + test.domains[std::size_t(d)].name, v, std::int64_t(rows.size()));
        sum += v;
        ++used;
        total += std::int64_t(rows.size());
      }
      if (used == 0) throw Error("fid_set: no domain received at least 2 translated images");
      r.add("fid_mean", sum / used, total);
      break;
    }
    case Protocol::PairedPsnrSsim: {
      if (test.num_domains() != 2)
        throw Error("paired protocol needs exactly 2 domains (inputs, ground truth), got " +
                    std::to_string(test.num_domains()));
      std::map<std::string, fs::path> truth;
      for (const auto& p : test.domains[1].images) truth[p.stem().string()] = p;
      double psum = 0;
      double ssum = 0;
      std::int64_t pairs = 0;
      for (const auto& p : test.domains[0].images) {
        auto it = truth.find(p.stem().string());
        if (it == truth.end()) continue;
        const Tensor<float> x = load_batch(test, {p}, 0).pixels;
        const Tensor<float> gt = load_batch(test, {it->second}, 1).pixels;
        const Tensor<float> y = tr.translate_conditional(x, gt);
        psum += psnr(y, gt, test.normalization.high - test.normalization.low);
        ssum += ssim(y, gt, SsimOptions{11, 1.5, 0.01, 0.03, double(test.normalization.high - test.normalization.low)});
        ++pairs;
      }
      if (pairs == 0) throw Error("paired protocol: no input/ground-truth pairs with matching file names");
      r.add("psnr", psum / double(pairs), pairs);
      r.add("ssim", ssum / double(pairs), pairs);
      break;
    }
  }
  return r;
}

MetricReport evaluate_translation(const EvalRequest& req) {
  const TranslatorHandle tr = load_translator(req.checkpoint);
  const NetConfig& c = tr.config();
  const DatasetManifest test = load_manifest(req.test_root, c.image_h, c.image_w, c.channels);
  std::optional<ClassifierCheckpoint> ev;
  if (!req.evaluator_ckpt.empty()) ev = load_classifier_checkpoint(req.evaluator_ckpt);
  return evaluate_translation(tr, test, ev ? &ev->classifier : nullptr, req);
}

}  // namespace dosgan
