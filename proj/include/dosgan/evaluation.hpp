#pragma once

#include "dosgan/inference.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace dosgan {

inline constexpr double kPsnrCap = 99.0;

/// Fraction of rows whose true label is among the k largest logits. Ties
/// count against the truth only when strictly larger.
template <typename Scalar>
double topk_accuracy(const Matrix<Scalar>& logits, const std::vector<int>& truth, int k) {
  const auto n = int(logits.cols());
  if (k < 1 || k > n) throw Error("top-k needs 1 <= k <= " + std::to_string(n) + ", got k=" + std::to_string(k));
  if (std::size_t(logits.rows()) != truth.size()) throw Error("top-k: label count does not match logits");
  if (truth.empty()) throw Error("top-k: no samples");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int t = truth[std::size_t(i)];
    if (t < 0 || t >= n) throw Error("top-k: label " + std::to_string(t) + " out of range");
    int above = 0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) above += logits(i, j) > logits(i, t);
    hits += above < k;
  }
  return double(hits) / double(truth.size());
}

template <typename Scalar>
struct GaussianStats {
  Vector<Scalar> mean;
  Matrix<Scalar> covariance;
  std::int64_t sample_count = 0;
};

/// Sample mean and unbiased covariance of the rows.
template <typename Scalar>
GaussianStats<Scalar> gaussian_stats(const Matrix<Scalar>& features) {
  if (features.rows() < 2) throw Error("gaussian_stats needs at least 2 samples, got " + std::to_string(features.rows()));
  GaussianStats<Scalar> g;
  g.sample_count = features.rows();
  g.mean = features.colwise().mean().transpose();
  const Matrix<Scalar> centered = features.rowwise() - g.mean.transpose();
  g.covariance = (centered.transpose() * centered) / Scalar(features.rows() - 1);
  g.covariance = (Scalar(0.5) * (g.covariance + g.covariance.transpose())).eval();
  return g;
}

/// Square root of a symmetric PSD matrix with negative eigenvalues clipped.
template <typename Scalar>
Matrix<Scalar> psd_sqrt(const Matrix<Scalar>& m) {
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(Scalar(0.5) * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Vector<Scalar> root = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Frechet distance between two Gaussians. tr((Sa Sb)^1/2) is evaluated as
/// tr((Sa^1/2 Sb Sa^1/2)^1/2), whose argument is symmetric.
template <typename Scalar>
double fid(const GaussianStats<Scalar>& a, const GaussianStats<Scalar>& b) {
  if (a.mean.size() != b.mean.size()) throw Error("fid: feature dimensions differ");
  if (!a.mean.allFinite() || !b.mean.allFinite() || !a.covariance.allFinite() || !b.covariance.allFinite())
    throw Error("fid: non-finite statistics");
  const Matrix<double> ca = a.covariance.template cast<double>();
  const Matrix<double> cb = b.covariance.template cast<double>();
  const Matrix<double> ra = psd_sqrt(ca);
  const Matrix<double> inner = ra * cb * ra;
  Eigen::SelfAdjointEigenSolver<Matrix<double>> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double mean_term = (a.mean.template cast<double>() - b.mean.template cast<double>()).squaredNorm();
  return std::max(0.0, mean_term + ca.trace() + cb.trace() - 2.0 * tr_sqrt);
}

/// 10 log10(peak^2 / MSE) over every element; kPsnrCap when MSE is 0.
template <typename Scalar>
double psnr(const Tensor<Scalar>& a, const Tensor<Scalar>& b, double peak = 2.0) {
  if (!(a.shape() == b.shape())) throw Error("psnr: shapes differ, " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  double sse = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const double d = double(a.ptr()[i]) - double(b.ptr()[i]);
    sse += d * d;
  }
  const double mse = sse / double(a.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 2.0;
};

/// Mean SSIM over valid Gaussian windows, channels and images.
template <typename Scalar>
double ssim(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const SsimOptions& opt = {}) {
  const Shape4& s = a.shape();
  if (!(s == b.shape())) throw Error("ssim: shapes differ, " + to_string(s) + " vs " + to_string(b.shape()));
  if (s.h < opt.window || s.w < opt.window)
    throw Error("ssim: images smaller than the " + std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  std::vector<double> g(std::size_t(opt.window));
  double gsum = 0;
  for (int i = 0; i < opt.window; ++i) {
    const double d = i - (opt.window - 1) / 2.0;
    g[std::size_t(i)] = std::exp(-d * d / (2 * opt.sigma * opt.sigma));
    gsum += g[std::size_t(i)];
  }
  for (double& v : g) v /= gsum;
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  const int oh = s.h - opt.window + 1;
  const int ow = s.w - opt.window + 1;
  double total = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
          for (int i = 0; i < opt.window; ++i)
            for (int j = 0; j < opt.window; ++j) {
              const double w = g[std::size_t(i)] * g[std::size_t(j)];
              const double va = a(n, c, y + i, x + j);
              const double vb = b(n, c, y + i, x + j);
              ma += w * va;
              mb += w * vb;
              aa += w * va * va;
              bb += w * vb * vb;
              ab += w * va * vb;
            }
          const double sa = aa - ma * ma;
          const double sb = bb - mb * mb;
          const double sab = ab - ma * mb;
          total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (sa + sb + c2));
        }
  return total / (double(s.n) * s.c * oh * ow);
}

/// Top-k accuracy of an evaluator on images against target labels.
double topk_accuracy(const ClassifierNet<float>& evaluator, const Tensor<float>& images, const std::vector<int>& targets,
                     int k);
/// 1 - top-1 accuracy.
double classification_error_rate(const ClassifierNet<float>& evaluator, const Tensor<float>& images,
                                 const std::vector<int>& targets);

enum class Protocol { IdentityTopK, AttributeError, FidSet, PairedPsnrSsim };
std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

struct MetricReport {
  std::string protocol;
  std::map<std::string, double> metrics;
  std::map<std::string, std::int64_t> sample_counts;  ///< one entry per metric
  std::uint64_t checkpoint_fingerprint = 0;
  std::uint64_t evaluator_fingerprint = 0;
  std::uint64_t seed = 0;

  void add(const std::string& name, double value, std::int64_t count);
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path test_root;
  std::filesystem::path evaluator_ckpt;  ///< independently trained classifier
  Protocol protocol = Protocol::IdentityTopK;
  std::vector<int> ks{1};
  std::uint64_t seed = 0;
  bool conditional = false;  ///< use a random target-domain image's style instead of the domain style
  int batch = 32;
};

/// Runs one protocol end to end. Targets are drawn per test image from the
/// other domains with the seeded generator. The paired protocol expects two
/// domains whose files pair up by name: domain 0 the inputs, domain 1 the
/// ground truth that supplies the style.
MetricReport evaluate_translation(const TranslatorHandle& translator, const DatasetManifest& test,
                                  const ClassifierNet<float>* evaluator, const EvalRequest& req);
MetricReport evaluate_translation(const EvalRequest& req);

}  // namespace dosgan
