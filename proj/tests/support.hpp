#pragma once

#include "dosgan/layers.hpp"
#include "dosgan/networks.hpp"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <cmath>
#include <functional>
#include <random>

namespace dosgan::testing {

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() / ("dosgan_" + tag + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline NetConfig tiny_config() {
  NetConfig c;
  c.image_h = c.image_w = 8;
  c.channels = 3;
  c.feature_dim = 4;
  c.num_domains = 3;
  c.base_width = 2;
  c.residual_blocks = 1;
  c.downsample_stages = 2;
  return c;
}

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape4 s, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(s);
  for (std::int64_t i = 0; i < t.size(); ++i) t.ptr()[i] = Scalar(u(rng));
  return t;
}

template <typename Scalar>
Matrix<Scalar> random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<Scalar> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(u(rng));
  return m;
}

/// Perturbs every parameter so tests do not start at special values.
template <typename Scalar>
void randomize(const ParameterList<Scalar>& params, Rng& rng, double scale = 0.5) {
  std::normal_distribution<double> n(0, scale);
  for (auto* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = Scalar(n(rng));
}

/// Central difference of f with respect to each element of `values`.
inline std::vector<double> numeric_gradient(double* values, std::size_t n, const std::function<double()>& f,
                                            double h = 1e-6) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor)
inline double relative_error(const double* a, const double* b, std::size_t n, double floor = 1e-8) {
  double diff = 0;
  double scale = floor;
  for (std::size_t i = 0; i < n; ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-8) {
  return relative_error(a.data(), b.data(), a.size(), floor);
}

inline double relative_error(const double* analytic, const std::vector<double>& numeric, double floor = 1e-8) {
  return relative_error(analytic, numeric.data(), numeric.size(), floor);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max({1e-300, std::abs(a), std::abs(b)}); }

template <typename Scalar>
double dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return double(a.data().dot(b.data()));
}

}  // namespace dosgan::testing
