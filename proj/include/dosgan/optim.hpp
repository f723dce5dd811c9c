#pragma once

#include "dosgan/layers.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace dosgan {

/// Adaptive-moment gradient descent. Holds moment estimates only; the
/// parameter list is supplied on every step so networks stay freely movable.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(const ParameterList<Scalar>& params, Options opt = {}) : opt_(opt) {
    for (const auto* p : params) {
      m_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(const ParameterList<Scalar>& params, double lr) {
    if (params.size() != m_.size()) throw Error("optimizer bound to a different parameter list");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
    const auto b1 = Scalar(opt_.beta1);
    const auto b2 = Scalar(opt_.beta2);
    const auto step_size = Scalar(lr / c1);
    const auto inv_c2 = Scalar(1.0 / c2);
    const auto eps = Scalar(opt_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<Scalar>& p = *params[i];
      if (p.grad.rows() != m_[i].rows() || p.grad.cols() != m_[i].cols())
        throw Error("optimizer state shape mismatch for " + p.name);
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * p.grad;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * p.grad.cwiseAbs2();
      p.value.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_c2).sqrt() + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  const Options& options() const { return opt_; }
  std::vector<Matrix<Scalar>>& first_moments() { return m_; }
  std::vector<Matrix<Scalar>>& second_moments() { return v_; }
  const std::vector<Matrix<Scalar>>& first_moments() const { return m_; }
  const std::vector<Matrix<Scalar>>& second_moments() const { return v_; }

 private:
  Options opt_;
  std::int64_t t_ = 0;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
};

}  // namespace dosgan
