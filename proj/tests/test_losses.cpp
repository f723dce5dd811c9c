#include "doctest.h"

#include "dosgan/losses.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace dosgan;
using namespace dosgan::testing;

namespace {

std::vector<std::vector<double>> rows(const Matrix<double>& m) {
  std::vector<std::vector<double>> out(std::size_t(m.rows()), std::vector<double>(std::size_t(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[std::size_t(i)][std::size_t(j)] = m(i, j);
  return out;
}

std::vector<std::vector<double>> per_image(const Tensor<double>& t) {
  std::vector<std::vector<double>> out(std::size_t(t.batch()));
  for (int n = 0; n < t.batch(); ++n) out[std::size_t(n)].assign(t.image_ptr(n), t.image_ptr(n) + t.shape().image_size());
  return out;
}

std::vector<int> random_labels(int k, int n, Rng& rng) {
  std::uniform_int_distribution<int> d(0, n - 1);
  std::vector<int> l(static_cast<std::size_t>(k));
  for (int& v : l) v = d(rng);
  return l;
}

}  // namespace

TEST_CASE("classification loss matches loop oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 5;
    const int n = 2 + trial % 4;
    const Matrix<double> logits = random_matrix<double>(k, n, rng, -4, 4);
    const auto labels = random_labels(k, n, rng);
    CHECK(rel_diff(classification_loss(logits, labels).value, oracle::nll(rows(logits), labels)) < 1e-9);
    CHECK(rel_diff(joint_cls_term(logits, labels, ClsTermForm::NegLogProb).value, oracle::nll(rows(logits), labels)) <
          1e-9);
    CHECK(rel_diff(joint_cls_term(logits, labels, ClsTermForm::NegProb).value, oracle::neg_prob(rows(logits), labels)) <
          1e-9);
  }
}

TEST_CASE("classification loss is shift invariant and rejects bad labels") {
  Rng rng(2);
  Matrix<double> logits = random_matrix<double>(3, 4, rng);
  const std::vector<int> labels{0, 3, 1};
  const double v = classification_loss(logits, labels).value;
  logits.array() += 100.0;
  CHECK(classification_loss(logits, labels).value == doctest::Approx(v).epsilon(1e-12));
  CHECK_THROWS_AS(classification_loss(logits, std::vector<int>{0, 4, 1}), Error);
  CHECK_THROWS_AS(classification_loss(logits, std::vector<int>{0, 1}), Error);
  logits(0, 0) = std::nan("");
  CHECK_THROWS_AS(classification_loss(logits, labels), Error);
}

TEST_CASE("adversarial losses match loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape4 s{1 + trial % 4, 1, 1 + trial % 3, 2};
    const auto real = random_tensor<double>(s, rng, 0.01, 0.99);
    const auto fake = random_tensor<double>(s, rng, 0.01, 0.99);
    CHECK(rel_diff(adversarial_loss(real, fake).value, oracle::adversarial(per_image(real), per_image(fake), kLogEps)) <
          1e-9);
    CHECK(rel_diff(generator_adversarial_loss(fake).value, oracle::generator_adversarial(per_image(fake), kLogEps)) <
          1e-9);
  }
}

TEST_CASE("adversarial loss clamps saturated probabilities") {
  Tensor<double> real(Shape4{2, 1, 2, 2}, 1.0);
  Tensor<double> fake(Shape4{2, 1, 2, 2}, 1.0);
  const auto l = adversarial_loss(real, fake);
  CHECK(std::isfinite(l.value));
  CHECK(l.value == doctest::Approx(std::log(1 - kLogEps) + std::log(kLogEps)));
  CHECK(l.grad_real.data().isZero());
  CHECK(l.grad_fake.data().isZero());
  Tensor<double> zero(Shape4{2, 1, 2, 2}, 0.0);
  const auto g = generator_adversarial_loss(zero);
  CHECK(g.value == doctest::Approx(-std::log(kLogEps)));
  CHECK(g.grad_fake.data().isZero());
  Tensor<double> bad(Shape4{2, 1, 2, 2}, 1.5);
  CHECK_THROWS_AS(adversarial_loss(bad, fake), Error);
  CHECK_THROWS_AS(adversarial_loss(real, Tensor<double>(Shape4{2, 1, 1, 2}, 0.5)), Error);
}

TEST_CASE("feature and image reconstruction losses match loop oracle") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 6;
    const int f = 1 + trial % 7;
    const Matrix<double> pred = random_matrix<double>(k, f, rng, -3, 3);
    const Matrix<double> target = random_matrix<double>(k, f, rng, -3, 3);
    const Matrix<double> row = random_matrix<double>(1, f, rng, -3, 3);
    CHECK(rel_diff(feature_l1_loss(pred, target).value, oracle::feature_l1(rows(pred), rows(target))) < 1e-9);
    CHECK(rel_diff(ds_recon_real(pred, target).value, oracle::feature_l1(rows(pred), rows(target))) < 1e-9);
    CHECK(rel_diff(ds_recon_fake(pred, row).value, oracle::feature_l1(rows(pred), rows(row))) < 1e-9);
    CHECK(rel_diff(ablation_feat_loss(pred, row).value, oracle::feature_l1(rows(pred), rows(row))) < 1e-9);

    const Shape4 s{k, 1 + trial % 3, 2 + trial % 3, 3};
    const auto x = random_tensor<double>(s, rng);
    const auto xs = random_tensor<double>(s, rng);
    const auto xc = random_tensor<double>(s, rng);
    CHECK(rel_diff(image_recon_loss(x, xs, xc).value, oracle::image_recon(per_image(x), per_image(xs), per_image(xc))) <
          1e-9);
  }
}

TEST_CASE("conditional losses are the sum of both directions") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + trial % 4;
    const Shape4 g{k, 1, 2, 2};
    const auto ra = random_tensor<double>(g, rng, 0.05, 0.95), fab = random_tensor<double>(g, rng, 0.05, 0.95);
    const auto rb = random_tensor<double>(g, rng, 0.05, 0.95), fba = random_tensor<double>(g, rng, 0.05, 0.95);
    const double adv = oracle::adversarial(per_image(ra), per_image(fab), kLogEps) +
                       oracle::adversarial(per_image(rb), per_image(fba), kLogEps);
    CHECK(rel_diff(conditional_adversarial_loss(ra, fab, rb, fba).value, adv) < 1e-9);

    const auto da = random_matrix<double>(k, 3, rng), sa = random_matrix<double>(k, 3, rng);
    const auto db = random_matrix<double>(k, 3, rng), sb = random_matrix<double>(k, 3, rng);
    CHECK(rel_diff(conditional_ds_recon_real(da, sa, db, sb).value,
                   oracle::feature_l1(rows(da), rows(sa)) + oracle::feature_l1(rows(db), rows(sb))) < 1e-9);
    CHECK(rel_diff(conditional_ds_recon_fake(da, sb, db, sa).value,
                   oracle::feature_l1(rows(da), rows(sb)) + oracle::feature_l1(rows(db), rows(sa))) < 1e-9);

    const Shape4 s{k, 3, 2, 2};
    const auto xa = random_tensor<double>(s, rng), xaa = random_tensor<double>(s, rng), xaba = random_tensor<double>(s, rng);
    const auto xb = random_tensor<double>(s, rng), xbb = random_tensor<double>(s, rng), xbab = random_tensor<double>(s, rng);
    CHECK(rel_diff(conditional_image_recon_loss(xa, xaa, xaba, xb, xbb, xbab).value,
                   oracle::image_recon(per_image(xa), per_image(xaa), per_image(xaba)) +
                       oracle::image_recon(per_image(xb), per_image(xbb), per_image(xbab))) < 1e-9);
  }
  Rng r2(6);
  CHECK_THROWS_AS(conditional_ds_recon_fake(random_matrix<double>(2, 3, r2), random_matrix<double>(1, 3, r2),
                                            random_matrix<double>(2, 3, r2), random_matrix<double>(2, 3, r2)),
                  Error);
}

TEST_CASE("weighted totals") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 50; ++trial) {
    LossWeights w{std::abs(u(rng)), std::abs(u(rng))};
    LossBreakdown b{u(rng), std::abs(u(rng)), std::abs(u(rng)), std::abs(u(rng)), trial % 2 ? std::abs(u(rng)) : 0.0, 0, 0};
    assemble_totals(b, w);
    CHECK(rel_diff(b.total_d, oracle::total_d(b.gan, b.ds_real, w.lambda_f)) < 1e-9);
    CHECK(rel_diff(b.total_net, oracle::joint_net(b.gan, b.cls, b.ds_fake, b.im, w.lambda_f, w.lambda_im)) < 1e-9);
    if (b.cls == 0)
      CHECK(rel_diff(total_net_loss(b.gan, b.ds_fake, b.im, w), oracle::total_net(b.gan, b.ds_fake, b.im, w.lambda_f, w.lambda_im)) <
            1e-9);
    CHECK(totals_consistent(b, w));
    b.total_net += 1;
    CHECK_FALSE(totals_consistent(b, w));
  }
  CHECK_THROWS_AS((LossWeights{-1, 1}.validate()), Error);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(8);
  const double tol = 1e-5;

  SUBCASE("classification forms") {
    Matrix<double> logits = random_matrix<double>(4, 5, rng, -2, 2);
    const auto labels = random_labels(4, 5, rng);
    for (auto form : {ClsTermForm::NegLogProb, ClsTermForm::NegProb}) {
      const auto a = joint_cls_term(logits, labels, form);
      const auto num = numeric_gradient(logits.data(), std::size_t(logits.size()),
                                        [&] { return joint_cls_term(logits, labels, form).value; });
      CHECK(relative_error(a.grad_logits.data(), num) < tol);
    }
  }
  SUBCASE("adversarial") {
    auto real = random_tensor<double>(Shape4{4, 1, 8, 8}, rng, 0.1, 0.9);
    auto fake = random_tensor<double>(Shape4{4, 1, 8, 8}, rng, 0.1, 0.9);
    const auto a = adversarial_loss(real, fake);
    const auto nr = numeric_gradient(real.ptr(), std::size_t(real.size()), [&] { return adversarial_loss(real, fake).value; });
    const auto nf = numeric_gradient(fake.ptr(), std::size_t(fake.size()), [&] { return adversarial_loss(real, fake).value; });
    CHECK(relative_error(a.grad_real.ptr(), nr) < tol);
    CHECK(relative_error(a.grad_fake.ptr(), nf) < tol);
    const auto g = generator_adversarial_loss(fake);
    const auto ng = numeric_gradient(fake.ptr(), std::size_t(fake.size()), [&] { return generator_adversarial_loss(fake).value; });
    CHECK(relative_error(g.grad_fake.ptr(), ng) < tol);
  }
  SUBCASE("feature L1, per-row and broadcast targets") {
    Matrix<double> pred = random_matrix<double>(4, 8, rng, -2, 2);
    Matrix<double> target = random_matrix<double>(4, 8, rng, -2, 2);
    Matrix<double> row = random_matrix<double>(1, 8, rng, -2, 2);
    for (Matrix<double>* t : {&target, &row}) {
      const auto a = feature_l1_loss(pred, *t);
      const auto np = numeric_gradient(pred.data(), std::size_t(pred.size()), [&] { return feature_l1_loss(pred, *t).value; });
      const auto nt = numeric_gradient(t->data(), std::size_t(t->size()), [&] { return feature_l1_loss(pred, *t).value; });
      CHECK(relative_error(a.grad_pred.data(), np) < tol);
      CHECK(relative_error(a.grad_target.data(), nt) < tol);
    }
  }
  SUBCASE("image reconstruction") {
    const Shape4 s{4, 8, 8, 8};
    auto x = random_tensor<double>(s, rng), xs = random_tensor<double>(s, rng), xc = random_tensor<double>(s, rng);
    const auto a = image_recon_loss(x, xs, xc);
    auto f = [&] { return image_recon_loss(x, xs, xc).value; };
    CHECK(relative_error(a.grad_x.ptr(), numeric_gradient(x.ptr(), std::size_t(x.size()), f)) < tol);
    CHECK(relative_error(a.grad_self.ptr(), numeric_gradient(xs.ptr(), std::size_t(xs.size()), f)) < tol);
    CHECK(relative_error(a.grad_cycle.ptr(), numeric_gradient(xc.ptr(), std::size_t(xc.size()), f)) < tol);
  }
}
