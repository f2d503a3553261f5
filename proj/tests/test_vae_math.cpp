#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvae/vae_math.hpp"

using namespace lvae;

namespace {

GaussianParams make_q(Tape& t, const Tensor& mu, const Tensor& logvar, bool grad = false) {
  return GaussianParams{t.leaf(mu, grad), t.leaf(logvar, grad)};
}

}  // namespace

TEST_CASE("reparameterize with zero noise returns the mean") {
  Tape t;
  Rng rng(1);
  const Tensor mu = rng.normal_tensor({1, 6});
  GaussianParams q = make_q(t, mu, rng.normal_tensor({1, 6}));
  NodeId z = reparameterize(t, q, t.constant(Tensor::zeros({1, 6})));
  for (int64_t i = 0; i < mu.size(); ++i)
    CHECK(t.value(z).data[i] == doctest::Approx(mu.data[i]));
}

TEST_CASE("reparameterize with unit variance adds the noise to the mean") {
  Tape t;
  Rng rng(2);
  const Tensor mu = rng.normal_tensor({1, 5});
  const Tensor eps = rng.normal_tensor({1, 5});
  GaussianParams q = make_q(t, mu, Tensor::zeros({1, 5}));
  NodeId z = reparameterize(t, q, t.constant(eps));
  for (int64_t i = 0; i < mu.size(); ++i)
    CHECK(t.value(z).data[i] == doctest::Approx(mu.data[i] + eps.data[i]));
}

TEST_CASE("reparameterize rejects mismatched noise length") {
  Tape t;
  GaussianParams q = make_q(t, Tensor::zeros({1, 4}), Tensor::zeros({1, 4}));
  CHECK_THROWS_AS(reparameterize(t, q, t.constant(Tensor::zeros({1, 3}))),
                  std::runtime_error);
}

TEST_CASE("reparameterize sample moments match mu and exp(logvar)") {
  const int kDraws = 100000;
  const Tensor mu = Tensor::from({1, 2}, {0.7f, -1.2f});
  const Tensor logvar = Tensor::from({1, 2}, {0.4f, -0.8f});
  Rng rng(3);
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  for (int i = 0; i < kDraws; ++i) {
    Tape t;
    GaussianParams q = make_q(t, mu, logvar);
    NodeId z = reparameterize(t, q, t.constant(rng.normal_tensor({1, 2})));
    for (int d = 0; d < 2; ++d) {
      const double v = t.value(z).data[d];
      sum[d] += v;
      sq[d] += v * v;
    }
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = sum[d] / kDraws;
    const double var = sq[d] / kDraws - mean * mean;
    CHECK(mean == doctest::Approx(mu.data[d]).epsilon(0.02));
    CHECK(var == doctest::Approx(std::exp(logvar.data[d])).epsilon(0.02));
  }
}

TEST_CASE("reparameterize is affine in the noise") {
  Rng rng(4);
  const Tensor mu = rng.normal_tensor({1, 4});
  const Tensor logvar = rng.normal_tensor({1, 4});
  const Tensor eps = rng.normal_tensor({1, 4});
  const float alpha = 2.5f;

  auto draw = [&](float sc) {
    Tape t;
    Tensor scaled = eps;
    for (float& v : scaled.data) v *= sc;
    GaussianParams q = make_q(t, mu, logvar);
    return t.value(reparameterize(t, q, t.constant(scaled)));
  };
  const Tensor z1 = draw(1.0f);
  const Tensor za = draw(alpha);
  for (int64_t i = 0; i < mu.size(); ++i)
    CHECK(za.data[i] - mu.data[i] ==
          doctest::Approx(alpha * (z1.data[i] - mu.data[i])).epsilon(1e-4));
}

TEST_CASE("kl of the standard normal against itself is zero") {
  Tape t;
  GaussianParams q = make_q(t, Tensor::zeros({1, 8}), Tensor::zeros({1, 8}));
  CHECK(t.scalar_value(kl_std_normal(t, q)) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("kl with unit mean and unit variance is one half per dimension") {
  Tape t;
  GaussianParams q = make_q(t, Tensor::full({1, 1}, 1.0f), Tensor::zeros({1, 1}));
  CHECK(t.scalar_value(kl_std_normal(t, q)) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("kl matches a monte-carlo estimate of E_q[log q - log p]") {
  Rng rng(5);
  const int kDraws = 1000000;
  const Tensor mu = rng.normal_tensor({1, 3});
  const Tensor logvar = rng.uniform_tensor({1, 3}, -1.0f, 1.0f);

  Tape t;
  GaussianParams q = make_q(t, mu, logvar);
  const double analytic = t.scalar_value(kl_std_normal(t, q));

  double acc = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    for (int d = 0; d < 3; ++d) {
      const double m = mu.data[d], lv = logvar.data[d];
      const double sd = std::exp(0.5 * lv);
      const double z = m + sd * rng.normal();
      const double logq = -0.5 * (std::log(2.0 * M_PI) + lv + (z - m) * (z - m) / (sd * sd));
      const double logp = -0.5 * (std::log(2.0 * M_PI) + z * z);
      acc += logq - logp;
    }
  }
  CHECK(acc / kDraws == doctest::Approx(analytic).epsilon(0.01));
}

TEST_CASE("kl is nonnegative for random parameters") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    Tape t;
    GaussianParams q =
        make_q(t, rng.normal_tensor({1, 6}), rng.uniform_tensor({1, 6}, -2.0f, 2.0f));
    CHECK(t.scalar_value(kl_std_normal(t, q)) >= 0.0);
  }
}

TEST_CASE("kl gradient matches finite differences") {
  Rng rng(6);
  const Tensor mu = rng.normal_tensor({1, 5});
  const Tensor logvar = rng.uniform_tensor({1, 5}, -1.5f, 1.5f);
  auto fmu = [&](Tape& t, NodeId m) {
    return kl_std_normal(t, GaussianParams{m, t.constant(logvar)});
  };
  CHECK(grad_check(fmu, mu, 1e-3) < 1e-3);
  auto flv = [&](Tape& t, NodeId lv) {
    return kl_std_normal(t, GaussianParams{t.constant(mu), lv});
  };
  CHECK(grad_check(flv, logvar, 1e-3) < 1e-3);
}

TEST_CASE("recon_l2 of identical tensors is zero") {
  Tape t;
  Rng rng(7);
  const Tensor x = rng.normal_tensor({2, 3, 4, 4});
  CHECK(t.scalar_value(recon_l2(t, t.constant(x), t.constant(x))) == 0.0);
}

TEST_CASE("recon_l2 of a unit gap over ten elements is ten") {
  Tape t;
  NodeId pred = t.constant(Tensor::full({1, 10}, 1.5f));
  NodeId target = t.constant(Tensor::full({1, 10}, 0.5f));
  CHECK(t.scalar_value(recon_l2(t, pred, target)) == doctest::Approx(10.0));
}

TEST_CASE("recon_l2 rejects shape mismatches") {
  Tape t;
  CHECK_THROWS_AS(
      recon_l2(t, t.constant(Tensor::zeros({1, 4})), t.constant(Tensor::zeros({1, 5}))),
      std::runtime_error);
}

TEST_CASE("a mask zeroing half the elements halves the expected loss") {
  Rng rng(8);
  const int kRounds = 200;
  const int n = 512;
  double full_acc = 0.0, half_acc = 0.0;
  Tensor mask = Tensor::zeros({1, n});
  for (int i = 0; i < n / 2; ++i) mask.data[i] = 1.0f;
  for (int r = 0; r < kRounds; ++r) {
    Tape t;
    NodeId pred = t.constant(rng.normal_tensor({1, n}));
    NodeId target = t.constant(Tensor::zeros({1, n}));
    full_acc += t.scalar_value(recon_l2(t, pred, target));
    half_acc += t.scalar_value(recon_l2(t, pred, target, t.constant(mask)));
  }
  CHECK(half_acc / full_acc == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("recon_l2 gradient matches finite differences") {
  Rng rng(9);
  const Tensor pred = rng.normal_tensor({2, 8});
  const Tensor target = rng.normal_tensor({2, 8});
  auto f = [&](Tape& t, NodeId p) { return recon_l2(t, p, t.constant(target)); };
  CHECK(grad_check(f, pred, 1e-3) < 1e-3);
}

TEST_CASE("mask_ce of a fair coin everywhere is N log 2") {
  Tape t;
  const int n = 24;
  NodeId p = t.constant(Tensor::full({1, n}, 0.5f));
  NodeId target = t.constant(Tensor::full({1, n}, 0.5f));
  CHECK(t.scalar_value(mask_ce(t, p, target)) ==
        doctest::Approx(n * std::log(2.0)).epsilon(1e-5));
}

TEST_CASE("mask_ce vanishes as predictions converge to binary targets") {
  Tape t;
  Tensor target = Tensor::from({1, 4}, {0.0f, 1.0f, 1.0f, 0.0f});
  Tensor p = target;
  for (float& v : p.data) v = v == 0.0f ? 1e-6f : 1.0f - 1e-6f;
  CHECK(t.scalar_value(mask_ce(t, t.constant(p), t.constant(target))) ==
        doctest::Approx(0.0).epsilon(1e-4));
}

TEST_CASE("mask_ce survives exact 0 and 1 probabilities via clamping") {
  Tape t;
  NodeId p = t.constant(Tensor::from({1, 2}, {0.0f, 1.0f}));
  NodeId target = t.constant(Tensor::from({1, 2}, {0.0f, 1.0f}));
  const double v = t.scalar_value(mask_ce(t, p, target));
  CHECK(std::isfinite(v));
  CHECK(v >= 0.0);
}

TEST_CASE("mask_ce gradient w.r.t. probabilities matches finite differences") {
  Rng rng(10);
  Tensor p = rng.uniform_tensor({1, 12}, 0.1f, 0.9f);
  Tensor target = rng.uniform_tensor({1, 12}, 0.0f, 1.0f);
  auto f = [&](Tape& t, NodeId pr) { return mask_ce(t, pr, t.constant(target)); };
  CHECK(grad_check(f, p, 1e-3) < 1e-3);
}

TEST_CASE("all four operations pass grad_check across seeds") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(200 + seed);
    const Tensor mu = rng.normal_tensor({1, 4});
    const Tensor logvar = rng.uniform_tensor({1, 4}, -1.0f, 1.0f);
    const Tensor eps = rng.normal_tensor({1, 4});
    const Tensor target = rng.normal_tensor({1, 4});

    auto freparam = [&](Tape& t, NodeId m) {
      GaussianParams q{m, t.constant(logvar)};
      return recon_l2(t, reparameterize(t, q, t.constant(eps)), t.constant(target));
    };
    CHECK(grad_check(freparam, mu, 1e-3) < 1e-3);

    auto freparam_lv = [&](Tape& t, NodeId lv) {
      GaussianParams q{t.constant(mu), lv};
      return recon_l2(t, reparameterize(t, q, t.constant(eps)), t.constant(target));
    };
    CHECK(grad_check(freparam_lv, logvar, 1e-3) < 1e-3);

    auto fkl = [&](Tape& t, NodeId m) {
      return kl_std_normal(t, GaussianParams{m, t.constant(logvar)});
    };
    CHECK(grad_check(fkl, mu, 1e-3) < 1e-3);

    Tensor prob = rng.uniform_tensor({1, 6}, 0.15f, 0.85f);
    Tensor btarget = rng.uniform_tensor({1, 6}, 0.0f, 1.0f);
    auto fce = [&](Tape& t, NodeId pr) { return mask_ce(t, pr, t.constant(btarget)); };
    CHECK(grad_check(fce, prob, 1e-3) < 1e-3);
  }
}
