#include <catch2/catch_amalgamated.hpp>

#include "gpda/gp_head.hpp"

#include <cmath>
#include <random>

using namespace gpda;
using Catch::Approx;

namespace {

VariationalPosterior random_posterior(std::mt19937_64& rng, Eigen::Index K, Eigen::Index d) {
  std::normal_distribution<double> n(0, 1);
  std::uniform_real_distribution<double> u(-1.5, 1.0);
  VariationalPosterior q = VariationalPosterior::prior(K, d);
  for (Eigen::Index i = 0; i < q.m.size(); ++i) {
    q.m.data()[i] = n(rng);
    q.log_s.data()[i] = u(rng);
  }
  return q;
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index d) {
  std::normal_distribution<double> n(0, 1);
  Vector v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

Matrix noise_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0, 1);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

ParamVector as_params(const VariationalPosterior& q) {
  ParamVector p;
  VariationalPosterior::add_segments(p, std::size_t(q.classes()), std::size_t(q.dim()));
  q.store(p);
  return p;
}

}  // namespace

TEST_CASE("kl hand values", "[gp_head]") {
  CHECK(kl(VariationalPosterior::prior(1, 2)) == 0.0);

  VariationalPosterior q = VariationalPosterior::prior(1, 2);
  q.m << 1.0, 0.0;
  q.log_s << std::log(0.5), std::log(2.0);
  CHECK(kl(q) == Approx(0.75).margin(1e-12));

  VariationalPosterior q2 = VariationalPosterior::prior(2, 2);
  q2.m.row(0) = q.m.row(0);
  q2.m.row(1) = q.m.row(0);
  q2.log_s.row(0) = q.log_s.row(0);
  q2.log_s.row(1) = q.log_s.row(0);
  CHECK(kl(q2) == Approx(1.5).margin(1e-12));
}

TEST_CASE("kl is nonnegative and vanishes only at the prior", "[gp_head][property]") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = random_posterior(rng, 3, 5);
    CHECK(kl(q) > 0.0);
  }
  CHECK(kl(VariationalPosterior::prior(4, 7)) == 0.0);
}

TEST_CASE("sample_weights reparameterization", "[gp_head]") {
  std::mt19937_64 rng(2);
  auto q = random_posterior(rng, 3, 4);
  CHECK(sample_weights(q, Matrix::Zero(3, 4)).W == q.m);

  VariationalPosterior d = VariationalPosterior::prior(1, 2);
  d.log_s << std::log(4.0), std::log(9.0);
  Matrix eps(1, 2);
  eps << 1.0, -1.0;
  const Matrix w = sample_weights(d, eps).W;
  CHECK(w(0, 0) == Approx(2.0).epsilon(1e-14));
  CHECK(w(0, 1) == Approx(-3.0).epsilon(1e-14));

  CHECK_THROWS_AS(sample_weights(q, Matrix::Zero(2, 4)), std::invalid_argument);
}

TEST_CASE("sample_weights empirical mean converges to m", "[gp_head]") {
  std::mt19937_64 rng(3);
  auto q = random_posterior(rng, 2, 3);
  const int N = 100000;
  Matrix acc = Matrix::Zero(2, 3);
  std::normal_distribution<double> n(0, 1);
  for (int s = 0; s < N; ++s) acc += sample_weights(q, noise_matrix(rng, 2, 3)).W;
  acc /= double(N);
  const double s_max = (0.5 * q.log_s.array()).exp().maxCoeff();
  CHECK((acc - q.m).cwiseAbs().maxCoeff() <= 4.0 * s_max / std::sqrt(double(N)));
}

TEST_CASE("moments hand values", "[gp_head]") {
  VariationalPosterior q = VariationalPosterior::prior(2, 2);
  q.m << 0.7, -2.0, 1.5, 3.0;
  q.log_s << std::log(0.3), std::log(1.7), 0.0, 0.0;
  Vector e0(2);
  e0 << 1.0, 0.0;
  CHECK(moments(q, e0).mu(0) == 0.7);
  CHECK(moments(q, e0).mu(1) == 1.5);
  Vector ones = Vector::Ones(2);
  CHECK(moments(q, ones).sigma(0) == Approx(std::sqrt(0.3 + 1.7)).epsilon(1e-14));
  CHECK_THROWS_AS(moments(q, Vector::Ones(3)), std::invalid_argument);
}

TEST_CASE("moments agree with the sampling oracle", "[gp_head][property]") {
  std::mt19937_64 rng(4);
  const int N = 100000;
  for (int pair = 0; pair < 5; ++pair) {
    auto q = random_posterior(rng, 3, 4);
    const Vector phi = random_vector(rng, 4);
    const auto mom = moments(q, phi);
    Vector sum = Vector::Zero(3), sumsq = Vector::Zero(3);
    for (int s = 0; s < N; ++s) {
      const Vector f = sample_weights(q, noise_matrix(rng, 3, 4)).W * phi;
      sum += f;
      sumsq += f.cwiseProduct(f);
    }
    const Vector mean = sum / N;
    const Vector sd = (sumsq / N - mean.cwiseProduct(mean)).cwiseSqrt();
    for (int j = 0; j < 3; ++j) {
      CHECK(std::abs(mean(j) - mom.mu(j)) <= 5.0 * mom.sigma(j) / std::sqrt(double(N)));
      CHECK(std::abs(sd(j) - mom.sigma(j)) <= 5.0 * mom.sigma(j) / std::sqrt(2.0 * N));
    }
  }
}

TEST_CASE("softmax log-likelihood", "[gp_head]") {
  Vector phi(1);
  phi << 1.0;
  WeightSample eq{Matrix::Constant(3, 1, 0.4)};
  CHECK(log_likelihood_softmax(eq, phi, 2) == Approx(std::log(1.0 / 3.0)).epsilon(1e-14));

  WeightSample two{Matrix(2, 1)};
  two.W << 1.0, 0.0;
  CHECK(log_likelihood_softmax(two, phi, 0) == Approx(-std::log(1.0 + std::exp(-1.0))).epsilon(1e-14));
  CHECK(log_likelihood_softmax(two, phi, 0) == Approx(-0.3133).margin(1e-4));

  WeightSample shifted{two.W.array() + 250.0};
  CHECK(log_likelihood_softmax(shifted, phi, 0) == Approx(log_likelihood_softmax(two, phi, 0)).epsilon(1e-12));
  CHECK_THROWS_AS(log_likelihood_softmax(two, phi, 2), std::out_of_range);
  CHECK_THROWS_AS(log_likelihood_softmax(two, phi, -1), std::out_of_range);
}

TEST_CASE("predict is the MAP argmax with lowest-index ties", "[gp_head]") {
  VariationalPosterior q = VariationalPosterior::prior(3, 1);
  q.m << 0.1, 0.9, 0.3;
  Vector phi(1);
  phi << 1.0;
  CHECK(predict(q, phi) == 1);
  phi << 4.0;
  CHECK(predict(q, phi) == 1);

  VariationalPosterior tie = VariationalPosterior::prior(2, 1);
  tie.m << 0.5, 0.5;
  phi << 1.0;
  CHECK(predict(tie, phi) == 0);
}

TEST_CASE("predict is invariant to positive rescaling", "[gp_head][property]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> c(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto q = random_posterior(rng, 4, 3);
    const Vector phi = random_vector(rng, 3);
    const auto base = predict(q, phi);
    CHECK(predict(q, Vector(phi * c(rng))) == base);
    VariationalPosterior scaled = q;
    scaled.m *= c(rng);
    CHECK(predict(scaled, phi) == base);
  }
}

TEST_CASE("gp head gradients pass finite-difference checks", "[gp_head][property]") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = random_posterior(rng, 3, 4);
    const auto p = as_params(q);
    const Matrix phi = noise_matrix(rng, 5, 4);
    const Matrix noise = noise_matrix(rng, 3, 4);
    const Matrix readout = noise_matrix(rng, 5, 3);
    std::uniform_int_distribution<int> label(0, 2);
    const int y = label(rng);

    auto kl_obj = [](Tape& t) { return ops::kl(t.param(kMeanSegment), t.param(kLogVarSegment)); };
    auto ll_obj = [&](Tape& t) {
      Var W = ops::sample_weights(t.param(kMeanSegment), t.param(kLogVarSegment), noise);
      Var logits = ops::matmul_nt(t.constant(phi.row(0)), W);
      return ops::sub(ops::gather(logits, {0}, {y}), ops::logsumexp(logits));
    };
    auto mom_obj = [&](Tape& t) {
      auto [mu, sigma] = ops::moments(t.param(kMeanSegment), t.param(kLogVarSegment), t.constant(phi));
      return ops::sum(ops::mul(ops::add(mu, sigma), t.constant(readout)));
    };
    for (auto* name : {"kl", "ll", "moments"}) {
      std::function<Var(Tape&)> f = std::string(name) == "kl" ? std::function<Var(Tape&)>(kl_obj)
                                    : std::string(name) == "ll" ? std::function<Var(Tape&)>(ll_obj)
                                                                : std::function<Var(Tape&)>(mom_obj);
      auto [v, g] = value_and_grad(f, p);
      const auto fd = finite_diff_grad(f, p, 1e-5);
      INFO(name);
      CHECK(relative_error(g.values(), fd.values()) <= 1e-4);
    }

    // tape values agree with the plain implementations
    Tape t(&p);
    CHECK(kl_obj(t).scalar() == Approx(kl(q)).epsilon(1e-13));
    CHECK(ll_obj(t).scalar() ==
          Approx(log_likelihood_softmax(sample_weights(q, noise), phi.row(0).transpose(), y)).epsilon(1e-12));
  }
}
