#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dashssl/errors.hpp"
#include "dashssl/theory.hpp"

using namespace dashssl;
using namespace dashssl::theory;

namespace {

// Reference set used by theory-verify defaults.
TheoryInputs feasible_inputs() {
  TheoryInputs in;
  in.G = 4.0;
  in.L = 2.0;
  in.mu = 0.5;
  in.a = 0.5;
  in.b = 0.001;
  in.theta = 1.0;
  in.delta = 0.1;
  in.q = 0.8;
  in.C = 2.0;
  in.eta0 = 0.5;
  in.eta = 0.5;
  in.F0 = 1.0;
  in.m_min = 400.0;
  return in;
}

}  // namespace

TEST_CASE("closed forms against the mpmath oracle") {
  const auto terms = batch_terms(0.5, 0.1, 2.0);
  CHECK(terms[0] == doctest::Approx(3.461636765).epsilon(1e-9));
  CHECK(terms[1] == doctest::Approx(3.461636765).epsilon(1e-9));
  CHECK(terms[2] == doctest::Approx(4.895493661).epsilon(1e-9));
  CHECK(batch_parameter(0.5, 0.1, 2.0) == 5);
  CHECK(batch_parameter(0.8, 0.1, 2.0) == 9);
  CHECK(warmup_batch(1.0, 0.1, 1.0, 0.5) == doctest::Approx(80.0).epsilon(1e-15));
  CHECK(ceil_count(warmup_batch(1.0, 0.1, 1.0, 0.5)) == 80);
  CHECK(gamma_theory(0.1, 1.0) == doctest::Approx(20.0 / 19.0).epsilon(1e-15));
  CHECK(warmup_steps(2.0, 0.5, 0.5, 1.0) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(ceil_count(warmup_steps(2.0, 0.5, 0.5, 1.0)) == 3);
  CHECK(warmup_steps(0.1, 0.5, 0.5, 1.0) == 0.0);
  CHECK(ceil_count(3.0000000001) == 3);
  CHECK(ceil_count(3.01) == 4);
  CHECK_THROWS_AS(ceil_count(-1.0), InvalidInput);
}

TEST_CASE("q = 1 drops the Q terms") {
  const auto terms = batch_terms(1.0, 0.1, 2.0);
  CHECK(terms[1] == 0.0);
  CHECK(beta_constant(1.0, 0.1, 100.0) == doctest::Approx(std::sqrt(std::log(20.0) / 200.0)));
  CHECK(b0_constant(1.0, 0.3, 5.0, 10.0, 1.0, 0.1) == doctest::Approx(2.0 * std::log(10.0)));
  auto in = feasible_inputs();
  in.q = 1.0;
  in.b = 0.01;
  const auto c = derive_constants(in);
  CHECK(c.b0 == doctest::Approx(2.0 * std::log(10.0)));
  CHECK(c.fixed_point_iterations <= 3);
}

TEST_CASE("derived constants for the reference set") {
  const auto c = derive_constants(feasible_inputs());
  CHECK(c.m_formula == 9);
  CHECK(c.m == 400);
  CHECK(c.beta == doctest::Approx(0.3059683538351020683).epsilon(1e-12));
  CHECK(c.alpha == doctest::Approx(0.19351137801024746829).epsilon(1e-12));
  CHECK(c.a0 == doctest::Approx(0.22389145037312322017).epsilon(1e-12));
  CHECK(c.b0 == doctest::Approx(6.5768135360716093331).epsilon(1e-9));
  CHECK(c.rho_hat == doctest::Approx(3774.2938875463502757).epsilon(1e-9));
  CHECK(c.b1 == doctest::Approx(29.37500974294065765).epsilon(1e-9));
  CHECK(c.gamma == doctest::Approx(8.0 / 7.0).epsilon(1e-15));
  CHECK(c.m0 == 2560);
  CHECK(c.T0 == 5);  // log(4) / log(4/3) = 4.82
}

TEST_CASE("infeasible and divergent parameter sets") {
  auto in = feasible_inputs();
  in.m_min = 1.0;
  try {
    derive_constants(in);
    FAIL("expected infeasible constants");
  } catch (const InfeasibleConstants& e) {
    CHECK(std::string(e.what()).find("a0") != std::string::npos);
  }
  in = feasible_inputs();
  in.b = 0.01;
  CHECK_THROWS_AS(derive_constants(in), InfeasibleConstants);
  in = feasible_inputs();
  in.eta = 1.0;
  CHECK_THROWS_AS(derive_constants(in), InvalidInput);
  in = feasible_inputs();
  in.C = 1.0;
  CHECK_THROWS_AS(derive_constants(in), InvalidInput);
}

TEST_CASE("monotonicity of m, m0 and gamma") {
  for (double q : {0.3, 0.5, 0.8}) {
    for (double C : {1.5, 2.0, 4.0}) {
      std::size_t prev = ~std::size_t{0};
      for (double delta : {0.01, 0.05, 0.1, 0.3}) {
        const auto m = batch_parameter(q, delta, C);
        CHECK(m <= prev);
        prev = m;
      }
    }
  }
  for (double G : {0.5, 1.0, 2.0}) {
    double prev = 0.0;
    for (double delta : {0.3, 0.1, 0.01}) {
      const double m0 = warmup_batch(G, delta, 1.0, 0.5);
      CHECK(m0 > prev);
      prev = m0;
    }
    CHECK(warmup_batch(G, 0.1, 1.0, 1.0) < warmup_batch(G, 0.1, 1.0, 0.5));
    CHECK(warmup_batch(G, 0.1, 2.0, 0.5) < warmup_batch(G, 0.1, 1.0, 0.5));
    CHECK(warmup_batch(2.0 * G, 0.1, 1.0, 0.5) == doctest::Approx(4.0 * warmup_batch(G, 0.1, 1.0, 0.5)));
  }
  double prev = 1.0;
  for (double eta : {0.01, 0.1, 0.5, 1.0}) {
    const double g = gamma_theory(eta, 1.0);
    CHECK(g > prev);
    prev = g;
  }
}

TEST_CASE("quadratic problem satisfies the PL inequality") {
  const auto p = make_pl_problem(10, 0.5, 2.0, 1.0, 7);
  CHECK(p.eigenvalues.front() == 0.5);
  CHECK(p.eigenvalues.back() == 2.0);
  CHECK(p.G() == 4.0);
  CHECK(p.F(p.w_star) == 0.0);
  for (double g : p.grad_F(p.w_star)) CHECK(g == 0.0);
  double r = 0.0;
  for (std::size_t i = 0; i < p.dim; ++i) r += (p.w0[i] - p.w_star[i]) * (p.w0[i] - p.w_star[i]);
  CHECK(std::sqrt(r) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> w(p.dim);
    for (std::size_t i = 0; i < p.dim; ++i) w[i] = p.w_star[i] + 3.0 * rng.normal();
    const auto g = p.grad_F(w);
    const double gn = std::inner_product(g.begin(), g.end(), g.begin(), 0.0);
    CHECK(p.F(w) <= gn / (2.0 * p.mu) * (1.0 + 1e-12));
    p.project(w);
    double d = 0.0;
    for (std::size_t i = 0; i < p.dim; ++i) d += (w[i] - p.w_star[i]) * (w[i] - p.w_star[i]);
    CHECK(std::sqrt(d) <= 1.0 + 1e-12);
    // sample gradients inside the ball stay below G
    const auto xi = p.sample_p(rng);
    std::vector<double> sg(p.dim, 0.0);
    accumulate_sample_grad(xi, p, w, 1.0, sg);
    CHECK(std::sqrt(std::inner_product(sg.begin(), sg.end(), sg.begin(), 0.0)) <= p.G());
  }

  const auto one = make_pl_problem(1, 0.5, 2.0, 1.0, 3);
  CHECK(one.eigenvalues == std::vector<double>{0.5});
  CHECK(std::abs(one.w0[0] - one.w_star[0]) == doctest::Approx(1.0));
  CHECK_THROWS_AS(make_pl_problem(0, 0.5, 2.0, 1.0, 3), InvalidInput);
  CHECK_THROWS_AS(make_pl_problem(3, 2.0, 0.5, 1.0, 3), InvalidInput);
}

TEST_CASE("sample loss is unbiased for F") {
  const auto p = make_pl_problem(5, 0.5, 2.0, 1.0, 2);
  Rng rng(5);
  std::vector<double> w = p.w0;
  double mean = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) mean += sample_loss(p.sample_p(rng), p, w) / n;
  CHECK(mean == doctest::Approx(p.F(w)).epsilon(0.01));
  Rng r(9);
  const auto xi = p.sample_p(r);
  std::vector<double> g(p.dim, 0.0);
  const double loss = accumulate_sample_grad(xi, p, w, 1.0, g);
  CHECK(loss == sample_loss(xi, p, w));
}

TEST_CASE("Q distributions") {
  const auto p = make_pl_problem(10, 0.5, 2.0, 1.0, 7);
  const auto zero = make_q_distribution(p, QKind::ShiftedMinimizer, 0.0, 7);
  const auto unit = make_q_distribution(p, QKind::ScaledLoss, 1.0, 7);
  Rng r1(3), r2(3), r3(3);
  for (int i = 0; i < 50; ++i) {
    const auto a = p.sample_p(r1);
    const auto b = zero.sample(p, r2);
    const auto c = unit.sample(p, r3);
    CHECK(sample_loss(a, p, p.w0) == sample_loss(b, p, p.w0));
    CHECK(sample_loss(a, p, p.w0) == sample_loss(c, p, p.w0));
    CHECK(b.from_q);
  }
  const auto far = make_q_distribution(p, QKind::ShiftedMinimizer, 4.0, 7);
  double len = 0.0;
  for (double v : far.offset) len += v * v;
  CHECK(std::sqrt(len) == doctest::Approx(4.0).epsilon(1e-12));
  Rng rng(11);
  const auto est = estimate_tsybakov(p, far, p.w_star, 0.1, 20000, rng);
  CHECK(est.probability < 0.05);
  CHECK_THROWS_AS(make_q_distribution(p, QKind::ScaledLoss, 0.0, 7), InvalidInput);
  CHECK_THROWS_AS(make_q_distribution(p, QKind::ShiftedMinimizer, -1.0, 7), InvalidInput);
  CHECK(q_kind_from_string(to_string(QKind::ScaledLoss)) == QKind::ScaledLoss);

  Rng mix(2);
  int from_q = 0;
  for (int i = 0; i < 10000; ++i) from_q += sample_mixture(p, far, 0.8, mix).from_q ? 1 : 0;
  CHECK(from_q > 1800);
  CHECK(from_q < 2200);
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(sample_mixture(p, far, 1.0, mix).from_q);
}

TEST_CASE("Tsybakov estimate and fit") {
  const auto p = make_pl_problem(10, 0.5, 2.0, 1.0, 7);
  const auto Q = make_q_distribution(p, QKind::ScaledLoss, 3.0, 7);
  Rng rng(4);
  for (std::size_t n : {1000u, 4000u, 16000u}) {
    const auto e = estimate_tsybakov(p, Q, p.w0, 0.2, n, rng);
    CHECK(e.n == n);
    const double ph = e.probability;
    CHECK(e.half_width == doctest::Approx(1.96 * std::sqrt(ph * (1.0 - ph) / static_cast<double>(n))));
  }
  CHECK_THROWS_AS(estimate_tsybakov(p, Q, p.w0, 0.2, 99, rng), InvalidInput);

  const std::vector<double> levels{0.01, 0.03, 0.1, 0.2};
  const auto fit = fit_tsybakov(p, Q, levels, 5000, 1);
  CHECK(fit.theta >= 1.0);
  CHECK(fit.levels == levels);
  REQUIRE(fit.probabilities.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(fit.probabilities[i] <= fit.b * std::pow(levels[i], fit.theta) * (1.0 + 1e-12));
  }
  const auto far = make_q_distribution(p, QKind::ShiftedMinimizer, 4.0, 7);
  const auto none = fit_tsybakov(p, far, levels, 2000, 1);
  CHECK(none.b == 0.0);
  CHECK(none.theta == 1.0);
  CHECK_THROWS_AS(fit_tsybakov(p, Q, std::vector<double>{5.0}, 1000, 1), InvalidInput);
}

TEST_CASE("verify_run bookkeeping") {
  const auto p = make_pl_problem(10, 0.5, 2.0, 1.0, 7);
  auto in = feasible_inputs();
  in.G = p.G();
  in.F0 = p.F(p.w0);
  const auto c = derive_constants(in);
  const auto Q = make_q_distribution(p, QKind::ShiftedMinimizer, 4.0, 7);
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto r = verify_run(p, Q, c, 6, seeds);
  CHECK(r.predicted_pass == doctest::Approx(1.0 - 25.0 * 0.1));
  CHECK(r.B_upper == doctest::Approx(c.b0 * 400.0));
  REQUIRE(r.runs.size() == 3);
  for (const auto& run : r.runs) {
    std::size_t total = c.T0 * c.m0;
    for (std::size_t t = 0; t < 6; ++t) {
      total += run.batch[t];
      CHECK(run.A_rho[t] + run.B_rho[t] <= run.batch[t]);
      CHECK(run.envelope[t] == doctest::Approx(c.rho_hat * std::pow(c.gamma, -static_cast<double>(t + 1))));
      CHECK(run.rho[t] == doctest::Approx(2.0 * c.rho_hat * std::pow(c.gamma, -static_cast<double>(t))));
    }
    CHECK(run.batch[0] == 400);
    CHECK(run.samples_consumed == total);
    CHECK(run.samples_consumed <= r.sample_bound);
  }
  // Determinism per seed.
  const auto again = verify_run(p, Q, c, 6, seeds);
  CHECK(report_json(r) == report_json(again));

  const auto j = nlohmann::json::parse(report_json(r));
  for (const auto& s : j["seeds"]) {
    std::vector<std::string> keys;
    for (auto it = s.begin(); it != s.end(); ++it) keys.push_back(it.key());
    std::sort(keys.begin(), keys.end());
    CHECK(keys == std::vector<std::string>{"A_rho", "B_rho", "F", "envelope", "pass_A", "pass_B",
                                            "pass_envelope", "seed", "steps"});
  }
  CHECK(j.contains("constants"));
  CHECK_THROWS_AS(verify_run(p, Q, c, 0, seeds), InvalidInput);

  RunOptions plain;
  plain.truncate = false;
  const auto sgd = run_theory(p, Q, c, 3, 0, plain);
  for (std::size_t t = 0; t < 3; ++t) CHECK(sgd.A_rho[t] + sgd.B_rho[t] == sgd.batch[t]);
  RunOptions tight;
  tight.n_cap = 500;
  CHECK_THROWS_AS(run_theory(p, Q, c, 6, 0, tight), CapExceeded);
}
