#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dashssl/dash.hpp"
#include "dashssl/errors.hpp"

using namespace dashssl;
using namespace dashssl::dash;

namespace {

data::DatasetBundle small_bundle(std::uint64_t seed, double q = 0.8) {
  const auto full = data::make_two_moons(208, 0.1, seed);
  data::SplitSpec spec;
  spec.labels_per_class = 4;
  spec.q = q;
  spec.ood = data::OodKind::LabelFlip;
  auto b = data::split_ssl(full, spec, seed);
  b.test = data::make_two_moons(100, 0.1, seed + 1);
  return b;
}

models::Model seeded_mlp(std::uint64_t seed) {
  auto m = models::Model::mlp(2, 6, 2);
  Rng rng(seed);
  m.initialize(rng);
  return m;
}

const augment::AugmentPolicy kClean = augment::AugmentPolicy::make(0.0, 0.0, 0.0);

// Clean-view hard pseudo label and its per-example gradient.
models::LossGrad clean_example(const models::Model& m, const std::vector<double>& x) {
  const auto target = models::one_hot(augment::argmax(models::softmax(models::forward(m, x))), m.num_classes());
  return models::loss_and_grad(m, std::vector<models::TrainingPair>{{x, target}});
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol);
}

void check_stats(const SelectionStats& s) {
  CHECK(s.n_selected == s.n_selected_P + s.n_selected_Q);
  CHECK(s.n_selected == s.n_selected_correct_pseudo + s.n_selected_wrong_pseudo);
  CHECK(s.n_selected <= s.n_sampled);
  CHECK(s.zero_selection == (s.n_selected == 0));
}

}  // namespace

TEST_CASE("threshold: worked values") {
  ThresholdSchedule s;
  s.C = 1.0001;
  s.gamma = 1.27;
  s.rho_hat = 1.0;
  CHECK(threshold(1, s) == 1.0001);
  s.C = 1.0;
  s.gamma = 2.0;
  s.rho_hat = 512.0;
  CHECK(threshold(10, s) == 1.0);
  s.floor = 0.05;
  s.rho_hat = 0.03;
  CHECK(threshold(1, s) == 0.05);
  CHECK_THROWS_AS(threshold(0, s), InvalidInput);
  s.gamma = 1.0;
  CHECK_THROWS_AS(threshold(1, s), InvalidInput);
}

TEST_CASE("threshold: practice cadence with activation and floor") {
  ThresholdSchedule s{1.0001, 1.27, 0.5, 0.05, 10, DecayCadence::EveryNEpochs, 9, 16};
  for (std::size_t t = 1; t <= 160; ++t) CHECK(std::isinf(threshold(t, s)));
  CHECK(threshold(161, s) == doctest::Approx(1.0001 * 0.5));
  CHECK(threshold(161 + 9 * 16 - 1, s) == threshold(161, s));
  CHECK(threshold(161 + 9 * 16, s) == doctest::Approx(1.0001 * 0.5 / 1.27).epsilon(1e-14));
  double prev = kInfinity;
  for (std::size_t t = 1; t <= 5000; ++t) {
    const double r = threshold(t, s);
    CHECK(r <= prev);
    CHECK(r >= 0.05);
    prev = r;
  }
  CHECK(prev == 0.05);
}

TEST_CASE("threshold: ratio exactly 1/gamma per period without floor") {
  for (double g : {1.1, 1.27, 2.0}) {
    ThresholdSchedule s;
    s.C = 1.5;
    s.gamma = g;
    s.rho_hat = 3.0;
    for (std::size_t t = 1; t < 100; ++t) {
      CHECK(threshold(t + 1, s) / threshold(t, s) == doctest::Approx(1.0 / g).epsilon(1e-12));
    }
  }
}

TEST_CASE("select: inclusive indicator and permutation") {
  CHECK(select(std::vector<double>{0.01, 0.06}, 0.0513) == std::vector<std::uint8_t>{1, 0});
  CHECK(select(std::vector<double>{5.0, 1e300}, kInfinity) == std::vector<std::uint8_t>{1, 1});
  CHECK(select(std::vector<double>{0.25}, 0.25) == std::vector<std::uint8_t>{1});
  Rng rng(4);
  std::vector<double> losses(50);
  for (double& v : losses) v = rng.uniform();
  const auto mask = select(losses, 0.4);
  auto rev = losses;
  std::reverse(rev.begin(), rev.end());
  auto rmask = select(rev, 0.4);
  std::reverse(rmask.begin(), rmask.end());
  CHECK(mask == rmask);
  CHECK(select(losses, 0.4) == mask);
}

TEST_CASE("rho_hat: theoretical form") {
  // G=1, delta=0.1, mu=1, m=5, a0=0.05, b0=2, a=0.5 -> 320 (mpmath oracle)
  CHECK(rho_hat_theoretical({0.5, 1.0, 0.1, 1.0, 0.05, 2.0, 5.0}) == doctest::Approx(320.0).epsilon(1e-14));
  CHECK(rho_hat_theoretical({1e6, 1.0, 0.1, 1.0, 0.05, 2.0, 5.0}) == 1e6);
  const double one = rho_hat_theoretical({1e-9, 1.0, 0.1, 1.0, 0.05, 2.0, 5.0});
  const double two = rho_hat_theoretical({1e-9, 2.0, 0.1, 1.0, 0.05, 2.0, 5.0});
  CHECK(two == doctest::Approx(4.0 * one).epsilon(1e-14));
  CHECK_THROWS_AS(rho_hat_theoretical({0.5, 1.0, 0.1, 1.0, 0.0, 2.0, 5.0}), InfeasibleConstants);
  CHECK_THROWS_AS(rho_hat_theoretical({0.5, 1.0, 0.1, 1.0, -0.2, 2.0, 5.0}), InfeasibleConstants);
}

TEST_CASE("rho_hat: practical form") {
  CHECK(estimate_rho_hat_practical(std::vector<double>{1.0, 2.0, 3.0}) == 2.0);
  CHECK(estimate_rho_hat_practical(std::vector<double>{0.7}) == 0.7);
  CHECK_THROWS_AS(estimate_rho_hat_practical(std::vector<double>{}), InvalidInput);
  const auto b = small_bundle(3);
  const auto m = seeded_mlp(3);
  double total = 0.0;
  for (const auto& e : b.labeled) {
    total += models::cross_entropy(models::one_hot(*e.true_label, 2), models::forward(m, e.x));
  }
  CHECK(std::abs(estimate_rho_hat_practical(m, b.labeled) - total / 8.0) < 1e-12);
}

TEST_CASE("theory batch sizes and cap") {
  std::vector<std::size_t> n;
  for (std::size_t t = 1; t <= 4; ++t) n.push_back(theory_batch_size(t, 5.0, 2.0, 1000));
  CHECK(n == std::vector<std::size_t>{5, 10, 20, 40});
  CHECK(theory_batch_size(1, 4.2, 2.0, 1000) == 5);
  CHECK_THROWS_AS(theory_batch_size(10, 5.0, 2.0, 1000), CapExceeded);
  try {
    theory_batch_size(9, 5.0, 2.0, 1000);
  } catch (const CapExceeded& e) {
    CHECK(e.step() == 9);
  }
}

TEST_CASE("combine_truncated") {
  const std::vector<std::vector<double>> rows{{1.0, 2.0}, {3.0, 4.0}, {}};
  CHECK(combine_truncated(rows, std::vector<std::uint8_t>{1, 1, 0}, {}, 0, 2) == std::vector<double>{2.0, 3.0});
  CHECK(combine_truncated(rows, std::vector<std::uint8_t>{0, 0, 0}, {}, 0, 2) == std::vector<double>{0.0, 0.0});
  const std::vector<double> lab{6.0, 6.0};
  const auto mixed = combine_truncated(rows, std::vector<std::uint8_t>{1, 0, 0}, lab, 2, 2);
  CHECK(mixed[0] == doctest::Approx(7.0 / 3.0).epsilon(1e-15));
  CHECK(mixed[1] == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(combine_truncated(rows, std::vector<std::uint8_t>{0, 0, 1}, {}, 0, 2), InvalidInput);
}

TEST_CASE("truncated gradient against a brute-force recomputation") {
  const auto b = small_bundle(5);
  const auto m = seeded_mlp(5);
  std::vector<data::Example> batch(b.unlabeled.begin(), b.unlabeled.begin() + 8);

  std::vector<models::LossGrad> per;
  std::vector<double> losses;
  for (const auto& e : batch) {
    per.push_back(clean_example(m, e.x));
    losses.push_back(per.back().loss);
  }
  auto sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  const double rho = 0.5 * (sorted[2] + sorted[3]);

  Rng rng(1);
  const auto tg = truncated_gradient(m, batch, rho, kClean, rng);
  CHECK(tg.stats.n_selected == 3);
  std::vector<double> want(m.params().size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (losses[i] > rho) continue;
    for (std::size_t j = 0; j < want.size(); ++j) want[j] += per[i].grad.values[j] / 3.0;
  }
  check_close(tg.grad.values, want, 1e-12);
  check_stats(tg.stats);

  const double only = 0.5 * (sorted[0] + sorted[1]);
  const auto single = truncated_gradient(m, batch, only, kClean, rng);
  const auto idx = static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin());
  check_close(single.grad.values, per[idx].grad.values, 1e-12);

  const auto all = truncated_gradient(m, batch, kInfinity, kClean, rng);
  std::vector<std::vector<double>> targets;
  for (const auto& e : batch) {
    targets.push_back(models::one_hot(augment::argmax(models::softmax(models::forward(m, e.x))), 2));
  }
  std::vector<models::TrainingPair> pairs;
  for (std::size_t i = 0; i < batch.size(); ++i) pairs.push_back({batch[i].x, targets[i]});
  check_close(all.grad.values, models::loss_and_grad(m, pairs).grad.values, 1e-12);

  const auto none = truncated_gradient(m, batch, -1.0, kClean, rng);
  CHECK(none.stats.zero_selection);
  CHECK(std::all_of(none.grad.values.begin(), none.grad.values.end(), [](double v) { return v == 0.0; }));
  CHECK_THROWS_AS(truncated_gradient(m, std::vector<data::Example>{}, 1.0, kClean, rng), InvalidInput);
}

TEST_CASE("labeled-inclusive truncated gradient") {
  const auto b = small_bundle(6);
  const auto m = seeded_mlp(6);
  std::vector<data::Example> batch(b.unlabeled.begin(), b.unlabeled.begin() + 6);

  std::vector<double> labeled_mean(m.params().size(), 0.0);
  for (const auto& e : b.labeled) {
    const auto t = models::one_hot(*e.true_label, 2);
    const auto lg = models::loss_and_grad(m, std::vector<models::TrainingPair>{{e.x, t}});
    for (std::size_t j = 0; j < labeled_mean.size(); ++j) labeled_mean[j] += lg.grad.values[j] / 8.0;
  }
  Rng rng(2);
  const auto none = truncated_gradient_with_labeled(m, batch, b.labeled, -1.0, kClean, rng);
  CHECK(none.stats.n_selected == 0);
  check_close(none.grad.values, labeled_mean, 1e-12);

  // Recompute with every unlabeled example selected.
  std::vector<double> want(m.params().size(), 0.0);
  for (std::size_t j = 0; j < want.size(); ++j) want[j] = labeled_mean[j] * 8.0;
  for (const auto& e : batch) {
    const auto lg = clean_example(m, e.x);
    for (std::size_t j = 0; j < want.size(); ++j) want[j] += lg.grad.values[j];
  }
  for (double& v : want) v /= 14.0;
  const auto all = truncated_gradient_with_labeled(m, batch, b.labeled, kInfinity, kClean, rng);
  check_close(all.grad.values, want, 1e-12);

  // With no labeled data the two forms coincide exactly, noise included.
  const auto noisy = augment::AugmentPolicy::make(0.05, 0.2, 0.1);
  Rng r1(9), r2(9);
  const auto a = truncated_gradient(m, batch, 0.4, noisy, r1);
  const auto c = truncated_gradient_with_labeled(m, batch, std::vector<data::Example>{}, 0.4, noisy, r2);
  CHECK(a.grad.values == c.grad.values);

  CHECK_THROWS_AS(truncated_gradient_with_labeled(m, std::vector<data::Example>{}, b.labeled, 1.0, kClean, rng),
                  InvalidInput);
}

TEST_CASE("run_sgd: exact step and divergence") {
  auto quad = [](std::span<const double> w, std::size_t, std::span<double> g) {
    g[0] = w[0];
    return 0.5 * w[0] * w[0];
  };
  CHECK(run_sgd({2.0}, 1, 1.0, quad) == std::vector<double>{0.0});
  CHECK(run_sgd({2.0}, 0, 1.0, quad) == std::vector<double>{2.0});
  auto blow = [](std::span<const double> w, std::size_t, std::span<double> g) {
    g[0] = w[0] * 1e200;
    return w[0];
  };
  try {
    run_sgd({1.0}, 10, 1e200, blow);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() >= 1);
    CHECK(std::string(e.what()).find("warm-up") != std::string::npos);
  }
}

TEST_CASE("warm-up with T0 = 0 keeps the initial model") {
  const auto b = small_bundle(7);
  const auto m = seeded_mlp(7);
  DashConfig c;
  c.T0 = 0;
  CHECK(warmup(m, b.labeled, c, kClean).params().values == m.params().values);
  c.T0 = 20;
  CHECK(warmup(m, b.labeled, c, kClean).params().values != m.params().values);
  CHECK_THROWS_AS(warmup(m, std::vector<data::Example>{}, c, kClean), InvalidInput);
}

TEST_CASE("config validation") {
  DashConfig c;
  CHECK_NOTHROW(c.validate());
  c.mode = Mode::Theory;
  c.smoothness = 20.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c.smoothness = 1.0;
  CHECK_NOTHROW(c.validate());
  c.schedule.C = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  const auto d = practice_defaults();
  CHECK(d.schedule.gamma == 1.27);
  CHECK(d.schedule.floor == 0.05);
  CHECK(d.schedule.activation_epoch == 10);
  CHECK(d.schedule.decay_every == 9);
  CHECK(d.schedule.C == 1.0001);
  CHECK(d.sharpen_temperature == 0.5);
  CHECK(d.m == 64.0);
  CHECK(d.lambda_u == 1.0);
  CHECK(algorithm_from_string(to_string(Algorithm::DashPL)) == Algorithm::DashPL);
  CHECK_THROWS_AS(algorithm_from_string("mixmatch"), InvalidInput);
}

TEST_CASE("training loop: practice schedule, baselines, invariants, determinism") {
  const auto b = small_bundle(8);
  const auto m = seeded_mlp(8);
  const auto policy = augment::AugmentPolicy::make(0.05, 0.15, 0.0);
  DashConfig c;
  c.T0 = 5;
  c.m = 16;
  c.T = 13 * 25;  // 13 steps per epoch
  c.schedule.activation_epoch = 2;
  c.schedule.decay_every = 3;
  c.eval_every = 13;
  c.seed = 4;
  const auto r = train_ssl(b, m, c, policy);
  REQUIRE(r.log.size() == c.T);
  auto sched = c.schedule;
  sched.rho_hat = r.rho_hat;
  sched.steps_per_epoch = 13;
  double prev = kInfinity;
  for (const auto& s : r.log) {
    check_stats(s);
    CHECK(s.n_sampled == 16);
    CHECK(s.rho_t == threshold(s.step, sched));
    CHECK(s.rho_t <= prev);
    prev = s.rho_t;
  }
  CHECK(r.log.front().lr == c.eta);

  const auto again = train_ssl(b, m, c, policy);
  std::ostringstream x, y;
  write_metrics_csv(x, r.log);
  write_metrics_csv(y, again.log);
  CHECK(x.str() == y.str());
  CHECK(r.model.params().values == again.model.params().values);

  c.algorithm = Algorithm::FixMatch;
  const auto fm = train_ssl(b, m, c, policy);
  for (const auto& s : fm.log) CHECK(s.rho_t == doctest::Approx(-std::log(0.95)).epsilon(1e-15));
  c.algorithm = Algorithm::PseudoLabel;
  CHECK(train_ssl(b, m, c, policy).log.size() == c.T);
  CHECK_THROWS_AS(dash_train(b, m, c, policy), InvalidInput);

  c.algorithm = Algorithm::Dash;
  c.T = 0;
  const auto idle = train_ssl(b, m, c, policy);
  CHECK(idle.log.empty());
  CHECK(idle.model.params().values == idle.warmup_model.params().values);
}

TEST_CASE("training loop: theory mode") {
  const auto b = small_bundle(9);
  const auto m = seeded_mlp(9);
  DashConfig c;
  c.mode = Mode::Theory;
  c.m = 5;
  c.schedule.gamma = 2.0;
  c.schedule.C = 1.5;
  c.T = 4;
  c.T0 = 3;
  const auto r = train_ssl(b, m, c, kClean);
  std::vector<std::size_t> n;
  for (const auto& s : r.log) n.push_back(s.n_sampled);
  CHECK(n == std::vector<std::size_t>{5, 10, 20, 40});
  for (const auto& s : r.log) {
    CHECK(s.rho_t == doctest::Approx(1.5 * std::pow(2.0, -static_cast<double>(s.step - 1)) * r.rho_hat));
    CHECK(s.lr == c.eta);
  }

  c.T = 20;
  c.n_cap = 1000;
  CHECK_THROWS_AS(train_ssl(b, m, c, kClean), CapExceeded);

  c.T = 2;
  c.gradient_form = GradientForm::WithLabeled;
  CHECK_THROWS_AS(train_ssl(b, m, c, kClean), InvalidInput);  // n_1 = 5 <= N_l = 8
  c.m = 12;
  const auto wl = train_ssl(b, m, c, kClean);
  CHECK(wl.log[0].n_sampled == 4);
  CHECK(wl.log[1].n_sampled == 24 - 8);
}

TEST_CASE("metrics csv schema") {
  CHECK(std::string(kMetricsHeader) ==
        "step,epoch,rho_t,n_sampled,n_selected,n_sel_correct,n_sel_wrong,n_sel_P,n_sel_Q,labeled_loss,"
        "unlabeled_loss,test_error,lr");
  SelectionStats s;
  s.step = 3;
  s.rho_t = kInfinity;
  s.n_sampled = 10;
  s.n_selected = 4;
  s.n_selected_correct_pseudo = 3;
  s.n_selected_wrong_pseudo = 1;
  s.n_selected_P = 2;
  s.n_selected_Q = 2;
  s.labeled_train_loss = 0.25;
  s.lr = 0.06;
  std::stringstream ss;
  write_metrics_csv(ss, std::vector<SelectionStats>{s});
  const auto back = read_metrics_csv(ss);
  REQUIRE(back.size() == 1);
  CHECK(std::isinf(back[0].rho_t));
  CHECK(back[0].n_selected_Q == 2);
  CHECK(back[0].labeled_train_loss == 0.25);

  std::stringstream missing("step,epoch,rho_t\n1,0,1\n");
  try {
    read_metrics_csv(missing);
    FAIL("expected a schema error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("n_sampled") != std::string::npos);
  }
}

TEST_CASE("checkpoint layout") {
  models::ParamVector p;
  p.values = {1.5, -0.0, 3e-300};
  std::stringstream ss;
  write_checkpoint(ss, p);
  const auto bytes = ss.str();
  CHECK(bytes.size() == 16 + 3 * 8);
  CHECK(bytes.substr(0, 8) == "DASHMODL");
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);
  // 1.5 = 0x3FF8000000000000, little-endian
  CHECK(static_cast<unsigned char>(bytes[16 + 7]) == 0x3F);
  CHECK(static_cast<unsigned char>(bytes[16 + 6]) == 0xF8);
  const auto back = read_checkpoint(ss);
  CHECK(back.size() == 3);
  CHECK(back[0] == 1.5);
  CHECK(std::signbit(back[1]));
  CHECK(back[2] == 3e-300);
  std::stringstream bad("NOTAMODL");
  CHECK_THROWS_AS(read_checkpoint(bad), InvalidInput);
}
