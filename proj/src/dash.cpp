#include "dashssl/dash.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "dashssl/errors.hpp"

namespace dashssl::dash {

using augment::AugmentPolicy;
using data::Example;
using models::Model;
using models::ParamVector;

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Selection by loss (dynamic threshold) or by confidence (fixed threshold).
struct SelectionRule {
  bool by_loss = true;
  double level = kInfinity;

  bool accepts(const ScoredExample& s) const {
    return by_loss ? s.loss <= level : augment::confidence_selected(s.confidence, level);
  }
};

std::vector<double> labeled_target(const Example& e, std::size_t num_classes) {
  if (!e.true_label) throw InvalidInput("labeled example without a label");
  return models::one_hot(static_cast<std::size_t>(*e.true_label), num_classes);
}

// Scores each unlabeled example, applies the rule, and returns the truncated
// mean with or without the labeled term.
TruncatedGradient evaluate_batch(const Model& model, std::span<const Example> batch,
                                 std::span<const Example> labeled, bool include_labeled,
                                 const SelectionRule& rule, const AugmentPolicy& policy, Rng& rng,
                                 const UnlabeledOptions& options) {
  const std::size_t dim = model.params().size();
  std::vector<ScoredExample> scored;
  scored.reserve(batch.size());
  for (const auto& e : batch) {
    Rng example_rng(rng.next_u64());
    scored.push_back(score_unlabeled(model, e.x, policy, example_rng, options));
  }

  std::vector<std::uint8_t> mask(scored.size(), 0);
  for (std::size_t i = 0; i < scored.size(); ++i) mask[i] = rule.accepts(scored[i]) ? 1 : 0;

  TruncatedGradient out;
  auto& stats = out.stats;
  stats.n_sampled = batch.size();
  stats.rho_t = rule.by_loss ? rule.level : -std::log(rule.level);
  std::vector<std::vector<double>> rows(scored.size());
  double selected_loss = 0.0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (!mask[i]) continue;
    const auto& s = scored[i];
    rows[i].assign(dim, 0.0);
    models::accumulate_loss_grad(model, s.view, s.target, 1.0, rows[i]);
    selected_loss += s.loss;
    ++stats.n_selected;
    const auto& e = batch[i];
    if (e.true_label && static_cast<std::size_t>(*e.true_label) == s.hard_index) {
      ++stats.n_selected_correct_pseudo;
    } else {
      ++stats.n_selected_wrong_pseudo;
    }
    if (e.provenance == data::Provenance::UnlabeledQ) {
      ++stats.n_selected_Q;
    } else {
      ++stats.n_selected_P;
    }
  }
  stats.zero_selection = stats.n_selected == 0;
  stats.unlabeled_loss = stats.n_selected > 0 ? selected_loss / static_cast<double>(stats.n_selected) : 0.0;

  std::vector<double> labeled_sum;
  std::size_t n_labeled = 0;
  if (include_labeled && !labeled.empty()) {
    labeled_sum.assign(dim, 0.0);
    for (const auto& e : labeled) {
      Rng example_rng(rng.next_u64());
      const auto view = augment::weak_augment(e.x, policy, example_rng);
      models::accumulate_loss_grad(model, view, labeled_target(e, model.num_classes()), 1.0, labeled_sum);
    }
    n_labeled = labeled.size();
  }
  out.grad = model.params().zeros_like();
  out.grad.values = combine_truncated(rows, mask, labeled_sum, n_labeled, dim);
  return out;
}

std::vector<const Example*> labeled_batch(std::span<const Example> labeled, std::size_t size, Rng& rng) {
  std::vector<const Example*> out;
  if (size >= labeled.size()) {
    for (const auto& e : labeled) out.push_back(&e);
    return out;
  }
  std::vector<std::size_t> idx(labeled.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < size; ++i) {
    std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
    out.push_back(&labeled[idx[i]]);
  }
  return out;
}

// Mean weakly augmented supervised loss over batch, gradient scaled by scale.
double supervised_term(const Model& model, const std::vector<const Example*>& batch, const AugmentPolicy& policy,
                       Rng& rng, double scale, std::span<double> grad) {
  double total = 0.0;
  const double per = scale / static_cast<double>(batch.size());
  for (const Example* e : batch) {
    const auto view = augment::weak_augment(e->x, policy, rng);
    total += models::accumulate_loss_grad(model, view, labeled_target(*e, model.num_classes()), per, grad);
  }
  return total / static_cast<double>(batch.size());
}

double mean_clean_loss(const Model& model, std::span<const Example> labeled) {
  double total = 0.0;
  for (const auto& e : labeled) {
    total += models::cross_entropy(labeled_target(e, model.num_classes()), models::forward(model, e.x));
  }
  return total / static_cast<double>(labeled.size());
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void put_u64_le(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(bytes.data(), bytes.size());
}

std::uint64_t get_u64_le(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InvalidInput("truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void ThresholdSchedule::validate() const {
  if (!(C > 0.0)) throw InvalidInput("threshold multiplier C must be positive");
  if (!(gamma > 1.0)) throw InvalidInput("threshold decay gamma must exceed 1");
  if (!(rho_hat > 0.0)) throw InvalidInput("rho_hat must be positive");
  if (!(floor >= 0.0)) throw InvalidInput("threshold floor must be nonnegative");
  if (decay_every == 0) throw InvalidInput("decay_every must be at least 1");
  if (steps_per_epoch == 0) throw InvalidInput("steps_per_epoch must be at least 1");
}

double threshold(std::size_t t, const ThresholdSchedule& s) {
  if (t < 1) throw InvalidInput("threshold step index starts at 1");
  s.validate();
  const std::size_t epoch = (t - 1) / s.steps_per_epoch;
  if (epoch < s.activation_epoch) return kInfinity;
  std::size_t k = 0;
  if (s.cadence == DecayCadence::PerIteration) {
    k = (t - 1) - s.activation_epoch * s.steps_per_epoch;
  } else {
    k = (epoch - s.activation_epoch) / s.decay_every;
  }
  const double value = s.C * std::pow(s.gamma, -static_cast<double>(k)) * s.rho_hat;
  return std::max(value, s.floor);
}

std::vector<std::uint8_t> select(std::span<const double> losses, double rho) {
  std::vector<std::uint8_t> mask(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) mask[i] = losses[i] <= rho ? 1 : 0;
  return mask;
}

double rho_hat_theoretical(const RhoHatInputs& in) {
  if (!(in.a > 0.0 && in.G > 0.0 && in.delta > 0.0 && in.mu > 0.0 && in.m > 0.0 && in.b0 >= 0.0)) {
    throw InvalidInput("rho_hat_theoretical needs positive a, G, delta, mu, m and nonnegative b0");
  }
  if (!(in.a0 > 0.0)) {
    throw InfeasibleConstants("a0 = " + std::to_string(in.a0) + " <= 0 makes the selection bound vacuous");
  }
  const double second = 4.0 * in.G * in.G * (1.0 + in.delta * in.b0 * in.m) / (in.delta * in.mu * in.a0 * in.m);
  return std::max(in.a, second);
}

double estimate_rho_hat_practical(std::span<const double> per_example_losses) {
  if (per_example_losses.empty()) throw InvalidInput("rho_hat estimate needs labeled losses");
  double total = 0.0;
  for (double v : per_example_losses) total += v;
  return total / static_cast<double>(per_example_losses.size());
}

double estimate_rho_hat_practical(const Model& model, std::span<const Example> labeled) {
  if (labeled.empty()) throw InvalidInput("rho_hat estimate needs a nonempty labeled set");
  std::vector<double> losses;
  losses.reserve(labeled.size());
  for (const auto& e : labeled) {
    losses.push_back(models::cross_entropy(labeled_target(e, model.num_classes()), models::forward(model, e.x)));
  }
  return estimate_rho_hat_practical(losses);
}

std::size_t theory_batch_size(std::size_t t, double m, double gamma, std::size_t cap) {
  if (t < 1) throw InvalidInput("batch step index starts at 1");
  const double requested = m * std::pow(gamma, static_cast<double>(t - 1));
  // Tolerance keeps exact products such as 5 * 2^3 from rounding up.
  const double n = std::ceil(requested - 1e-9);
  if (!(n <= static_cast<double>(cap))) throw CapExceeded(t, requested, cap);
  return static_cast<std::size_t>(n);
}

std::vector<double> combine_truncated(const std::vector<std::vector<double>>& per_example,
                                      std::span<const std::uint8_t> mask,
                                      std::span<const double> labeled_sum, std::size_t n_labeled,
                                      std::size_t dim) {
  if (mask.size() != per_example.size()) throw InvalidInput("mask and gradient rows differ in length");
  std::vector<double> out(dim, 0.0);
  std::size_t count = n_labeled;
  for (std::size_t i = 0; i < per_example.size(); ++i) {
    if (!mask[i]) continue;
    if (per_example[i].size() != dim) throw InvalidInput("selected gradient row has the wrong dimension");
    for (std::size_t j = 0; j < dim; ++j) out[j] += per_example[i][j];
    ++count;
  }
  if (!labeled_sum.empty()) {
    for (std::size_t j = 0; j < dim; ++j) out[j] += labeled_sum[j];
  }
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);
  for (double& v : out) v *= inv;
  return out;
}

ScoredExample score_unlabeled(const Model& model, std::span<const double> x, const AugmentPolicy& policy,
                              Rng& rng, const UnlabeledOptions& options) {
  ScoredExample s;
  std::vector<double> h;
  if (options.source == PseudoLabelSource::WeakStrong) {
    const auto weak = augment::weak_augment(x, policy, rng);
    h = models::softmax(models::forward(model, weak));
    s.view = augment::strong_augment(x, policy, rng);
  } else {
    s.view.assign(x.begin(), x.end());
    h = models::softmax(models::forward(model, s.view));
  }
  s.hard_index = augment::argmax(h);
  s.confidence = h[s.hard_index];
  s.target = options.soft_labels ? augment::sharpen(h, options.temperature)
                                 : models::one_hot(s.hard_index, model.num_classes());
  s.loss = models::cross_entropy(s.target, models::forward(model, s.view));
  return s;
}

TruncatedGradient truncated_gradient(const Model& model, std::span<const Example> batch, double rho_t,
                                     const AugmentPolicy& policy, Rng& rng, const UnlabeledOptions& options) {
  if (batch.empty()) throw InvalidInput("truncated_gradient needs a nonempty batch");
  return evaluate_batch(model, batch, {}, false, SelectionRule{true, rho_t}, policy, rng, options);
}

TruncatedGradient truncated_gradient_with_labeled(const Model& model, std::span<const Example> unlabeled,
                                                  std::span<const Example> labeled, double rho_t,
                                                  const AugmentPolicy& policy, Rng& rng,
                                                  const UnlabeledOptions& options) {
  if (unlabeled.empty()) {
    throw InvalidInput("batch size n_t must exceed the labeled count N_l = " + std::to_string(labeled.size()));
  }
  return evaluate_batch(model, unlabeled, labeled, true, SelectionRule{true, rho_t}, policy, rng, options);
}

std::vector<double> run_sgd(std::vector<double> w, std::size_t steps, double lr, const BatchGradFn& grad_fn,
                            const ProjectFn& project, const std::string& stage) {
  std::vector<double> grad(w.size());
  for (std::size_t step = 0; step < steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = grad_fn(w, step, grad);
    if (!std::isfinite(loss) || !all_finite(grad)) throw DivergenceError(stage, step + 1);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * grad[j];
    if (project) project(w);
    if (!all_finite(w)) throw DivergenceError(stage, step + 1);
  }
  return w;
}

std::string to_string(Mode m) { return m == Mode::Theory ? "theory" : "practice"; }
std::string to_string(GradientForm g) {
  return g == GradientForm::UnlabeledOnly ? "unlabeled-only" : "with-labeled";
}
std::string to_string(LrSchedule s) { return s == LrSchedule::Constant ? "constant" : "cosine"; }
std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Dash: return "dash";
    case Algorithm::FixMatch: return "fixmatch";
    case Algorithm::PseudoLabel: return "pl";
    case Algorithm::DashPL: return "dash-pl";
  }
  return "dash";
}

Mode mode_from_string(const std::string& s) {
  if (s == "theory") return Mode::Theory;
  if (s == "practice") return Mode::Practice;
  throw InvalidInput("unknown mode '" + s + "'");
}
GradientForm gradient_form_from_string(const std::string& s) {
  if (s == "unlabeled-only") return GradientForm::UnlabeledOnly;
  if (s == "with-labeled") return GradientForm::WithLabeled;
  throw InvalidInput("unknown gradient form '" + s + "'");
}
LrSchedule lr_schedule_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw InvalidInput("unknown lr schedule '" + s + "'");
}
Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dash") return Algorithm::Dash;
  if (s == "fixmatch") return Algorithm::FixMatch;
  if (s == "pl") return Algorithm::PseudoLabel;
  if (s == "dash-pl") return Algorithm::DashPL;
  throw InvalidInput("unknown algorithm '" + s + "'");
}

void DashConfig::validate() const {
  if (!(eta0 > 0.0) || !(eta > 0.0)) throw InvalidInput("learning rates must be positive");
  if (m0 == 0 || !(m >= 1.0)) throw InvalidInput("batch parameters m0 and m must be at least 1");
  if (!(schedule.C > 1.0)) throw InvalidInput("threshold multiplier C must exceed 1");
  schedule.validate();
  if (fixed_rho_hat && !(*fixed_rho_hat > 0.0)) throw InvalidInput("rho_hat must be positive");
  if (!(lambda_u >= 0.0)) throw InvalidInput("lambda_u must be nonnegative");
  if (!(sharpen_temperature > 0.0)) throw InvalidInput("sharpen_temperature must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must lie in [0, 1)");
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidInput("tau must lie in (0, 1)");
  if (eval_every == 0) throw InvalidInput("eval_every must be at least 1");
  if (mode == Mode::Theory && smoothness) {
    if (eta0 * *smoothness > 1.0) throw InvalidInput("theory mode requires eta0 * L <= 1");
    if (eta * *smoothness > 1.0) throw InvalidInput("theory mode requires eta * L <= 1");
  }
}

DashConfig practice_defaults() { return DashConfig{}; }

Model warmup(const Model& init, std::span<const Example> labeled, const DashConfig& config,
             const AugmentPolicy& policy) {
  if (labeled.empty()) throw InvalidInput("warm-up needs a nonempty labeled set");
  Model model = init;
  if (config.T0 == 0) return model;
  Rng rng = Rng::derive(config.seed, 1);
  Model probe = init;
  auto grad_fn = [&](std::span<const double> w, std::size_t, std::span<double> grad) {
    std::copy(w.begin(), w.end(), probe.params().values.begin());
    const auto batch = labeled_batch(labeled, config.m0, rng);
    return supervised_term(probe, batch, policy, rng, 1.0, grad);
  };
  model.params().values = run_sgd(init.params().values, config.T0, config.eta0, grad_fn);
  return model;
}

double classification_error(const Model& model, std::span<const Example> examples) {
  if (examples.empty()) return std::nan("");
  std::size_t wrong = 0;
  for (const auto& e : examples) {
    const auto logits = models::forward(model, e.x);
    if (!e.true_label || augment::argmax(logits) != static_cast<std::size_t>(*e.true_label)) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(examples.size());
}

TrainResult train_ssl(const data::DatasetBundle& bundle, const Model& init, const DashConfig& config,
                      const AugmentPolicy& policy) {
  config.validate();
  policy.validate();
  if (bundle.labeled.empty()) throw InvalidInput("training needs labeled data");
  if (bundle.unlabeled.empty()) throw InvalidInput("training needs unlabeled data");

  TrainResult result{init, init, 0.0, {}};
  result.warmup_model = warmup(init, bundle.labeled, config, policy);
  Model& model = result.model;
  model = result.warmup_model;
  result.rho_hat = config.fixed_rho_hat ? *config.fixed_rho_hat
                                        : estimate_rho_hat_practical(model, bundle.labeled);

  const bool theory = config.mode == Mode::Theory;
  const bool dynamic = config.algorithm == Algorithm::Dash || config.algorithm == Algorithm::DashPL;
  const std::size_t n_u = bundle.unlabeled.size();
  const std::size_t n_l = bundle.labeled.size();

  ThresholdSchedule schedule = config.schedule;
  schedule.rho_hat = std::max(result.rho_hat, std::numeric_limits<double>::min());
  const auto practice_batch = static_cast<std::size_t>(std::llround(config.m));
  const std::size_t steps_per_epoch = theory ? 1 : std::max<std::size_t>(1, (n_u + practice_batch - 1) / practice_batch);
  if (theory) {
    schedule.cadence = DecayCadence::PerIteration;
    schedule.activation_epoch = 0;
    schedule.steps_per_epoch = 1;
    schedule.floor = 0.0;
  } else {
    schedule.steps_per_epoch = steps_per_epoch;
  }

  UnlabeledOptions options;
  options.source = (config.algorithm == Algorithm::PseudoLabel || config.algorithm == Algorithm::DashPL)
                       ? PseudoLabelSource::Clean
                       : PseudoLabelSource::WeakStrong;
  options.temperature = config.sharpen_temperature;

  data::MixtureStream stream(bundle, Rng::derive(config.seed, 2).next_u64());
  Rng labeled_rng = Rng::derive(config.seed, 4);
  std::vector<double> velocity(model.params().size(), 0.0);
  std::vector<Example> batch;
  std::size_t consumed = 0;
  double last_test_error = classification_error(model, bundle.test);

  for (std::size_t t = 1; t <= config.T; ++t) {
    Rng step_rng = Rng::derive(config.seed, 3, t);
    const double lr = (theory || config.lr_schedule == LrSchedule::Constant)
                          ? config.eta
                          : config.eta * std::cos(7.0 * std::numbers::pi * static_cast<double>(t - 1) /
                                                  (16.0 * static_cast<double>(config.T)));

    std::size_t batch_size = practice_batch;
    if (theory) {
      const std::size_t n_t = theory_batch_size(t, config.m, schedule.gamma, config.n_cap);
      if (config.gradient_form == GradientForm::WithLabeled) {
        if (n_t <= n_l) {
          throw InvalidInput("n_t = " + std::to_string(n_t) + " must exceed N_l = " + std::to_string(n_l) +
                             " for the with-labeled gradient");
        }
        batch_size = n_t - n_l;
      } else {
        batch_size = n_t;
      }
    }
    batch.clear();
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(stream.next());

    const std::size_t epoch = theory ? consumed / n_u : (t - 1) / steps_per_epoch;
    const double rho_t = dynamic ? threshold(t, schedule) : config.tau;
    options.soft_labels = dynamic && !theory && rho_t > schedule.floor;

    const SelectionRule rule{dynamic, rho_t};
    const bool with_labeled = config.gradient_form == GradientForm::WithLabeled;
    auto term = evaluate_batch(model, batch, bundle.labeled, with_labeled, rule, policy, step_rng, options);

    std::vector<double> g = std::move(term.grad.values);
    if (!theory && !with_labeled) {
      for (double& v : g) v *= config.lambda_u;
      const auto sup_batch = labeled_batch(bundle.labeled, config.m0, labeled_rng);
      supervised_term(model, sup_batch, policy, step_rng, 1.0, g);
    }
    auto& w = model.params().values;
    // Theory mode is the plain update w - eta g.
    const double momentum = theory ? 0.0 : config.momentum;
    if (!theory && config.weight_decay > 0.0) {
      for (std::size_t j = 0; j < w.size(); ++j) g[j] += config.weight_decay * w[j];
    }

    SelectionStats stats = term.stats;
    stats.step = t;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.labeled_train_loss = mean_clean_loss(model, bundle.labeled);

    for (std::size_t j = 0; j < w.size(); ++j) {
      velocity[j] = momentum * velocity[j] + g[j];
      w[j] -= lr * velocity[j];
    }
    if (!all_finite(w) || !std::isfinite(stats.labeled_train_loss)) throw DivergenceError("selection", t);

    if (t % config.eval_every == 0 || t == config.T) last_test_error = classification_error(model, bundle.test);
    stats.test_error = last_test_error;
    consumed += batch_size;
    result.log.push_back(stats);
  }
  return result;
}

TrainResult dash_train(const data::DatasetBundle& bundle, const Model& init, const DashConfig& config,
                       const AugmentPolicy& policy) {
  if (config.algorithm != Algorithm::Dash && config.algorithm != Algorithm::DashPL) {
    throw InvalidInput("dash_train runs the dynamic-threshold algorithms only");
  }
  return train_ssl(bundle, init, config, policy);
}

void write_metrics_csv(std::ostream& out, std::span<const SelectionStats> rows) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << r.step << ',' << r.epoch << ',' << format_double(r.rho_t) << ',' << r.n_sampled << ','
        << r.n_selected << ',' << r.n_selected_correct_pseudo << ',' << r.n_selected_wrong_pseudo << ','
        << r.n_selected_P << ',' << r.n_selected_Q << ',' << format_double(r.labeled_train_loss) << ','
        << format_double(r.unlabeled_loss) << ',' << format_double(r.test_error) << ','
        << format_double(r.lr) << '\n';
  }
}

std::vector<SelectionStats> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty metrics file");
  std::vector<std::string> columns;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) columns.push_back(c);
  }
  std::vector<std::string> expected;
  {
    std::stringstream ss(kMetricsHeader);
    std::string c;
    while (std::getline(ss, c, ',')) expected.push_back(c);
  }
  for (const auto& name : expected) {
    if (std::find(columns.begin(), columns.end(), name) == columns.end()) {
      throw InvalidInput("metrics file is missing column '" + name + "'");
    }
  }
  if (columns != expected) throw InvalidInput("metrics columns are out of order");

  std::vector<SelectionStats> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) f.push_back(c);
    if (f.size() != expected.size()) throw InvalidInput("metrics row has wrong arity: " + line);
    auto u = [&](std::size_t i) { return static_cast<std::size_t>(std::stoull(f[i])); };
    auto d = [&](std::size_t i) { return std::strtod(f[i].c_str(), nullptr); };
    SelectionStats r;
    r.step = u(0);
    r.epoch = u(1);
    r.rho_t = d(2);
    r.n_sampled = u(3);
    r.n_selected = u(4);
    r.n_selected_correct_pseudo = u(5);
    r.n_selected_wrong_pseudo = u(6);
    r.n_selected_P = u(7);
    r.n_selected_Q = u(8);
    r.labeled_train_loss = d(9);
    r.unlabeled_loss = d(10);
    r.test_error = d(11);
    r.lr = d(12);
    r.zero_selection = r.n_selected == 0;
    rows.push_back(r);
  }
  return rows;
}

void write_checkpoint(std::ostream& out, const ParamVector& params) {
  out.write("DASHMODL", 8);
  put_u64_le(out, params.values.size());
  for (double v : params.values) put_u64_le(out, std::bit_cast<std::uint64_t>(v));
}

std::vector<double> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || std::string(magic.data(), magic.size()) != "DASHMODL") throw InvalidInput("bad checkpoint magic");
  const std::uint64_t n = get_u64_le(in);
  std::vector<double> values;
  values.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) values.push_back(std::bit_cast<double>(get_u64_le(in)));
  return values;
}

}  // namespace dashssl::dash
