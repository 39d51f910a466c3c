#include "dashssl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "dashssl/dash.hpp"
#include "dashssl/errors.hpp"

namespace dashssl::theory {

namespace {

using Json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> u(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
  }
  for (double& v : u) v /= norm;
  return u;
}

}  // namespace

void TheoryInputs::validate() const {
  if (!(G > 0.0)) throw InvalidInput("G must be positive");
  if (!(mu > 0.0 && L >= mu)) throw InvalidInput("need 0 < mu <= L");
  if (!(a > 0.0)) throw InvalidInput("a must be positive");
  if (!(b >= 0.0)) throw InvalidInput("b must be nonnegative");
  if (!(theta >= 1.0)) throw InvalidInput("theta must be at least 1");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("delta must lie in (0, 1)");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("q must lie in (0, 1]");
  if (!(C > 1.0)) throw InvalidInput("C must exceed 1");
  if (!(eta0 > 0.0 && eta0 * L <= 1.0)) throw InvalidInput("need 0 < eta0 <= 1/L");
  if (!(eta > 0.0 && eta * L <= 1.0)) throw InvalidInput("need 0 < eta <= 1/L");
  if (!(F0 >= 0.0) || !std::isfinite(F0)) throw InvalidInput("F0 must be finite and nonnegative");
  if (!(m_min >= 1.0) || !std::isfinite(m_min)) throw InvalidInput("m_min must be at least 1");
}

std::size_t ceil_count(double x) {
  if (!std::isfinite(x) || x < 0.0) throw InvalidInput("count must be finite and nonnegative");
  return static_cast<std::size_t>(std::ceil(x - 1e-9));
}

std::array<double, 3> batch_terms(double q, double delta, double C) {
  const double l = std::log(2.0 / delta);
  const double c = 1.0 - 1.0 / C;
  return {std::sqrt(l / (q * q)), q < 1.0 ? std::sqrt(l / ((1.0 - q) * (1.0 - q))) : 0.0,
          std::sqrt(l / (q * c * c))};
}

std::size_t batch_parameter(double q, double delta, double C) {
  const auto t = batch_terms(q, delta, C);
  return std::max<std::size_t>(1, ceil_count(std::max({t[0], t[1], t[2]})));
}

double beta_constant(double q, double delta, double m) {
  const double l = std::log(2.0 / delta);
  const double p_term = std::sqrt(l / (2.0 * q * q * m));
  const double q_term = q < 1.0 ? std::sqrt(l / (2.0 * (1.0 - q) * (1.0 - q) * m)) : 0.0;
  return std::max(p_term, q_term);
}

double alpha_constant(double q, double delta, double C, double m) {
  const double c = 1.0 - 1.0 / C;
  return std::sqrt(std::log(2.0 / delta) / (q * m * c * c));
}

double warmup_batch(double G, double delta, double mu, double a) { return 4.0 * G * G / (delta * mu * a); }

double warmup_steps(double F0, double a, double eta0, double mu) {
  if (F0 <= 0.0) return 0.0;
  const double v = std::log(2.0 * F0 / a) / std::log(1.0 / (1.0 - eta0 * mu));
  return std::max(0.0, v);
}

double gamma_theory(double eta, double mu) { return 1.0 / (1.0 - eta * mu / 2.0); }

double b0_constant(double q, double beta, double b, double rho_hat, double theta, double delta) {
  return 2.0 * ((1.0 - q) * (1.0 + beta) * b * std::pow(rho_hat, theta) + std::log(1.0 / delta));
}

TheoryConstants derive_constants(const TheoryInputs& in) {
  in.validate();
  TheoryConstants c;
  c.inputs = in;
  c.m_terms = batch_terms(in.q, in.delta, in.C);
  c.m_formula = batch_parameter(in.q, in.delta, in.C);
  c.m = std::max(c.m_formula, ceil_count(in.m_min));
  c.gamma = gamma_theory(in.eta, in.mu);
  c.T0_real = warmup_steps(in.F0, in.a, in.eta0, in.mu);
  c.T0 = ceil_count(c.T0_real);
  c.m0_real = warmup_batch(in.G, in.delta, in.mu, in.a);
  c.m0 = ceil_count(c.m0_real);

  const auto m = static_cast<double>(c.m);
  c.beta = beta_constant(in.q, in.delta, m);
  c.alpha = alpha_constant(in.q, in.delta, in.C, m);
  c.a0 = (1.0 - 1.0 / in.C) * (1.0 - c.beta) * (1.0 - c.alpha) * in.q;
  if (c.beta >= 1.0 || c.alpha >= 1.0) {
    std::string which;
    if (c.beta >= 1.0) which += "beta = " + fmt(c.beta) + " >= 1";
    if (c.alpha >= 1.0) which += std::string(which.empty() ? "" : ", ") + "alpha = " + fmt(c.alpha) + " >= 1";
    throw InfeasibleConstants("a0 = " + fmt(c.a0) + " is not a valid lower-bound rate: " + which + " at m = " +
                              std::to_string(c.m) + "; raise m_min");
  }
  if (!(c.a0 > 0.0)) throw InfeasibleConstants("a0 = " + fmt(c.a0) + " <= 0");

  double rho = in.a;
  bool converged = false;
  for (std::size_t it = 1; it <= 1000; ++it) {
    const double b0 = b0_constant(in.q, c.beta, in.b, rho, in.theta, in.delta);
    const double next = dash::rho_hat_theoretical({in.a, in.G, in.delta, in.mu, c.a0, b0, m});
    c.fixed_point_iterations = it;
    if (!std::isfinite(next)) {
      throw InfeasibleConstants("rho_hat/b0 fixed point diverged after " + std::to_string(it) +
                                " iterations (b = " + fmt(in.b) + ")");
    }
    const bool done = std::abs(next - rho) <= 1e-10 * std::max(1.0, std::abs(next));
    rho = next;
    if (done) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    throw InfeasibleConstants("rho_hat/b0 fixed point did not converge in 1000 iterations (last rho_hat = " +
                              fmt(rho) + ")");
  }
  c.rho_hat = rho;
  c.b0 = b0_constant(in.q, c.beta, in.b, rho, in.theta, in.delta);
  c.b1 = c.b0 / c.a0;
  return c;
}

double PLProblem::F(std::span<const double> w) const {
  double total = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double e = w[i] - w_star[i];
    total += eigenvalues[i] * e * e;
  }
  return 0.5 * total;
}

std::vector<double> PLProblem::grad_F(std::span<const double> w) const {
  std::vector<double> g(dim);
  for (std::size_t i = 0; i < dim; ++i) g[i] = eigenvalues[i] * (w[i] - w_star[i]);
  return g;
}

void PLProblem::project(std::span<double> w) const {
  double norm = 0.0;
  for (std::size_t i = 0; i < dim; ++i) norm += (w[i] - w_star[i]) * (w[i] - w_star[i]);
  norm = std::sqrt(norm);
  if (norm <= R) return;
  const double shrink = R / norm;
  for (std::size_t i = 0; i < dim; ++i) w[i] = w_star[i] + shrink * (w[i] - w_star[i]);
}

Sample PLProblem::sample_p(Rng& rng) const {
  Sample xi;
  xi.s.resize(dim);
  for (double& v : xi.s) v = rng.uniform(0.0, 2.0);
  xi.center = w_star;
  return xi;
}

double sample_loss(const Sample& xi, const PLProblem& problem, std::span<const double> w) {
  double total = 0.0;
  for (std::size_t i = 0; i < problem.dim; ++i) {
    const double e = w[i] - xi.center[i];
    total += problem.eigenvalues[i] * xi.s[i] * e * e;
  }
  return 0.5 * xi.factor * total;
}

double accumulate_sample_grad(const Sample& xi, const PLProblem& problem, std::span<const double> w, double scale,
                              std::span<double> grad) {
  double total = 0.0;
  for (std::size_t i = 0; i < problem.dim; ++i) {
    const double e = w[i] - xi.center[i];
    const double k = problem.eigenvalues[i] * xi.s[i];
    total += k * e * e;
    grad[i] += scale * xi.factor * k * e;
  }
  return 0.5 * xi.factor * total;
}

PLProblem make_pl_problem(std::size_t dim, double mu, double L, double R, std::uint64_t seed) {
  if (dim == 0) throw InvalidInput("dimension must be positive");
  if (!(mu > 0.0 && L >= mu)) throw InvalidInput("need 0 < mu <= L");
  if (!(R > 0.0)) throw InvalidInput("radius must be positive");
  PLProblem p;
  p.dim = dim;
  p.mu = mu;
  p.L = L;
  p.R = R;
  p.eigenvalues.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double frac = dim == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(dim - 1);
    p.eigenvalues[i] = mu * std::pow(L / mu, frac);
  }
  if (dim > 1) p.eigenvalues.back() = L;
  Rng rng = Rng::derive(seed, 100);
  p.w_star.resize(dim);
  for (double& v : p.w_star) v = rng.normal();
  const auto u = unit_vector(dim, rng);
  p.w0.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) p.w0[i] = p.w_star[i] + R * u[i];
  return p;
}

std::string to_string(QKind k) { return k == QKind::ShiftedMinimizer ? "shifted-minimizer" : "scaled-loss"; }

QKind q_kind_from_string(const std::string& s) {
  if (s == "shifted-minimizer") return QKind::ShiftedMinimizer;
  if (s == "scaled-loss") return QKind::ScaledLoss;
  throw InvalidInput("unknown Q kind '" + s + "'");
}

Sample QDistribution::sample(const PLProblem& problem, Rng& rng) const {
  Sample xi = problem.sample_p(rng);
  xi.from_q = true;
  if (kind == QKind::ShiftedMinimizer) {
    for (std::size_t i = 0; i < problem.dim; ++i) xi.center[i] += offset[i];
  } else {
    xi.factor = factor;
  }
  return xi;
}

QDistribution make_q_distribution(const PLProblem& problem, QKind kind, double param, std::uint64_t seed) {
  QDistribution Q;
  Q.kind = kind;
  if (kind == QKind::ShiftedMinimizer) {
    if (!(param >= 0.0) || !std::isfinite(param)) throw InvalidInput("offset length must be finite and >= 0");
    Rng rng = Rng::derive(seed, 200);
    Q.offset = unit_vector(problem.dim, rng);
    for (double& v : Q.offset) v *= param;
  } else {
    if (!(param > 0.0) || !std::isfinite(param)) throw InvalidInput("loss factor must be finite and positive");
    Q.factor = param;
  }
  return Q;
}

Sample sample_mixture(const PLProblem& problem, const QDistribution& Q, double q, Rng& rng) {
  const bool from_p = q >= 1.0 || rng.uniform() < q;
  return from_p ? problem.sample_p(rng) : Q.sample(problem, rng);
}

TsybakovEstimate estimate_tsybakov(const PLProblem& problem, const QDistribution& Q, std::span<const double> w,
                                   double F_value, std::size_t n, Rng& rng) {
  if (n < 100) throw InvalidInput("Tsybakov estimate needs at least 100 samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sample_loss(Q.sample(problem, rng), problem, w) <= F_value) ++hits;
  }
  TsybakovEstimate e;
  e.n = n;
  e.probability = static_cast<double>(hits) / static_cast<double>(n);
  e.half_width = 1.96 * std::sqrt(e.probability * (1.0 - e.probability) / static_cast<double>(n));
  return e;
}

TsybakovFit fit_tsybakov(const PLProblem& problem, const QDistribution& Q, std::span<const double> levels,
                         std::size_t n, std::uint64_t seed) {
  if (levels.empty()) throw InvalidInput("Tsybakov fit needs at least one level");
  Rng rng = Rng::derive(seed, 300);
  const auto u = unit_vector(problem.dim, rng);
  double curvature = 0.0;
  for (std::size_t i = 0; i < problem.dim; ++i) curvature += problem.eigenvalues[i] * u[i] * u[i];

  TsybakovFit fit;
  std::vector<double> lx, ly;
  for (double level : levels) {
    if (!(level > 0.0)) throw InvalidInput("Tsybakov levels must be positive");
    const double r = std::sqrt(2.0 * level / curvature);
    if (r > problem.R * (1.0 + 1e-12)) {
      throw InvalidInput("level " + fmt(level) + " lies outside the projection ball");
    }
    std::vector<double> w(problem.dim);
    for (std::size_t i = 0; i < problem.dim; ++i) w[i] = problem.w_star[i] + r * u[i];
    const auto est = estimate_tsybakov(problem, Q, w, level, n, rng);
    fit.levels.push_back(level);
    fit.probabilities.push_back(est.probability);
    if (est.probability > 0.0) {
      lx.push_back(std::log(level));
      ly.push_back(std::log(est.probability));
    }
  }
  if (lx.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxx += (lx[i] - mx) * (lx[i] - mx);
      sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx > 0.0) fit.theta = std::max(1.0, sxy / sxx);
  }
  fit.b = 0.0;
  for (std::size_t i = 0; i < fit.levels.size(); ++i) {
    fit.b = std::max(fit.b, fit.probabilities[i] / std::pow(fit.levels[i], fit.theta));
  }
  return fit;
}

TheoryTrace run_theory(const PLProblem& problem, const QDistribution& Q, const TheoryConstants& c, std::size_t T,
                       std::uint64_t seed, const RunOptions& options) {
  TheoryTrace trace;
  trace.seed = seed;
  const double q = c.inputs.q;

  Rng warm_rng = Rng::derive(seed, 11);
  auto warm_grad = [&](std::span<const double> w, std::size_t, std::span<double> grad) {
    double total = 0.0;
    const double scale = 1.0 / static_cast<double>(c.m0);
    for (std::size_t i = 0; i < c.m0; ++i) {
      total += accumulate_sample_grad(problem.sample_p(warm_rng), problem, w, scale, grad);
    }
    return total * scale;
  };
  auto project = [&](std::span<double> w) { problem.project(w); };
  std::vector<double> w = dash::run_sgd(problem.w0, c.T0, c.inputs.eta0, warm_grad, project, "warm-up");
  trace.F_warmup = problem.F(w);
  trace.samples_consumed = c.T0 * c.m0;

  dash::ThresholdSchedule schedule;
  schedule.C = c.inputs.C;
  schedule.gamma = c.gamma;
  schedule.rho_hat = c.rho_hat;
  schedule.floor = 0.0;
  schedule.cadence = dash::DecayCadence::PerIteration;

  Rng rng = Rng::derive(seed, 12);
  std::vector<Sample> draws;
  std::vector<double> losses;
  for (std::size_t t = 1; t <= T; ++t) {
    const std::size_t n_t = dash::theory_batch_size(t, static_cast<double>(c.m), c.gamma, options.n_cap);
    const double rho_t = options.truncate ? dash::threshold(t, schedule) : dash::kInfinity;
    draws.clear();
    losses.clear();
    for (std::size_t i = 0; i < n_t; ++i) {
      draws.push_back(sample_mixture(problem, Q, q, rng));
      losses.push_back(sample_loss(draws.back(), problem, w));
    }
    const auto mask = dash::select(losses, rho_t);
    std::vector<double> grad(problem.dim, 0.0);
    std::size_t a_count = 0, b_count = 0;
    for (std::size_t i = 0; i < n_t; ++i) {
      if (!mask[i]) continue;
      accumulate_sample_grad(draws[i], problem, w, 1.0, grad);
      if (draws[i].from_q) {
        ++b_count;
      } else {
        ++a_count;
      }
    }
    const std::size_t selected = a_count + b_count;
    if (selected > 0) {
      for (double& g : grad) g /= static_cast<double>(selected);
    }
    for (std::size_t i = 0; i < problem.dim; ++i) w[i] -= c.inputs.eta * grad[i];
    problem.project(w);
    const double F = problem.F(w);
    if (!std::isfinite(F)) throw DivergenceError("selection", t);

    const double envelope = c.rho_hat * std::pow(c.gamma, -static_cast<double>(t));
    const double a_lower = c.a0 * static_cast<double>(c.m) * std::pow(c.gamma, static_cast<double>(t - 1));
    trace.steps.push_back(t);
    trace.batch.push_back(n_t);
    trace.A_rho.push_back(a_count);
    trace.B_rho.push_back(b_count);
    trace.rho.push_back(rho_t);
    trace.F.push_back(F);
    trace.envelope.push_back(envelope);
    trace.samples_consumed += n_t;
    trace.pass_envelope = trace.pass_envelope && F <= envelope;
    trace.pass_A = trace.pass_A && static_cast<double>(a_count) >= a_lower;
    trace.pass_B = trace.pass_B && static_cast<double>(b_count) <= c.b0 * static_cast<double>(c.m);
  }
  return trace;
}

BoundReport verify_run(const PLProblem& problem, const QDistribution& Q, const TheoryConstants& c, std::size_t T,
                       std::span<const std::uint64_t> seeds, const RunOptions& options) {
  if (seeds.empty()) throw InvalidInput("verify_run needs at least one seed");
  if (T == 0) throw InvalidInput("T must be positive");
  BoundReport r;
  r.constants = c;
  r.T = T;
  const double m = static_cast<double>(c.m);
  for (std::size_t t = 1; t <= T; ++t) r.A_lower.push_back(c.a0 * m * std::pow(c.gamma, static_cast<double>(t - 1)));
  r.B_upper = c.b0 * m;
  r.predicted_pass = 1.0 - (4.0 * static_cast<double>(T) + 1.0) * c.inputs.delta;
  r.sample_bound = static_cast<std::size_t>(std::floor(
      static_cast<double>(c.T0 * c.m0) + m * std::pow(c.gamma, static_cast<double>(T)) / (c.gamma - 1.0)));

  std::size_t env = 0, pa = 0, pb = 0, nondecreasing = 0;
  for (std::uint64_t seed : seeds) {
    r.runs.push_back(run_theory(problem, Q, c, T, seed, options));
    const auto& run = r.runs.back();
    env += run.pass_envelope ? 1 : 0;
    pa += run.pass_A ? 1 : 0;
    pb += run.pass_B ? 1 : 0;
    if (std::is_sorted(run.A_rho.begin(), run.A_rho.end())) ++nondecreasing;
    const auto max_b = *std::max_element(run.B_rho.begin(), run.B_rho.end());
    if (!(static_cast<double>(max_b) < 2.0 * r.B_upper)) r.max_B_below_twice_bound = false;
  }
  const auto n = static_cast<double>(seeds.size());
  r.frac_envelope = static_cast<double>(env) / n;
  r.frac_A = static_cast<double>(pa) / n;
  r.frac_B = static_cast<double>(pb) / n;
  r.frac_A_nondecreasing = static_cast<double>(nondecreasing) / n;
  return r;
}

namespace {

Json constants_object(const TheoryConstants& c) {
  const auto& in = c.inputs;
  Json inputs = {{"G", in.G},     {"L", in.L},   {"mu", in.mu},     {"a", in.a},       {"b", in.b},
                 {"theta", in.theta}, {"delta", in.delta}, {"q", in.q}, {"C", in.C}, {"eta0", in.eta0},
                 {"eta", in.eta}, {"F0", in.F0}, {"m_min", in.m_min}};
  Json derived = {{"m_terms", c.m_terms},
                  {"m_formula", c.m_formula},
                  {"m", c.m},
                  {"beta", c.beta},
                  {"alpha", c.alpha},
                  {"a0", c.a0},
                  {"b0", c.b0},
                  {"b1", c.b1},
                  {"rho_hat", c.rho_hat},
                  {"gamma", c.gamma},
                  {"T0_real", c.T0_real},
                  {"T0", c.T0},
                  {"m0_real", c.m0_real},
                  {"m0", c.m0},
                  {"fixed_point_iterations", c.fixed_point_iterations}};
  return Json{{"inputs", inputs}, {"derived", derived}};
}

}  // namespace

std::string constants_json(const TheoryConstants& c) { return constants_object(c).dump(2) + "\n"; }

std::string report_json(const BoundReport& r) {
  Json seeds = Json::array();
  for (const auto& run : r.runs) {
    seeds.push_back(Json{{"seed", run.seed},
                         {"steps", run.steps},
                         {"A_rho", run.A_rho},
                         {"B_rho", run.B_rho},
                         {"F", run.F},
                         {"envelope", run.envelope},
                         {"pass_envelope", run.pass_envelope},
                         {"pass_A", run.pass_A},
                         {"pass_B", run.pass_B}});
  }
  Json details = Json::array();
  for (const auto& run : r.runs) {
    details.push_back(Json{{"seed", run.seed},
                           {"batch", run.batch},
                           {"rho", run.rho},
                           {"F_warmup", run.F_warmup},
                           {"samples_consumed", run.samples_consumed}});
  }
  Json out;
  out["constants"] = constants_object(r.constants);
  out["predicted"] = Json{{"T", r.T},
                          {"A_lower", r.A_lower},
                          {"B_upper", r.B_upper},
                          {"pass_probability", r.predicted_pass},
                          {"sample_bound", r.sample_bound}};
  if (r.tsybakov) {
    out["tsybakov"] = Json{{"b", r.tsybakov->b},
                           {"theta", r.tsybakov->theta},
                           {"levels", r.tsybakov->levels},
                           {"probabilities", r.tsybakov->probabilities}};
  }
  out["seeds"] = seeds;
  out["run_details"] = details;
  out["summary"] = Json{{"n_seeds", r.runs.size()},
                        {"frac_envelope", r.frac_envelope},
                        {"frac_A", r.frac_A},
                        {"frac_B", r.frac_B},
                        {"frac_A_nondecreasing", r.frac_A_nondecreasing},
                        {"max_B_below_twice_bound", r.max_B_below_twice_bound}};
  return out.dump(2) + "\n";
}

}  // namespace dashssl::theory
