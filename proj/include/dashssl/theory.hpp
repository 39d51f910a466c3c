#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dashssl/rng.hpp"

namespace dashssl::theory {

struct TheoryInputs {
  double G = 1.0;       // gradient bound
  double L = 1.0;       // smoothness
  double mu = 1.0;      // PL constant
  double a = 0.5;       // activation level of the mixture condition
  double b = 0.0;       // mixture condition constant
  double theta = 1.0;   // mixture condition exponent
  double delta = 0.1;   // failure probability
  double q = 0.5;       // weight of P in the unlabeled mixture
  double C = 2.0;       // threshold multiplier
  double eta0 = 0.1;    // warm-up rate
  double eta = 0.1;     // selection-stage rate
  double F0 = 1.0;      // F(w0), used for T0
  double m_min = 1.0;   // lower bound applied on top of the closed-form m

  void validate() const;
};

struct TheoryConstants {
  TheoryInputs inputs;
  std::array<double, 3> m_terms{};
  std::size_t m_formula = 0;  // ceiling of the three-term max
  std::size_t m = 0;          // max(m_formula, ceil(m_min))
  double beta = 0.0;
  double alpha = 0.0;
  double a0 = 0.0;
  double b0 = 0.0;
  double b1 = 0.0;
  double rho_hat = 0.0;
  double gamma = 0.0;
  double T0_real = 0.0;
  std::size_t T0 = 0;
  double m0_real = 0.0;
  std::size_t m0 = 0;
  std::size_t fixed_point_iterations = 0;
};

/// ceil(x) that ignores floating residue below 1e-9, so log(8)/log(2) gives 3.
std::size_t ceil_count(double x);

/// sqrt(l/q^2), sqrt(l/(1-q)^2), sqrt(l/(q(1-1/C)^2)) with l = log(2/delta).
/// The middle term is 0 when q = 1.
std::array<double, 3> batch_terms(double q, double delta, double C);
std::size_t batch_parameter(double q, double delta, double C);
double beta_constant(double q, double delta, double m);
double alpha_constant(double q, double delta, double C, double m);
double warmup_batch(double G, double delta, double mu, double a);
/// log(2 F0 / a) / log(1 / (1 - eta0 mu)), clamped at 0.
double warmup_steps(double F0, double a, double eta0, double mu);
double gamma_theory(double eta, double mu);
double b0_constant(double q, double beta, double b, double rho_hat, double theta, double delta);

/// Throws InfeasibleConstants when beta or alpha reaches 1 or the rho_hat/b0
/// fixed point fails to settle within 1000 iterations.
TheoryConstants derive_constants(const TheoryInputs& inputs);

/// One draw xi: f(w; xi) = factor * 0.5 * sum_i A_ii s_i (w_i - center_i)^2.
struct Sample {
  std::vector<double> s;
  std::vector<double> center;
  double factor = 1.0;
  bool from_q = false;
};

/// Diagonal quadratic F(w) = 0.5 (w - w*)^T A (w - w*) with multiplicative
/// noise s_i ~ U[0, 2] on each curvature, iterates kept in the ball of
/// radius R around w*.
struct PLProblem {
  std::size_t dim = 0;
  double mu = 0.0;
  double L = 0.0;
  double R = 0.0;
  std::vector<double> eigenvalues;
  std::vector<double> w_star;
  std::vector<double> w0;  // on the sphere of radius R

  double G() const { return 2.0 * L * R; }
  double F(std::span<const double> w) const;
  std::vector<double> grad_F(std::span<const double> w) const;
  void project(std::span<double> w) const;
  Sample sample_p(Rng& rng) const;
};

double sample_loss(const Sample& xi, const PLProblem& problem, std::span<const double> w);
/// Adds scale * grad f(w; xi) into grad; returns the loss.
double accumulate_sample_grad(const Sample& xi, const PLProblem& problem, std::span<const double> w,
                              double scale, std::span<double> grad);

PLProblem make_pl_problem(std::size_t dim, double mu, double L, double R, std::uint64_t seed);

enum class QKind { ShiftedMinimizer, ScaledLoss };
std::string to_string(QKind k);
QKind q_kind_from_string(const std::string& s);

struct QDistribution {
  QKind kind = QKind::ShiftedMinimizer;
  std::vector<double> offset;  // shifted minimizer only
  double factor = 1.0;         // scaled loss only

  Sample sample(const PLProblem& problem, Rng& rng) const;
};

/// param is the offset length (direction drawn from seed) or the loss factor.
QDistribution make_q_distribution(const PLProblem& problem, QKind kind, double param, std::uint64_t seed);

/// Draw from q P + (1 - q) Q.
Sample sample_mixture(const PLProblem& problem, const QDistribution& Q, double q, Rng& rng);

struct TsybakovEstimate {
  double probability = 0.0;
  double half_width = 0.0;  // 1.96 * binomial standard error
  std::size_t n = 0;
};

/// Monte Carlo Pr_Q[f(w; xi) <= F_value].
TsybakovEstimate estimate_tsybakov(const PLProblem& problem, const QDistribution& Q, std::span<const double> w,
                                   double F_value, std::size_t n, Rng& rng);

struct TsybakovFit {
  double b = 0.0;
  double theta = 1.0;
  std::vector<double> levels;
  std::vector<double> probabilities;
};

/// Estimates the probability at points with F(w) equal to each level, fits
/// log p = log b + theta log F by least squares (theta >= 1), then raises b
/// to the smallest value bounding every observation.
TsybakovFit fit_tsybakov(const PLProblem& problem, const QDistribution& Q, std::span<const double> levels,
                         std::size_t n, std::uint64_t seed);

/// One theory-mode run of the selection stage.
struct TheoryTrace {
  std::uint64_t seed = 0;
  std::vector<std::size_t> steps;
  std::vector<std::size_t> batch;
  std::vector<std::size_t> A_rho;   // selected draws from P
  std::vector<std::size_t> B_rho;   // selected draws from Q
  std::vector<double> rho;
  std::vector<double> F;            // F(w_{t+1})
  std::vector<double> envelope;     // rho_hat gamma^-t
  double F_warmup = 0.0;            // F(w_1)
  std::size_t samples_consumed = 0;
  bool pass_envelope = true;
  bool pass_A = true;
  bool pass_B = true;
};

struct RunOptions {
  bool truncate = true;  // false: plain projected SGD on the same draws
  std::size_t n_cap = std::size_t{1} << 20;
};

TheoryTrace run_theory(const PLProblem& problem, const QDistribution& Q, const TheoryConstants& constants,
                       std::size_t T, std::uint64_t seed, const RunOptions& options = {});

struct BoundReport {
  TheoryConstants constants;
  std::size_t T = 0;
  std::vector<double> A_lower;  // a0 m gamma^(t-1)
  double B_upper = 0.0;         // b0 m
  double predicted_pass = 0.0;  // 1 - (4T + 1) delta
  std::vector<TheoryTrace> runs;
  double frac_envelope = 0.0;
  double frac_A = 0.0;
  double frac_B = 0.0;
  double frac_A_nondecreasing = 0.0;
  bool max_B_below_twice_bound = true;
  std::size_t sample_bound = 0;  // T0 m0 + m gamma^T / (gamma - 1), floored
  std::optional<TsybakovFit> tsybakov;
};

BoundReport verify_run(const PLProblem& problem, const QDistribution& Q, const TheoryConstants& constants,
                       std::size_t T, std::span<const std::uint64_t> seeds, const RunOptions& options = {});

/// Report JSON; per-seed objects carry exactly seed, steps, A_rho, B_rho, F,
/// envelope, pass_envelope, pass_A, pass_B.
std::string report_json(const BoundReport& report);
std::string constants_json(const TheoryConstants& c);

}  // namespace dashssl::theory
