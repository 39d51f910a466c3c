#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dashssl/augment.hpp"
#include "dashssl/data.hpp"
#include "dashssl/models.hpp"
#include "dashssl/rng.hpp"

namespace dashssl::dash {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

enum class DecayCadence { PerIteration, EveryNEpochs };

/// rho_t = max(C * gamma^-k * rho_hat, floor), where k counts completed decay
/// periods since activation. Infinite before activation_epoch.
struct ThresholdSchedule {
  double C = 1.0001;
  double gamma = 1.27;
  double rho_hat = 1.0;
  double floor = 0.0;
  std::size_t activation_epoch = 0;
  DecayCadence cadence = DecayCadence::PerIteration;
  std::size_t decay_every = 1;  // epochs per decay period (EveryNEpochs)
  std::size_t steps_per_epoch = 1;

  void validate() const;
};

double threshold(std::size_t t, const ThresholdSchedule& schedule);

/// mask_i = 1 iff losses_i <= rho.
std::vector<std::uint8_t> select(std::span<const double> losses, double rho);

/// Warm-start loss level used by the convergence analysis.
struct RhoHatInputs {
  double a = 0.0;
  double G = 0.0;
  double delta = 0.0;
  double mu = 0.0;
  double a0 = 0.0;
  double b0 = 0.0;
  double m = 0.0;
};

/// max{a, 4G^2 (1 + delta b0 m) / (delta mu a0 m)}; throws InfeasibleConstants
/// when a0 <= 0.
double rho_hat_theoretical(const RhoHatInputs& in);

/// Arithmetic mean of per-example labeled losses.
double estimate_rho_hat_practical(std::span<const double> per_example_losses);
/// Mean un-augmented cross-entropy of the model over the labeled set.
double estimate_rho_hat_practical(const models::Model& model, std::span<const data::Example> labeled);

/// ceil(m * gamma^(t-1)); throws CapExceeded past cap.
std::size_t theory_batch_size(std::size_t t, double m, double gamma, std::size_t cap);

/// Truncated mean: (sum of selected rows + labeled_sum) / (selected + n_labeled).
/// Zero vector when the denominator is zero.
std::vector<double> combine_truncated(const std::vector<std::vector<double>>& per_example,
                                      std::span<const std::uint8_t> mask,
                                      std::span<const double> labeled_sum, std::size_t n_labeled,
                                      std::size_t dim);

/// Per-step record; doubles as one row of the metrics log.
struct SelectionStats {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double rho_t = 0.0;
  std::size_t n_sampled = 0;
  std::size_t n_selected = 0;
  std::size_t n_selected_correct_pseudo = 0;
  std::size_t n_selected_wrong_pseudo = 0;
  std::size_t n_selected_P = 0;
  std::size_t n_selected_Q = 0;
  double labeled_train_loss = 0.0;
  double unlabeled_loss = 0.0;
  double test_error = 0.0;
  double lr = 0.0;
  bool zero_selection = false;
};

enum class PseudoLabelSource {
  WeakStrong,  // label from the weak view, loss on the strong view
  Clean,       // Pseudo-Labeling: label and loss on the raw input
};

struct UnlabeledOptions {
  PseudoLabelSource source = PseudoLabelSource::WeakStrong;
  bool soft_labels = false;
  double temperature = 0.5;
};

/// Pseudo label and per-example unsupervised loss f_u for one unlabeled input.
struct ScoredExample {
  std::vector<double> view;    // input the loss is evaluated on
  std::vector<double> target;  // soft or one-hot pseudo label
  std::size_t hard_index = 0;
  double confidence = 0.0;
  double loss = 0.0;
};

ScoredExample score_unlabeled(const models::Model& model, std::span<const double> x,
                              const augment::AugmentPolicy& policy, Rng& rng,
                              const UnlabeledOptions& options);

struct TruncatedGradient {
  models::ParamVector grad;
  SelectionStats stats;
};

/// Unlabeled-only form: mean gradient of the unlabeled examples with f_u <= rho_t.
TruncatedGradient truncated_gradient(const models::Model& model, std::span<const data::Example> batch,
                                     double rho_t, const augment::AugmentPolicy& policy, Rng& rng,
                                     const UnlabeledOptions& options = {});

/// Labeled-inclusive form: selected unlabeled gradients plus every labeled gradient,
/// divided by N_l + (number selected).
TruncatedGradient truncated_gradient_with_labeled(const models::Model& model,
                                                  std::span<const data::Example> unlabeled,
                                                  std::span<const data::Example> labeled, double rho_t,
                                                  const augment::AugmentPolicy& policy, Rng& rng,
                                                  const UnlabeledOptions& options = {});

/// Mini-batch loss and gradient at w for the given step; returns the loss.
using BatchGradFn = std::function<double(std::span<const double> w, std::size_t step, std::span<double> grad)>;
using ProjectFn = std::function<void(std::span<double> w)>;

/// Plain SGD: w <- project(w - lr * g) for the given number of steps.
std::vector<double> run_sgd(std::vector<double> w, std::size_t steps, double lr, const BatchGradFn& grad_fn,
                            const ProjectFn& project = {}, const std::string& stage = "warm-up");

enum class Mode { Theory, Practice };
enum class GradientForm { UnlabeledOnly, WithLabeled };
enum class LrSchedule { Constant, Cosine };
enum class Algorithm { Dash, FixMatch, PseudoLabel, DashPL };

std::string to_string(Mode m);
std::string to_string(GradientForm g);
std::string to_string(LrSchedule s);
std::string to_string(Algorithm a);
Mode mode_from_string(const std::string& s);
GradientForm gradient_form_from_string(const std::string& s);
LrSchedule lr_schedule_from_string(const std::string& s);
Algorithm algorithm_from_string(const std::string& s);

struct DashConfig {
  Algorithm algorithm = Algorithm::Dash;
  Mode mode = Mode::Practice;
  double eta0 = 0.1;
  double eta = 0.06;
  std::size_t m0 = 64;
  double m = 64.0;
  std::size_t T0 = 100;
  std::size_t T = 1000;
  /// rho_hat is overwritten by the practical estimate unless fixed_rho_hat is set.
  ThresholdSchedule schedule{1.0001, 1.27, 1.0, 0.05, 10, DecayCadence::EveryNEpochs, 9, 1};
  std::optional<double> fixed_rho_hat;
  double lambda_u = 1.0;
  GradientForm gradient_form = GradientForm::UnlabeledOnly;
  double sharpen_temperature = 0.5;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  double tau = augment::kFixMatchTau;
  std::size_t n_cap = std::size_t{1} << 20;
  std::optional<double> smoothness;  // L, checked against eta0 and eta in theory mode
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Practice-mode defaults reported for the image benchmarks.
DashConfig practice_defaults();

/// T0 steps of mini-batch SGD on the weakly augmented supervised loss.
models::Model warmup(const models::Model& init, std::span<const data::Example> labeled, const DashConfig& config,
                     const augment::AugmentPolicy& policy);

struct TrainResult {
  models::Model model;
  models::Model warmup_model;
  double rho_hat = 0.0;
  std::vector<SelectionStats> log;
};

/// Warm-up followed by the selection stage for any of the four algorithms.
TrainResult train_ssl(const data::DatasetBundle& bundle, const models::Model& init, const DashConfig& config,
                      const augment::AugmentPolicy& policy);

/// train_ssl restricted to the dynamic-threshold algorithms.
TrainResult dash_train(const data::DatasetBundle& bundle, const models::Model& init, const DashConfig& config,
                       const augment::AugmentPolicy& policy);

double classification_error(const models::Model& model, std::span<const data::Example> examples);

/// Exact column order of the metrics log.
inline constexpr const char* kMetricsHeader =
    "step,epoch,rho_t,n_sampled,n_selected,n_sel_correct,n_sel_wrong,n_sel_P,n_sel_Q,labeled_loss,"
    "unlabeled_loss,test_error,lr";

void write_metrics_csv(std::ostream& out, std::span<const SelectionStats> rows);
std::vector<SelectionStats> read_metrics_csv(std::istream& in);

/// 8-byte magic "DASHMODL", u64 LE parameter count, then LE float64 values.
void write_checkpoint(std::ostream& out, const models::ParamVector& params);
std::vector<double> read_checkpoint(std::istream& in);

}  // namespace dashssl::dash
