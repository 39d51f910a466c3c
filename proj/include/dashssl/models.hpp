#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dashssl/rng.hpp"

namespace dashssl::models {

/// A named row-major weight block inside a flat parameter vector.
struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

/// Flat parameter (or gradient) vector plus the layout that names its slices.
struct ParamVector {
  std::vector<double> values;
  std::vector<Block> layout;

  std::size_t size() const { return values.size(); }
  const Block& block(const std::string& name) const;
  std::span<double> slice(const std::string& name);
  std::span<const double> slice(const std::string& name) const;

  /// Same layout, all zeros.
  ParamVector zeros_like() const;
  bool layout_valid() const;
  bool all_finite() const;
};

enum class Architecture { SoftmaxLinear, Mlp };

/// Softmax-linear (W, b) or one-hidden-layer tanh MLP (W1, b1, W2, b2).
class Model {
 public:
  static Model softmax_linear(std::size_t input_dim, std::size_t num_classes);
  static Model mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes);

  Architecture architecture() const { return arch_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t hidden() const { return hidden_; }

  ParamVector& params() { return params_; }
  const ParamVector& params() const { return params_; }

  /// Uniform in [-s, s] with s = 1/sqrt(fan_in) for every block.
  void initialize(Rng& rng);

 private:
  Model(Architecture arch, std::size_t input_dim, std::size_t hidden, std::size_t num_classes);

  Architecture arch_;
  std::size_t input_dim_;
  std::size_t hidden_;
  std::size_t num_classes_;
  ParamVector params_;
};

/// One (input, target distribution) pair. Views must outlive the call.
struct TrainingPair {
  std::span<const double> x;
  std::span<const double> target;
};

std::vector<double> forward(const Model& model, std::span<const double> x);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// -sum_k target_k * log softmax(logits)_k with max-subtraction and log
/// arguments clipped at 1e-30.
double cross_entropy(std::span<const double> target, std::span<const double> logits);

/// Adds scale * grad of cross_entropy(target, forward(model, x)) into grad
/// and returns the unscaled loss. grad must have params().size() entries.
double accumulate_loss_grad(const Model& model, std::span<const double> x,
                            std::span<const double> target, double scale,
                            std::span<double> grad);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Batch-mean cross-entropy and its exact gradient.
LossGrad loss_and_grad(const Model& model, std::span<const TrainingPair> batch);

/// Batch-mean loss only.
double batch_loss(const Model& model, std::span<const TrainingPair> batch);

/// Worst coordinate-wise error between the analytic gradient and central
/// differences. Relative error, except absolute when both magnitudes fall
/// below 1e-12.
double finite_diff_check(const Model& model, std::span<const TrainingPair> batch, double step);

std::vector<double> one_hot(std::size_t index, std::size_t num_classes);

}  // namespace dashssl::models
