#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dashssl/data.hpp"
#include "dashssl/models.hpp"
#include "dashssl/rng.hpp"

namespace dashssl::augment {

/// Weak view: additive Gaussian noise. Strong view: larger noise followed by
/// coordinate dropout.
struct AugmentPolicy {
  double weak_noise = 0.0;
  double strong_noise = 0.0;
  double strong_mask_prob = 0.0;

  /// Throws InvalidInput unless 0 <= weak <= strong and mask prob in [0, 0.5].
  static AugmentPolicy make(double weak_noise, double strong_noise, double strong_mask_prob);
  void validate() const;
};

std::vector<double> weak_augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng);
std::vector<double> strong_augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng);

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> p);

/// p_k^(1/T) / sum_j p_j^(1/T), evaluated in log space.
std::vector<double> sharpen(std::span<const double> p, double temperature);

struct PseudoLabel {
  std::vector<double> distribution;  // sharpened soft label
  std::size_t hard_index = 0;
  double confidence = 0.0;  // max of the distribution before sharpening
};

/// Builds a pseudo label from an already computed class distribution h.
PseudoLabel make_pseudo_label(std::span<const double> h, double temperature);

/// h = softmax(forward(model, weak_augment(x))), then sharpened.
PseudoLabel pseudo_label(const models::Model& model, std::span<const double> x,
                         const AugmentPolicy& policy, Rng& rng, double temperature);

/// I(max h >= tau), the confidence form of the fixed-threshold indicator.
bool confidence_selected(double confidence, double tau);
/// I(-log max h <= -log tau), the loss form of the same indicator.
bool loss_form_selected(double confidence, double tau);

struct UnsupLoss {
  double mean_loss = 0.0;  // 0 when nothing is selected
  std::size_t selected = 0;
};

/// Fixed-threshold unsupervised loss: weak-view pseudo label kept when its
/// confidence reaches tau, cross-entropy of its one-hot form against the
/// strong view. Mean over the selected examples.
UnsupLoss fixmatch_unsup_loss(const models::Model& model, std::span<const data::Example> batch,
                              double tau, const AugmentPolicy& policy, Rng& rng);

inline constexpr double kFixMatchTau = 0.95;

}  // namespace dashssl::augment
