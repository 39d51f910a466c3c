#include "dashssl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dashssl/errors.hpp"

namespace dashssl::augment {

AugmentPolicy AugmentPolicy::make(double weak_noise, double strong_noise, double strong_mask_prob) {
  AugmentPolicy p{weak_noise, strong_noise, strong_mask_prob};
  p.validate();
  return p;
}

void AugmentPolicy::validate() const {
  if (!(weak_noise >= 0.0)) throw InvalidInput("weak_noise must be nonnegative");
  if (!(strong_noise >= weak_noise)) throw InvalidInput("strong_noise must be at least weak_noise");
  if (!(strong_mask_prob >= 0.0 && strong_mask_prob <= 0.5)) {
    throw InvalidInput("strong_mask_prob must lie in [0, 0.5]");
  }
}

std::vector<double> weak_augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (policy.weak_noise > 0.0) {
    for (double& v : out) v += policy.weak_noise * rng.normal();
  }
  return out;
}

std::vector<double> strong_augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) {
    if (policy.strong_noise > 0.0) v += policy.strong_noise * rng.normal();
    if (policy.strong_mask_prob > 0.0 && rng.bernoulli(policy.strong_mask_prob)) v = 0.0;
  }
  return out;
}

std::size_t argmax(std::span<const double> p) {
  if (p.empty()) throw InvalidInput("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

std::vector<double> sharpen(std::span<const double> p, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("sharpening temperature must be positive");
  if (temperature == 1.0) return std::vector<double>(p.begin(), p.end());
  const double inv_t = 1.0 / temperature;
  std::vector<double> logw(p.size(), -std::numeric_limits<double>::infinity());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0) throw InvalidInput("sharpen needs a nonnegative vector");
    if (p[i] > 0.0) {
      logw[i] = inv_t * std::log(p[i]);
      mx = std::max(mx, logw[i]);
    }
  }
  if (!std::isfinite(mx)) throw InvalidInput("sharpen of an all-zero vector");
  std::vector<double> out(p.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = std::exp(logw[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

PseudoLabel make_pseudo_label(std::span<const double> h, double temperature) {
  PseudoLabel label;
  label.hard_index = argmax(h);
  label.confidence = h[label.hard_index];
  label.distribution = sharpen(h, temperature);
  return label;
}

PseudoLabel pseudo_label(const models::Model& model, std::span<const double> x,
                         const AugmentPolicy& policy, Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("sharpening temperature must be positive");
  const auto weak = weak_augment(x, policy, rng);
  const auto h = models::softmax(models::forward(model, weak));
  return make_pseudo_label(h, temperature);
}

bool confidence_selected(double confidence, double tau) { return confidence >= tau; }

bool loss_form_selected(double confidence, double tau) {
  return -std::log(confidence) <= -std::log(tau);
}

UnsupLoss fixmatch_unsup_loss(const models::Model& model, std::span<const data::Example> batch,
                              double tau, const AugmentPolicy& policy, Rng& rng) {
  const double k = static_cast<double>(model.num_classes());
  if (!(tau > 1.0 / k && tau < 1.0)) throw InvalidInput("tau must lie in (1/K, 1)");
  UnsupLoss out;
  double total = 0.0;
  for (const auto& e : batch) {
    const auto label = pseudo_label(model, e.x, policy, rng, 1.0);
    const auto strong = strong_augment(e.x, policy, rng);
    if (!confidence_selected(label.confidence, tau)) continue;
    const auto target = models::one_hot(label.hard_index, model.num_classes());
    total += models::cross_entropy(target, models::forward(model, strong));
    ++out.selected;
  }
  if (out.selected > 0) out.mean_loss = total / static_cast<double>(out.selected);
  return out;
}

}  // namespace dashssl::augment
