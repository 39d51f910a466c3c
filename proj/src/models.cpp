#include "dashssl/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dashssl/errors.hpp"

namespace dashssl::models {

namespace {

constexpr double kLogClip = -69.07755278982137;  // log(1e-30)

void check_input(const Model& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw InvalidInput("input has dimension " + std::to_string(x.size()) + ", model expects " +
                       std::to_string(model.input_dim()));
  }
}

void check_target(std::span<const double> target, std::size_t num_classes) {
  if (target.size() != num_classes) {
    throw InvalidInput("target has " + std::to_string(target.size()) + " entries, expected " +
                       std::to_string(num_classes));
  }
  double total = 0.0;
  for (double t : target) {
    if (!(t >= 0.0)) throw InvalidInput("target has a negative or NaN entry");
    total += t;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidInput("target does not sum to 1 (sum = " + std::to_string(total) + ")");
  }
}

// Hidden activations are written to hidden when the model is an MLP.
void forward_into(const Model& model, std::span<const double> x, std::vector<double>& hidden,
                  std::vector<double>& logits) {
  const auto& p = model.params();
  const std::size_t d = model.input_dim();
  const std::size_t k = model.num_classes();
  logits.assign(k, 0.0);
  if (model.architecture() == Architecture::SoftmaxLinear) {
    auto w = p.slice("W");
    auto b = p.slice("b");
    for (std::size_t c = 0; c < k; ++c) {
      double acc = b[c];
      for (std::size_t j = 0; j < d; ++j) acc += w[c * d + j] * x[j];
      logits[c] = acc;
    }
    return;
  }
  const std::size_t h = model.hidden();
  auto w1 = p.slice("W1");
  auto b1 = p.slice("b1");
  auto w2 = p.slice("W2");
  auto b2 = p.slice("b2");
  hidden.assign(h, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    double acc = b1[i];
    for (std::size_t j = 0; j < d; ++j) acc += w1[i * d + j] * x[j];
    hidden[i] = std::tanh(acc);
  }
  for (std::size_t c = 0; c < k; ++c) {
    double acc = b2[c];
    for (std::size_t i = 0; i < h; ++i) acc += w2[c * h + i] * hidden[i];
    logits[c] = acc;
  }
}

}  // namespace

const Block& ParamVector::block(const std::string& name) const {
  for (const auto& b : layout) {
    if (b.name == name) return b;
  }
  throw InvalidInput("no parameter block named " + name);
}

std::span<double> ParamVector::slice(const std::string& name) {
  const auto& b = block(name);
  return std::span<double>(values).subspan(b.offset, b.size());
}

std::span<const double> ParamVector::slice(const std::string& name) const {
  const auto& b = block(name);
  return std::span<const double>(values).subspan(b.offset, b.size());
}

ParamVector ParamVector::zeros_like() const {
  return ParamVector{std::vector<double>(values.size(), 0.0), layout};
}

bool ParamVector::layout_valid() const {
  std::size_t next = 0;
  for (const auto& b : layout) {
    if (b.offset != next) return false;
    next += b.size();
  }
  return next == values.size();
}

bool ParamVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Model::Model(Architecture arch, std::size_t input_dim, std::size_t hidden, std::size_t num_classes)
    : arch_(arch), input_dim_(input_dim), hidden_(hidden), num_classes_(num_classes) {
  if (input_dim == 0) throw InvalidInput("input_dim must be positive");
  if (num_classes < 2) throw InvalidInput("num_classes must be at least 2");
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    params_.layout.push_back(Block{std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  if (arch == Architecture::SoftmaxLinear) {
    add("W", num_classes, input_dim);
    add("b", num_classes, 1);
  } else {
    if (hidden == 0) throw InvalidInput("hidden width must be positive");
    add("W1", hidden, input_dim);
    add("b1", hidden, 1);
    add("W2", num_classes, hidden);
    add("b2", num_classes, 1);
  }
  params_.values.assign(offset, 0.0);
}

Model Model::softmax_linear(std::size_t input_dim, std::size_t num_classes) {
  return Model(Architecture::SoftmaxLinear, input_dim, 0, num_classes);
}

Model Model::mlp(std::size_t input_dim, std::size_t hidden, std::size_t num_classes) {
  return Model(Architecture::Mlp, input_dim, hidden, num_classes);
}

void Model::initialize(Rng& rng) {
  for (const auto& b : params_.layout) {
    // Biases share the fan-in of the weight block that feeds them.
    const std::size_t fan_in =
        (b.name == "W" || b.name == "b" || b.name == "W1" || b.name == "b1") ? input_dim_ : hidden_;
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < b.size(); ++i) {
      params_.values[b.offset + i] = rng.uniform(-s, s);
    }
  }
}

std::vector<double> forward(const Model& model, std::span<const double> x) {
  check_input(model, x);
  std::vector<double> hidden;
  std::vector<double> logits;
  forward_into(model, x, hidden, logits);
  return logits;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

double cross_entropy(std::span<const double> target, std::span<const double> logits) {
  check_target(target, logits.size());
  const auto logp = log_softmax(logits);
  double loss = 0.0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    if (target[k] > 0.0) loss -= target[k] * std::max(logp[k], kLogClip);
  }
  return loss;
}

double accumulate_loss_grad(const Model& model, std::span<const double> x,
                            std::span<const double> target, double scale,
                            std::span<double> grad) {
  check_input(model, x);
  const std::size_t k = model.num_classes();
  check_target(target, k);
  std::vector<double> hidden;
  std::vector<double> logits;
  forward_into(model, x, hidden, logits);
  const auto logp = log_softmax(logits);

  // d/dz of -sum t_k max(log p_k, clip): terms whose log-probability is
  // clipped are constant and drop out.
  double loss = 0.0;
  double active_mass = 0.0;
  std::vector<double> dz(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (target[c] <= 0.0) continue;
    if (logp[c] > kLogClip) {
      active_mass += target[c];
      dz[c] -= target[c];
      loss -= target[c] * logp[c];
    } else {
      loss -= target[c] * kLogClip;
    }
  }
  for (std::size_t c = 0; c < k; ++c) dz[c] += active_mass * std::exp(logp[c]);
  for (double& v : dz) v *= scale;

  const auto& p = model.params();
  const std::size_t d = model.input_dim();
  if (model.architecture() == Architecture::SoftmaxLinear) {
    const auto& wb = p.block("W");
    const auto& bb = p.block("b");
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < d; ++j) grad[wb.offset + c * d + j] += dz[c] * x[j];
      grad[bb.offset + c] += dz[c];
    }
    return loss;
  }

  const std::size_t h = model.hidden();
  const auto& w1b = p.block("W1");
  const auto& b1b = p.block("b1");
  const auto& w2b = p.block("W2");
  const auto& b2b = p.block("b2");
  auto w2 = p.slice("W2");
  std::vector<double> dh(h, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      grad[w2b.offset + c * h + i] += dz[c] * hidden[i];
      dh[i] += dz[c] * w2[c * h + i];
    }
    grad[b2b.offset + c] += dz[c];
  }
  for (std::size_t i = 0; i < h; ++i) {
    const double da = dh[i] * (1.0 - hidden[i] * hidden[i]);
    for (std::size_t j = 0; j < d; ++j) grad[w1b.offset + i * d + j] += da * x[j];
    grad[b1b.offset + i] += da;
  }
  return loss;
}

LossGrad loss_and_grad(const Model& model, std::span<const TrainingPair> batch) {
  if (batch.empty()) throw InvalidInput("loss_and_grad needs a nonempty batch");
  LossGrad out{0.0, model.params().zeros_like()};
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    out.loss += accumulate_loss_grad(model, pair.x, pair.target, scale, out.grad.values);
  }
  out.loss *= scale;
  return out;
}

double batch_loss(const Model& model, std::span<const TrainingPair> batch) {
  if (batch.empty()) throw InvalidInput("batch_loss needs a nonempty batch");
  double total = 0.0;
  for (const auto& pair : batch) total += cross_entropy(pair.target, forward(model, pair.x));
  return total / static_cast<double>(batch.size());
}

double finite_diff_check(const Model& model, std::span<const TrainingPair> batch, double step) {
  if (!(step > 1e-8 && step < 1e-2)) throw InvalidInput("finite-difference step must lie in (1e-8, 1e-2)");
  const auto analytic = loss_and_grad(model, batch).grad.values;
  Model probe = model;
  auto& w = probe.params().values;
  double worst = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double orig = w[i];
    w[i] = orig + step;
    const double up = batch_loss(probe, batch);
    w[i] = orig - step;
    const double down = batch_loss(probe, batch);
    w[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double diff = std::abs(numeric - analytic[i]);
    const double denom = std::max(std::abs(numeric), std::abs(analytic[i]));
    worst = std::max(worst, denom < 1e-12 ? diff : diff / denom);
  }
  return worst;
}

std::vector<double> one_hot(std::size_t index, std::size_t num_classes) {
  if (index >= num_classes) throw InvalidInput("class index out of range");
  std::vector<double> v(num_classes, 0.0);
  v[index] = 1.0;
  return v;
}

}  // namespace dashssl::models
