#include "dashssl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dashssl/errors.hpp"

namespace dashssl::data {

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::Labeled: return "labeled";
    case Provenance::UnlabeledP: return "unlabeled-P";
    case Provenance::UnlabeledQ: return "unlabeled-Q";
  }
  return "labeled";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "labeled") return Provenance::Labeled;
  if (s == "unlabeled-P") return Provenance::UnlabeledP;
  if (s == "unlabeled-Q") return Provenance::UnlabeledQ;
  throw InvalidInput("unknown provenance '" + s + "'");
}

std::string to_string(OodKind k) {
  switch (k) {
    case OodKind::None: return "none";
    case OodKind::LabelFlip: return "label-flip";
    case OodKind::ClusterShift: return "cluster-shift";
  }
  return "none";
}

OodKind ood_kind_from_string(const std::string& s) {
  if (s == "none") return OodKind::None;
  if (s == "label-flip") return OodKind::LabelFlip;
  if (s == "cluster-shift") return OodKind::ClusterShift;
  throw InvalidInput("unknown ood kind '" + s + "'");
}

std::vector<Example> make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidInput("two moons needs n >= 2");
  if (!(noise >= 0.0)) throw InvalidInput("noise must be nonnegative");
  Rng rng(seed);
  const std::size_t n_outer = n / 2;
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool outer = i < n_outer;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x0 = outer ? std::cos(t) : 1.0 - std::cos(t);
    double x1 = outer ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x0 += noise * rng.normal();
      x1 += noise * rng.normal();
    }
    out.push_back(Example{{x0, x1}, outer ? 0 : 1, Provenance::Labeled});
  }
  shuffle(out, rng);
  return out;
}

std::vector<Example> make_blobs(int num_classes, std::size_t n_per_class, std::size_t dim,
                                double separation, double noise, std::uint64_t seed) {
  if (num_classes < 2) throw InvalidInput("blobs need at least two classes");
  if (dim == 0) throw InvalidInput("blobs need dim >= 1");
  Rng rng(seed);
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(dim, 0.0));
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * c / num_classes;
    centers[c][0] = separation * std::cos(angle);
    if (dim > 1) centers[c][1] = separation * std::sin(angle);
  }
  std::vector<Example> out;
  out.reserve(num_classes * n_per_class);
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      std::vector<double> x = centers[c];
      if (noise > 0.0) {
        for (double& v : x) v += noise * rng.normal();
      }
      out.push_back(Example{std::move(x), c, Provenance::Labeled});
    }
  }
  shuffle(out, rng);
  return out;
}

std::size_t q_count(double q, std::size_t n_unlabeled) {
  // The epsilon absorbs representation error, e.g. (1 - 0.8) * 1000.
  return static_cast<std::size_t>(std::floor((1.0 - q) * static_cast<double>(n_unlabeled) + 1e-9));
}

DatasetBundle split_ssl(const std::vector<Example>& full, const SplitSpec& spec, std::uint64_t seed) {
  if (full.empty()) throw InvalidInput("cannot split an empty dataset");
  if (spec.labels_per_class < 1) throw InvalidInput("labels_per_class must be positive");
  if (!(spec.q > 0.0 && spec.q <= 1.0)) throw InvalidInput("q must lie in (0, 1]");

  DatasetBundle bundle;
  bundle.input_dim = full.front().x.size();
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const auto& e = full[i];
    if (!e.true_label) throw InvalidInput("split_ssl needs fully labeled input");
    if (e.x.size() != bundle.input_dim) throw InvalidInput("inconsistent input dimension");
    by_class[*e.true_label].push_back(i);
  }
  bundle.num_classes = by_class.rbegin()->first + 1;
  if (by_class.begin()->first < 0) throw InvalidInput("negative class label");

  Rng rng(seed);
  std::vector<bool> taken(full.size(), false);
  for (auto& [label, indices] : by_class) {
    if (indices.size() < static_cast<std::size_t>(spec.labels_per_class)) {
      throw InvalidInput("class " + std::to_string(label) + " has " + std::to_string(indices.size()) +
                         " examples, fewer than labels_per_class");
    }
    shuffle(indices, rng);
    for (int j = 0; j < spec.labels_per_class; ++j) {
      const auto& src = full[indices[j]];
      bundle.labeled.push_back(Example{src.x, src.true_label, Provenance::Labeled});
      taken[indices[j]] = true;
    }
  }

  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < full.size(); ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  if (rest.size() < bundle.labeled.size()) {
    throw InvalidInput("unlabeled pool would be smaller than the labeled set");
  }

  const std::size_t n_q = q_count(spec.q, rest.size());
  std::vector<std::size_t> order(rest.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<bool> is_q(rest.size(), false);
  for (std::size_t i = 0; i < n_q; ++i) is_q[order[i]] = true;

  if (spec.ood == OodKind::ClusterShift && n_q > 0 && spec.offset.size() != bundle.input_dim) {
    throw InvalidInput("cluster-shift offset must match the input dimension");
  }
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& src = full[rest[i]];
    Example e{src.x, src.true_label, is_q[i] ? Provenance::UnlabeledQ : Provenance::UnlabeledP};
    if (is_q[i]) {
      switch (spec.ood) {
        case OodKind::LabelFlip:
          e.true_label = (*e.true_label + 1) % bundle.num_classes;
          break;
        case OodKind::ClusterShift:
          for (std::size_t j = 0; j < e.x.size(); ++j) e.x[j] += spec.offset[j];
          break;
        case OodKind::None:
          break;
      }
    }
    bundle.unlabeled.push_back(std::move(e));
  }
  return bundle;
}

MixtureStream::MixtureStream(const DatasetBundle& bundle, std::uint64_t seed)
    : pool_(&bundle.unlabeled), rng_(seed) {
  if (pool_->empty()) throw InvalidInput("mixture stream over an empty unlabeled pool");
}

void write_csv(std::ostream& out, const std::vector<Example>& examples) {
  const std::size_t d = examples.empty() ? 0 : examples.front().x.size();
  for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
  out << "label,provenance\n";
  for (const auto& e : examples) {
    if (e.x.size() != d) throw InvalidInput("inconsistent input dimension in CSV export");
    for (double v : e.x) out << format_double(v) << ',';
    out << (e.true_label ? *e.true_label : -1) << ',' << to_string(e.provenance) << '\n';
  }
}

std::vector<Example> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty CSV");
  const auto header = split_line(line);
  if (header.size() < 2 || header[header.size() - 2] != "label" || header.back() != "provenance") {
    throw InvalidInput("CSV header must end with label,provenance");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "x" + std::to_string(j)) throw InvalidInput("unexpected CSV column " + header[j]);
  }
  std::vector<Example> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != d + 2) throw InvalidInput("CSV row " + std::to_string(row) + " has wrong arity");
    Example e;
    e.x.reserve(d);
    try {
      for (std::size_t j = 0; j < d; ++j) e.x.push_back(std::stod(fields[j]));
      const int label = std::stoi(fields[d]);
      if (label >= 0) e.true_label = label;
    } catch (const std::logic_error&) {
      throw InvalidInput("CSV row " + std::to_string(row) + " has a malformed number");
    }
    e.provenance = provenance_from_string(fields[d + 1]);
    out.push_back(std::move(e));
  }
  return out;
}

void save_csv(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  write_csv(out, examples);
}

std::vector<Example> load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot read " + path);
  return read_csv(in);
}

}  // namespace dashssl::data
