#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dashssl/rng.hpp"

namespace dashssl::data {

enum class Provenance { Labeled, UnlabeledP, UnlabeledQ };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// Unlabeled examples keep their ground-truth label for diagnostics only;
/// training code never reads it.
struct Example {
  std::vector<double> x;
  std::optional<int> true_label;
  Provenance provenance = Provenance::Labeled;
};

enum class OodKind { None, LabelFlip, ClusterShift };

std::string to_string(OodKind k);
OodKind ood_kind_from_string(const std::string& s);

struct SplitSpec {
  int labels_per_class = 4;
  /// Fraction of the unlabeled pool left untouched (P). q = 1 means no Q.
  double q = 1.0;
  OodKind ood = OodKind::None;
  /// Translation applied to Q inputs for ClusterShift.
  std::vector<double> offset;
};

struct DatasetBundle {
  std::vector<Example> labeled;
  std::vector<Example> unlabeled;
  std::vector<Example> test;
  int num_classes = 0;
  std::size_t input_dim = 0;
};

/// Two interleaved unit half-circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t ~ U[0, pi], plus N(0, noise^2) per coordinate.
std::vector<Example> make_two_moons(std::size_t n, double noise, std::uint64_t seed);

/// Isotropic Gaussian clusters. Centers sit on a circle of radius
/// separation in the first two coordinates.
std::vector<Example> make_blobs(int num_classes, std::size_t n_per_class, std::size_t dim,
                                double separation, double noise, std::uint64_t seed);

/// Exactly labels_per_class labeled examples per class; the rest become
/// unlabeled, of which floor((1 - q) * N_u) are transformed per the ood kind and
/// tagged UnlabeledQ.
DatasetBundle split_ssl(const std::vector<Example>& full, const SplitSpec& spec, std::uint64_t seed);

std::size_t q_count(double q, std::size_t n_unlabeled);

/// Uniform draws with replacement from a bundle's unlabeled pool.
class MixtureStream {
 public:
  MixtureStream(const DatasetBundle& bundle, std::uint64_t seed);

  std::size_t next_index() { return rng_.index(pool_->size()); }
  const Example& next() { return (*pool_)[next_index()]; }

 private:
  const std::vector<Example>* pool_;
  Rng rng_;
};

/// CSV with header x0,...,x{d-1},label,provenance; label -1 when absent.
void write_csv(std::ostream& out, const std::vector<Example>& examples);
std::vector<Example> read_csv(std::istream& in);

void save_csv(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> load_csv(const std::string& path);

}  // namespace dashssl::data
