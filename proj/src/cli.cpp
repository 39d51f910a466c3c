#include "dashssl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "dashssl/errors.hpp"

namespace dashssl::cli {

namespace fs = std::filesystem;

namespace {

// ---- config tree access -------------------------------------------------

const Json& at_path(const Json& root, const std::string& path) {
  const Json* node = &root;
  std::stringstream ss(path);
  std::string key;
  while (std::getline(ss, key, '.')) {
    if (!node->is_object() || !node->contains(key)) throw ConfigError("missing config key '" + path + "'");
    node = &(*node)[key];
  }
  return *node;
}

double get_double(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

std::optional<double> get_opt_double(const Json& root, const std::string& path) {
  if (at_path(root, path).is_null()) return std::nullopt;
  return get_double(root, path);
}

std::uint64_t get_uint(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError(path + ": expected a nonnegative integer");
}

std::optional<std::uint64_t> get_opt_uint(const Json& root, const std::string& path) {
  if (at_path(root, path).is_null()) return std::nullopt;
  return get_uint(root, path);
}

std::string get_string(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

bool get_bool(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
  return v.get<bool>();
}

std::vector<double> get_doubles(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_array()) throw ConfigError(path + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(path + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::uint64_t> get_uints(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_array()) throw ConfigError(path + ": expected an array of integers");
  std::vector<std::uint64_t> out;
  for (const auto& e : v) {
    if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0)) {
      throw ConfigError(path + ": expected an array of nonnegative integers");
    }
    out.push_back(e.get<std::uint64_t>());
  }
  return out;
}

std::vector<std::string> get_strings(const Json& root, const std::string& path) {
  const Json& v = at_path(root, path);
  if (!v.is_array()) throw ConfigError(path + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(path + ": expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

// Rethrows model-level validation as a config error tied to the key.
template <typename F>
auto keyed(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void merge_into(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else {
      slot = value;
    }
  }
}

void apply_set(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json* node = &config;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!node->is_object() || !node->contains(keys[i])) throw ConfigError("unknown config key '" + path + "'");
    node = &(*node)[keys[i]];
  }
  if (node->is_object()) throw ConfigError("--set cannot replace the section '" + path + "'");
  *node = value;
}

// ---- file helpers -------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_checkpoint_file(const fs::path& path, const models::ParamVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  dash::write_checkpoint(out, params);
}

// Empty or missing: create. Otherwise only artifacts this tool writes may be
// present, and they are removed when overwrite is set.
void prepare_output_dir(const fs::path& dir, bool overwrite, const std::set<std::string>& known) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " is a file");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!overwrite) throw ConfigError("output directory " + dir.string() + " is not empty; pass --overwrite");
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto name = entry.path().filename().string();
      const bool ours = known.count(name) > 0 || (name.size() > 4 && name.substr(name.size() - 4) == ".dat");
      if (!ours) throw ConfigError("refusing to overwrite " + dir.string() + ": unexpected entry '" + name + "'");
    }
    for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
  }
  fs::create_directories(dir);
}

std::string dat_line(double x, double y) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g %.10g\n", x, y);
  return buf;
}

using Series = std::vector<std::pair<double, double>>;

std::string series_text(const Series& s) {
  std::string out;
  for (const auto& [x, y] : s) out += dat_line(x, y);
  return out;
}

// Per-epoch curves from a metrics log. Infinite thresholds are left out.
std::map<std::string, Series> epoch_series(std::span<const dash::SelectionStats> log) {
  std::map<std::string, Series> out;
  std::size_t i = 0;
  while (i < log.size()) {
    const std::size_t epoch = log[i].epoch;
    double correct = 0.0, wrong = 0.0;
    std::size_t last = i;
    for (; i < log.size() && log[i].epoch == epoch; ++i) {
      correct += static_cast<double>(log[i].n_selected_correct_pseudo);
      wrong += static_cast<double>(log[i].n_selected_wrong_pseudo);
      last = i;
    }
    const auto x = static_cast<double>(epoch);
    out["correct_selected"].emplace_back(x, correct);
    out["wrong_selected"].emplace_back(x, wrong);
    if (std::isfinite(log[last].rho_t)) out["rho_t"].emplace_back(x, log[last].rho_t);
    out["test_error"].emplace_back(x, log[last].test_error);
  }
  return out;
}

std::string fmt_g(double v, const char* spec = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

const std::set<std::string> kRunArtifacts = {"resolved-config.json", "metrics.csv", "model.ckpt", "plots"};

void write_run_dir(const fs::path& dir, const Json& config, const TrainOutcome& outcome, bool plot) {
  write_text(dir / "resolved-config.json", config.dump(2) + "\n");
  write_text(dir / "metrics.csv", outcome.metrics_csv);
  write_checkpoint_file(dir / "model.ckpt", outcome.result.model.params());
  if (plot) {
    fs::create_directories(dir / "plots");
    for (const auto& [name, series] : epoch_series(outcome.result.log)) {
      write_text(dir / "plots" / (name + ".dat"), series_text(series));
    }
  }
}

Json data_defaults() {
  return Json{{"kind", "two-moons"},  {"n_unlabeled", 1000}, {"noise", 0.1},       {"num_classes", 3},
              {"dim", 2},             {"separation", 3.0},   {"labels_per_class", 4}, {"q", 0.8},
              {"ood", "label-flip"},  {"offset", Json::array()}, {"test_size", 1000}, {"seed", 0},
              {"from_dir", nullptr}};
}

Json train_defaults() {
  return Json{{"algorithm", "dash"},
              {"mode", "practice"},
              {"eta0", 0.1},
              {"eta", 0.06},
              {"m0", 64},
              {"m", 64},
              {"T0", 5},
              {"epochs", 60},
              {"T", nullptr},
              {"C", 1.0001},
              {"gamma", 1.27},
              {"floor", 0.05},
              {"activation_epoch", 10},
              {"decay_every", 9},
              {"rho_hat", nullptr},
              {"lambda_u", 1.0},
              {"gradient_form", "unlabeled-only"},
              {"sharpen_temperature", 0.5},
              {"lr_schedule", "cosine"},
              {"weight_decay", 0.02},
              {"momentum", 0.9},
              {"tau", 0.95},
              {"n_cap", 1048576},
              {"smoothness", nullptr},
              {"eval_every", nullptr},
              {"seed", 0}};
}

Json theory_defaults() {
  Json seeds = Json::array();
  for (int s = 0; s < 20; ++s) seeds.push_back(s);
  return Json{{"dim", 10},
              {"mu", 0.5},
              {"L", 2.0},
              {"R", 1.0},
              {"problem_seed", 7},
              {"q", 0.8},
              {"q_kind", "shifted-minimizer"},
              {"q_param", 4.0},
              {"a", 0.5},
              {"b", 0.001},
              {"theta", 1.0},
              {"delta", 0.1},
              {"C", 2.0},
              {"eta0", 0.5},
              {"eta", 0.5},
              {"m_min", 400},
              {"T", 15},
              {"seeds", seeds},
              {"n_cap", 1048576},
              {"truncate", true},
              {"tsybakov_levels", Json::array({0.01, 0.03, 0.1, 0.2})},
              {"tsybakov_samples", 20000}};
}

}  // namespace

Json default_config(const std::string& command) {
  Json c;
  c["output_dir"] = "runs/" + command;
  if (command == "gen-data") {
    c["data"] = data_defaults();
  } else if (command == "train") {
    c["data"] = data_defaults();
    c["model"] = Json{{"arch", "mlp"}, {"hidden", 16}};
    c["augment"] = Json{{"weak_noise", 0.05}, {"strong_noise", 0.15}, {"strong_mask_prob", 0.0}};
    c["train"] = train_defaults();
    c["plot"] = false;
  } else if (command == "compare") {
    c = default_config("train");
    c["output_dir"] = "runs/compare";
    c.erase("plot");
    c["compare"] = Json{{"algorithms", Json::array({"dash", "fixmatch", "dash-pl", "pl"})},
                        {"label_budgets", Json::array({4})},
                        {"seeds", Json::array({0, 1, 2})},
                        {"gammas", Json::array()}};
  } else if (command == "theory-verify") {
    c["theory"] = theory_defaults();
  } else {
    throw ConfigError("unknown subcommand '" + command + "'");
  }
  return c;
}

Json resolve_config(const std::string& command, const Json& user, const std::vector<std::string>& sets) {
  Json config = default_config(command);
  if (!user.is_null()) merge_into(config, user, "");
  for (const auto& s : sets) apply_set(config, s);
  return config;
}

Json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

fs::path resolve_output_dir(const Json& config, const std::optional<std::string>& out_flag) {
  fs::path dir = out_flag ? fs::path(*out_flag) : fs::path(get_string(config, "output_dir"));
  if (dir.empty()) throw ConfigError("output_dir: must not be empty");
  if (dir.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') dir = fs::path(root) / dir;
  }
  return dir;
}

data::DatasetBundle build_bundle(const Json& config) {
  const auto from_dir = at_path(config, "data.from_dir");
  if (!from_dir.is_null()) {
    if (!from_dir.is_string()) throw ConfigError("data.from_dir: expected a string or null");
    const fs::path dir = from_dir.get<std::string>();
    data::DatasetBundle b;
    try {
      b.labeled = data::load_csv((dir / "labeled.csv").string());
      b.unlabeled = data::load_csv((dir / "unlabeled.csv").string());
      b.test = data::load_csv((dir / "test.csv").string());
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("data.from_dir: ") + e.what());
    }
    if (b.labeled.empty()) throw ConfigError("data.from_dir: labeled.csv has no rows");
    b.input_dim = b.labeled.front().x.size();
    int max_label = 0;
    for (const auto* set : {&b.labeled, &b.unlabeled, &b.test}) {
      for (const auto& e : *set) {
        if (e.x.size() != b.input_dim) throw ConfigError("data.from_dir: inconsistent feature width");
        if (e.true_label) max_label = std::max(max_label, *e.true_label);
      }
    }
    b.num_classes = std::max(2, max_label + 1);
    return b;
  }

  const std::string kind = get_string(config, "data.kind");
  const auto n_unlabeled = get_uint(config, "data.n_unlabeled");
  const double noise = get_double(config, "data.noise");
  const auto lpc = get_uint(config, "data.labels_per_class");
  const auto test_size = get_uint(config, "data.test_size");
  const auto seed = get_uint(config, "data.seed");
  const auto test_seed = Rng::derive(seed, 77).next_u64();
  if (lpc == 0) throw ConfigError("data.labels_per_class: must be positive");
  if (!(noise >= 0.0)) throw ConfigError("data.noise: must be nonnegative");

  std::vector<data::Example> full, test;
  if (kind == "two-moons") {
    full = data::make_two_moons(2 * lpc + n_unlabeled, noise, seed);
    test = data::make_two_moons(test_size, noise, test_seed);
  } else if (kind == "blobs") {
    const auto K = get_uint(config, "data.num_classes");
    if (K < 2) throw ConfigError("data.num_classes: must be at least 2");
    if (n_unlabeled % K != 0) throw ConfigError("data.n_unlabeled: must be divisible by data.num_classes");
    if (test_size % K != 0) throw ConfigError("data.test_size: must be divisible by data.num_classes");
    const auto dim = get_uint(config, "data.dim");
    const double sep = get_double(config, "data.separation");
    full = keyed("data", [&] {
      return data::make_blobs(static_cast<int>(K), lpc + n_unlabeled / K, dim, sep, noise, seed);
    });
    test = keyed("data", [&] { return data::make_blobs(static_cast<int>(K), test_size / K, dim, sep, noise, test_seed); });
  } else {
    throw ConfigError("data.kind: expected two-moons or blobs, got '" + kind + "'");
  }

  data::SplitSpec spec;
  spec.labels_per_class = static_cast<int>(lpc);
  spec.q = get_double(config, "data.q");
  spec.ood = keyed("data.ood", [&] { return data::ood_kind_from_string(get_string(config, "data.ood")); });
  spec.offset = get_doubles(config, "data.offset");
  auto bundle = keyed("data", [&] { return data::split_ssl(full, spec, seed); });
  bundle.test = std::move(test);
  return bundle;
}

models::Model build_model(const Json& config, const data::DatasetBundle& bundle) {
  const std::string arch = get_string(config, "model.arch");
  const auto K = static_cast<std::size_t>(bundle.num_classes);
  models::Model model = [&] {
    if (arch == "mlp") {
      const auto hidden = get_uint(config, "model.hidden");
      if (hidden == 0) throw ConfigError("model.hidden: must be positive");
      return models::Model::mlp(bundle.input_dim, hidden, K);
    }
    if (arch == "softmax-linear") return models::Model::softmax_linear(bundle.input_dim, K);
    throw ConfigError("model.arch: expected mlp or softmax-linear, got '" + arch + "'");
  }();
  Rng rng = Rng::derive(get_uint(config, "train.seed"), 99);
  model.initialize(rng);
  return model;
}

augment::AugmentPolicy build_policy(const Json& config) {
  return keyed("augment", [&] {
    return augment::AugmentPolicy::make(get_double(config, "augment.weak_noise"),
                                        get_double(config, "augment.strong_noise"),
                                        get_double(config, "augment.strong_mask_prob"));
  });
}

dash::DashConfig build_dash_config(const Json& config, const data::DatasetBundle& bundle) {
  dash::DashConfig c;
  c.algorithm = keyed("train.algorithm", [&] { return dash::algorithm_from_string(get_string(config, "train.algorithm")); });
  c.mode = keyed("train.mode", [&] { return dash::mode_from_string(get_string(config, "train.mode")); });
  c.gradient_form = keyed("train.gradient_form", [&] {
    return dash::gradient_form_from_string(get_string(config, "train.gradient_form"));
  });
  c.lr_schedule = keyed("train.lr_schedule", [&] {
    return dash::lr_schedule_from_string(get_string(config, "train.lr_schedule"));
  });
  c.eta0 = get_double(config, "train.eta0");
  c.eta = get_double(config, "train.eta");
  c.m0 = get_uint(config, "train.m0");
  c.m = get_double(config, "train.m");
  c.T0 = get_uint(config, "train.T0");
  c.schedule.C = get_double(config, "train.C");
  c.schedule.gamma = get_double(config, "train.gamma");
  c.schedule.floor = get_double(config, "train.floor");
  c.schedule.activation_epoch = get_uint(config, "train.activation_epoch");
  c.schedule.decay_every = get_uint(config, "train.decay_every");
  c.fixed_rho_hat = get_opt_double(config, "train.rho_hat");
  c.lambda_u = get_double(config, "train.lambda_u");
  c.sharpen_temperature = get_double(config, "train.sharpen_temperature");
  c.weight_decay = get_double(config, "train.weight_decay");
  c.momentum = get_double(config, "train.momentum");
  c.tau = get_double(config, "train.tau");
  c.n_cap = get_uint(config, "train.n_cap");
  c.smoothness = get_opt_double(config, "train.smoothness");
  c.seed = get_uint(config, "train.seed");


  const auto batch = static_cast<std::size_t>(std::max(1.0, std::round(c.m)));
  const std::size_t spe = std::max<std::size_t>(1, (bundle.unlabeled.size() + batch - 1) / batch);
  if (const auto T = get_opt_uint(config, "train.T")) {
    c.T = *T;
  } else if (c.mode == dash::Mode::Theory) {
    throw ConfigError("train.T: required in theory mode");
  } else {
    c.T = get_uint(config, "train.epochs") * spe;
  }
  if (c.T == 0) throw ConfigError("train.T: must be positive");
  const auto eval = get_opt_uint(config, "train.eval_every");
  c.eval_every = eval ? *eval : (c.mode == dash::Mode::Theory ? 1 : spe);
  keyed("train", [&] {
    c.validate();
    return 0;
  });
  return c;
}

TheorySetup build_theory(const Json& config) {
  TheorySetup s;
  const auto dim = get_uint(config, "theory.dim");
  const double mu = get_double(config, "theory.mu");
  const double L = get_double(config, "theory.L");
  const double R = get_double(config, "theory.R");
  const auto problem_seed = get_uint(config, "theory.problem_seed");
  s.problem = keyed("theory", [&] { return theory::make_pl_problem(dim, mu, L, R, problem_seed); });
  const auto kind = keyed("theory.q_kind", [&] { return theory::q_kind_from_string(get_string(config, "theory.q_kind")); });
  s.Q = keyed("theory.q_param", [&] {
    return theory::make_q_distribution(s.problem, kind, get_double(config, "theory.q_param"), problem_seed);
  });

  theory::TheoryInputs in;
  in.G = s.problem.G();
  in.L = L;
  in.mu = mu;
  in.a = get_double(config, "theory.a");
  in.b = get_double(config, "theory.b");
  in.theta = get_double(config, "theory.theta");
  in.delta = get_double(config, "theory.delta");
  in.q = get_double(config, "theory.q");
  in.C = get_double(config, "theory.C");
  in.eta0 = get_double(config, "theory.eta0");
  in.eta = get_double(config, "theory.eta");
  in.F0 = s.problem.F(s.problem.w0);
  in.m_min = get_double(config, "theory.m_min");
  keyed("theory", [&] {
    in.validate();
    return 0;
  });
  s.constants = theory::derive_constants(in);
  s.T = get_uint(config, "theory.T");
  if (s.T == 0) throw ConfigError("theory.T: must be positive");
  s.seeds = get_uints(config, "theory.seeds");
  if (s.seeds.empty()) throw ConfigError("theory.seeds: need at least one seed");
  s.options.n_cap = get_uint(config, "theory.n_cap");
  s.options.truncate = get_bool(config, "theory.truncate");
  s.tsybakov_levels = get_doubles(config, "theory.tsybakov_levels");
  s.tsybakov_samples = get_uint(config, "theory.tsybakov_samples");
  if (!s.tsybakov_levels.empty() && s.tsybakov_samples < 100) {
    throw ConfigError("theory.tsybakov_samples: must be at least 100");
  }
  return s;
}

TrainOutcome train_from_config(const Json& config) {
  auto bundle = build_bundle(config);
  const auto model = build_model(config, bundle);
  const auto policy = build_policy(config);
  const auto dash_config = build_dash_config(config, bundle);
  auto result = dash::train_ssl(bundle, model, dash_config, policy);
  std::ostringstream csv;
  dash::write_metrics_csv(csv, result.log);
  return TrainOutcome{std::move(bundle), std::move(result), csv.str()};
}

theory::BoundReport theory_from_config(const Json& config) {
  auto s = build_theory(config);
  auto report = theory::verify_run(s.problem, s.Q, s.constants, s.T, s.seeds, s.options);
  if (!s.tsybakov_levels.empty()) {
    report.tsybakov = keyed("theory.tsybakov_levels", [&] {
      return theory::fit_tsybakov(s.problem, s.Q, s.tsybakov_levels, s.tsybakov_samples,
                                  get_uint(config, "theory.problem_seed"));
    });
  }
  return report;
}

void cmd_gen_data(const Json& config, const CommandOptions& options, std::ostream& log) {
  const auto bundle = build_bundle(config);
  const auto dir = resolve_output_dir(config, options.out);
  prepare_output_dir(dir, options.overwrite, {"resolved-config.json", "labeled.csv", "unlabeled.csv", "test.csv"});
  write_text(dir / "resolved-config.json", config.dump(2) + "\n");
  for (const auto& [name, set] : {std::pair{"labeled.csv", &bundle.labeled},
                                  std::pair{"unlabeled.csv", &bundle.unlabeled}, std::pair{"test.csv", &bundle.test}}) {
    std::ostringstream out;
    data::write_csv(out, *set);
    write_text(dir / name, out.str());
  }
  std::size_t n_q = 0;
  for (const auto& e : bundle.unlabeled) n_q += e.provenance == data::Provenance::UnlabeledQ ? 1 : 0;
  log << "labeled " << bundle.labeled.size() << ", unlabeled " << bundle.unlabeled.size() << " (" << n_q
      << " from Q), test " << bundle.test.size() << " -> " << dir.string() << "\n";
}

void cmd_train(const Json& config, const CommandOptions& options, std::ostream& log) {
  const auto dir = resolve_output_dir(config, options.out);
  const bool plot = get_bool(config, "plot");
  // Validate the whole config before touching the output directory.
  const auto probe = build_bundle(config);
  build_model(config, probe);
  build_policy(config);
  build_dash_config(config, probe);
  prepare_output_dir(dir, options.overwrite, kRunArtifacts);
  const auto outcome = train_from_config(config);
  write_run_dir(dir, config, outcome, plot);
  const auto& last = outcome.result.log.back();
  log << get_string(config, "train.algorithm") << ": rho_hat " << fmt_g(outcome.result.rho_hat) << ", "
      << outcome.result.log.size() << " steps, final test error " << fmt_g(last.test_error) << " -> "
      << dir.string() << "\n";
}

void cmd_compare(const Json& config, const CommandOptions& options, std::ostream& log) {
  const auto algorithms = get_strings(config, "compare.algorithms");
  const auto budgets = get_uints(config, "compare.label_budgets");
  const auto seeds = get_uints(config, "compare.seeds");
  const auto gammas = get_doubles(config, "compare.gammas");
  if (algorithms.size() < 2) throw ConfigError("compare.algorithms: need at least 2 algorithms");
  if (seeds.size() < 2) throw ConfigError("compare.seeds: need at least 2 seeds");
  if (budgets.empty()) throw ConfigError("compare.label_budgets: need at least one budget");
  for (const auto& a : algorithms) keyed("compare.algorithms", [&] { return dash::algorithm_from_string(a); });
  for (double g : gammas) {
    if (!(g > 1.0)) throw ConfigError("compare.gammas: every gamma must exceed 1");
  }

  struct Row {
    std::string algorithm;
    std::uint64_t budget;
    std::optional<double> gamma;
    std::vector<double> errors;
  };
  std::vector<Row> rows;
  for (auto budget : budgets) {
    for (const auto& a : algorithms) {
      const auto alg = dash::algorithm_from_string(a);
      const bool dynamic = alg == dash::Algorithm::Dash || alg == dash::Algorithm::DashPL;
      if (dynamic && !gammas.empty()) {
        for (double g : gammas) rows.push_back({a, budget, g, {}});
      } else {
        rows.push_back({a, budget, std::nullopt, {}});
      }
    }
  }

  auto cell_config = [&](const Row& row, std::uint64_t seed) {
    Json c = config;
    c.erase("compare");
    c["plot"] = false;
    c["data"]["labels_per_class"] = row.budget;
    c["data"]["seed"] = seed;
    c["train"]["algorithm"] = row.algorithm;
    c["train"]["seed"] = seed;
    if (row.gamma) c["train"]["gamma"] = *row.gamma;
    c["output_dir"] = "cells";
    return c;
  };
  for (const auto& row : rows) {
    for (auto seed : seeds) {
      const auto c = cell_config(row, seed);
      build_dash_config(c, build_bundle(c));
    }
  }

  const auto dir = resolve_output_dir(config, options.out);
  prepare_output_dir(dir, options.overwrite, {"resolved-config.json", "table.csv", "table.txt", "cells"});
  write_text(dir / "resolved-config.json", config.dump(2) + "\n");
  for (auto& row : rows) {
    for (auto seed : seeds) {
      const auto c = cell_config(row, seed);
      std::string name = row.algorithm + "_l" + std::to_string(row.budget);
      if (row.gamma) name += "_g" + fmt_g(*row.gamma, "%.4g");
      name += "_s" + std::to_string(seed);
      const auto cell_dir = dir / "cells" / name;
      fs::create_directories(cell_dir);
      const auto outcome = train_from_config(c);
      write_run_dir(cell_dir, c, outcome, false);
      row.errors.push_back(outcome.result.log.back().test_error);
      log << "  " << name << ": test error " << fmt_g(row.errors.back()) << "\n";
    }
  }

  std::string csv = "algorithm,labels_per_class,gamma,n_seeds,mean_error,std_error\n";
  std::string txt = "algorithm  labels/class  gamma   test error (%)\n";
  for (const auto& row : rows) {
    const auto n = static_cast<double>(row.errors.size());
    double mean = 0.0;
    for (double e : row.errors) mean += e;
    mean /= n;
    double var = 0.0;
    for (double e : row.errors) var += (e - mean) * (e - mean);
    const double sd = std::sqrt(var / (n - 1.0));
    const std::string gamma = row.gamma ? fmt_g(*row.gamma, "%.4g") : "-";
    csv += row.algorithm + "," + std::to_string(row.budget) + "," + gamma + "," + std::to_string(row.errors.size()) +
           "," + fmt_g(mean, "%.6f") + "," + fmt_g(sd, "%.6f") + "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-10s %-13llu %-7s %6.2f +- %.2f\n", row.algorithm.c_str(),
                  static_cast<unsigned long long>(row.budget), gamma.c_str(), 100.0 * mean, 100.0 * sd);
    txt += line;
  }
  write_text(dir / "table.csv", csv);
  write_text(dir / "table.txt", txt);
  log << txt;
}

void cmd_theory_verify(const Json& config, const CommandOptions& options, std::ostream& log) {
  const auto dir = resolve_output_dir(config, options.out);
  build_theory(config);
  prepare_output_dir(dir, options.overwrite, {"resolved-config.json", "report.json"});
  const auto report = theory_from_config(config);
  write_text(dir / "resolved-config.json", config.dump(2) + "\n");
  write_text(dir / "report.json", theory::report_json(report));

  std::map<std::string, Series> series;
  const auto n = static_cast<double>(report.runs.size());
  for (std::size_t t = 0; t < report.T; ++t) {
    double F = 0.0, A = 0.0, B = 0.0;
    for (const auto& run : report.runs) {
      F += run.F[t];
      A += static_cast<double>(run.A_rho[t]);
      B += static_cast<double>(run.B_rho[t]);
    }
    const auto x = static_cast<double>(t + 1);
    series["theory_F"].emplace_back(x, F / n);
    series["theory_envelope"].emplace_back(x, report.runs.front().envelope[t]);
    series["theory_A"].emplace_back(x, A / n);
    series["theory_A_lower"].emplace_back(x, report.A_lower[t]);
    series["theory_B"].emplace_back(x, B / n);
    series["theory_B_upper"].emplace_back(x, report.B_upper);
  }
  for (const auto& [name, s] : series) write_text(dir / (name + ".dat"), series_text(s));

  const auto& c = report.constants;
  log << "m " << c.m << " (closed form " << c.m_formula << "), beta " << fmt_g(c.beta) << ", alpha "
      << fmt_g(c.alpha) << ", a0 " << fmt_g(c.a0) << ", b0 " << fmt_g(c.b0) << ", rho_hat " << fmt_g(c.rho_hat)
      << ", gamma " << fmt_g(c.gamma) << ", T0 " << c.T0 << ", m0 " << c.m0 << "\n";
  log << "envelope pass fraction " << fmt_g(report.frac_envelope) << "\n";
  log << "|A| lower-bound pass fraction " << fmt_g(report.frac_A) << "\n";
  log << "|B| upper-bound pass fraction " << fmt_g(report.frac_B) << "\n";
  log << "predicted 1-(4T+1)delta " << fmt_g(report.predicted_pass) << "\n";
  log << "report -> " << (dir / "report.json").string() << "\n";
}

void cmd_plot_data(const std::vector<std::string>& inputs, bool fig2, const CommandOptions& options,
                   std::ostream& log) {
  if (inputs.empty() && !fig2) throw ConfigError("plot-data: give metrics inputs or --fig2");
  if (!options.out) throw ConfigError("plot-data: --out is required");

  std::vector<std::pair<std::string, std::vector<dash::SelectionStats>>> runs;
  std::set<std::string> names;
  for (const auto& input : inputs) {
    const fs::path p = input;
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "metrics.csv") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      if (files.empty()) throw ConfigError("plot-data: no metrics.csv under " + p.string());
    } else if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      throw ConfigError("plot-data: no such input " + p.string());
    }
    for (const auto& f : files) {
      std::string name = f.filename() == "metrics.csv" ? f.parent_path().filename().string() : f.stem().string();
      if (name.empty()) name = "run";
      if (!names.insert(name).second) throw ConfigError("plot-data: duplicate run name '" + name + "'");
      std::ifstream in(f);
      if (!in) throw ConfigError("plot-data: cannot read " + f.string());
      try {
        auto rows = dash::read_metrics_csv(in);
        if (rows.empty()) throw ConfigError("plot-data: " + f.string() + " has no rows");
        runs.emplace_back(name, std::move(rows));
      } catch (const InvalidInput& e) {
        throw ConfigError("plot-data: " + f.string() + ": " + e.what());
      }
    }
  }

  const fs::path dir = resolve_output_dir(Json{{"output_dir", *options.out}}, options.out);
  prepare_output_dir(dir, options.overwrite, {});
  std::size_t written = 0;
  for (const auto& [name, rows] : runs) {
    for (const auto& [series, points] : epoch_series(rows)) {
      write_text(dir / (name + "_" + series + ".dat"), series_text(points));
      ++written;
    }
  }
  if (fig2) {
    dash::ThresholdSchedule s;
    s.C = 1.0001;
    s.gamma = 1.27;
    s.rho_hat = 1.0;
    Series fixed, dynamic;
    for (std::size_t t = 1; t <= 30; ++t) {
      fixed.emplace_back(static_cast<double>(t), -std::log(augment::kFixMatchTau));
      dynamic.emplace_back(static_cast<double>(t), dash::threshold(t, s));
    }
    write_text(dir / "fig2_fixed.dat", series_text(fixed));
    write_text(dir / "fig2_dynamic.dat", series_text(dynamic));
    written += 2;
  }
  log << written << " series -> " << dir.string() << "\n";
}

int guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidInput& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CapExceeded& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const InfeasibleConstants& e) {
    err << "infeasible constants: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dashssl::cli
