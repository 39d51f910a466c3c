#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dashssl/augment.hpp"
#include "dashssl/dash.hpp"
#include "dashssl/data.hpp"
#include "dashssl/models.hpp"
#include "dashssl/theory.hpp"

namespace dashssl::cli {

using Json = nlohmann::ordered_json;

/// Bad or unknown configuration; the message names the key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitInfeasible = 4;

/// Environment variable naming the root for relative output directories.
inline constexpr const char* kOutputRootEnv = "DASH_OUTPUT_ROOT";

/// Full default tree for a subcommand: gen-data, train, compare, theory-verify.
Json default_config(const std::string& command);

/// Defaults, then the user document, then each "key.path=value" override.
/// Unknown keys raise ConfigError.
Json resolve_config(const std::string& command, const Json& user, const std::vector<std::string>& sets = {});

Json load_json_file(const std::filesystem::path& path);

std::filesystem::path resolve_output_dir(const Json& config, const std::optional<std::string>& out_flag);

data::DatasetBundle build_bundle(const Json& config);
models::Model build_model(const Json& config, const data::DatasetBundle& bundle);
augment::AugmentPolicy build_policy(const Json& config);
dash::DashConfig build_dash_config(const Json& config, const data::DatasetBundle& bundle);

struct TheorySetup {
  theory::PLProblem problem;
  theory::QDistribution Q;
  theory::TheoryConstants constants;
  std::size_t T = 0;
  std::vector<std::uint64_t> seeds;
  theory::RunOptions options;
  std::vector<double> tsybakov_levels;
  std::size_t tsybakov_samples = 0;
};

TheorySetup build_theory(const Json& config);

struct TrainOutcome {
  data::DatasetBundle bundle;
  dash::TrainResult result;
  std::string metrics_csv;
};

TrainOutcome train_from_config(const Json& config);
theory::BoundReport theory_from_config(const Json& config);

struct CommandOptions {
  std::optional<std::string> out;
  bool overwrite = false;
};

void cmd_gen_data(const Json& config, const CommandOptions& options, std::ostream& log);
void cmd_train(const Json& config, const CommandOptions& options, std::ostream& log);
void cmd_compare(const Json& config, const CommandOptions& options, std::ostream& log);
void cmd_theory_verify(const Json& config, const CommandOptions& options, std::ostream& log);
/// inputs are metrics CSV files or directories searched for metrics.csv.
void cmd_plot_data(const std::vector<std::string>& inputs, bool fig2, const CommandOptions& options,
                   std::ostream& log);

/// Runs body and maps exceptions to the documented exit codes.
int guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace dashssl::cli
