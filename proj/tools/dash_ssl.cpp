// Command-line front end: gen-data, train, compare, theory-verify, plot-data.
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dashssl/cli.hpp"

namespace cli = dashssl::cli;

int main(int argc, char** argv) {
  CLI::App app{"Dynamic-threshold semi-supervised training and theory checks"};
  app.require_subcommand(1);

  struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    bool overwrite = false;
  };
  Common common;
  std::vector<std::string> inputs;
  bool fig2 = false;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) {
      sub->add_option("-c,--config", common.config, "JSON config merged onto the defaults");
      sub->add_option("--set", common.sets, "Override a leaf key: key.path=value")->allow_extra_args(false);
    }
    sub->add_option("-o,--out", common.out, "Output directory (relative paths honor DASH_OUTPUT_ROOT)");
    sub->add_flag("--overwrite", common.overwrite, "Replace a previous run in the output directory");
  };
  for (const char* name : {"gen-data", "train", "compare", "theory-verify"}) {
    add_common(app.add_subcommand(name, std::string("Run ") + name), true);
  }
  auto* dump = app.add_subcommand("defaults", "Print the default config of a subcommand");
  std::string dump_of;
  dump->add_option("command", dump_of, "gen-data, train, compare or theory-verify")->required();
  auto* plot = app.add_subcommand("plot-data", "Turn metrics CSVs into two-column series files");
  add_common(plot, false);
  plot->add_option("inputs", inputs, "metrics.csv files or directories containing them");
  plot->add_flag("--fig2", fig2, "Also emit fixed and dynamic threshold curves");

  CLI11_PARSE(app, argc, argv);

  auto* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  cli::CommandOptions options;
  if (!common.out.empty()) options.out = common.out;
  options.overwrite = common.overwrite;

  return cli::guarded(
      [&] {
        if (command == "defaults") {
          std::cout << cli::default_config(dump_of).dump(2) << "\n";
          return;
        }
        if (command == "plot-data") {
          cli::cmd_plot_data(inputs, fig2, options, std::cout);
          return;
        }
        const cli::Json user = common.config.empty() ? cli::Json() : cli::load_json_file(common.config);
        const auto config = cli::resolve_config(command, user, common.sets);
        if (command == "gen-data") cli::cmd_gen_data(config, options, std::cout);
        if (command == "train") cli::cmd_train(config, options, std::cout);
        if (command == "compare") cli::cmd_compare(config, options, std::cout);
        if (command == "theory-verify") cli::cmd_theory_verify(config, options, std::cout);
      },
      std::cerr);
}
