// segxfer: dataset generation, pretext training, scenario finetuning, CKA
// and reporting from flat `key = value` config files.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <utility>

#include "segxfer/harness/experiment.hpp"

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Args& args) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", args.config, "key = value config file")->required();
  sub->add_option("--seed", args.seed, "overrides the seed in the config");
  sub->add_option("--out", args.out, "output directory")->capture_default_str();
  return sub;
}

int run(const std::string& command, const Args& args) {
  using namespace segxfer::harness;
  const Config config = Config::load(args.config);
  const std::filesystem::path out(args.out);
  if (command == "datagen") {
    cmd_datagen(config, args.seed, out, std::cout);
  } else if (command == "pretrain") {
    cmd_pretrain(config, args.seed, out, std::cout);
  } else if (command == "finetune") {
    cmd_finetune(config, args.seed, out, std::cout, std::cerr);
  } else if (command == "cka") {
    if (args.seed) std::cerr << "WARN harness:ignored_seed cka is deterministic; --seed has no effect\n";
    cmd_cka(config, out, std::cout);
  } else {
    if (args.seed) std::cerr << "WARN harness:ignored_seed report has no randomness; --seed has no effect\n";
    cmd_report(config, out, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segxfer: segmentation transfer-learning experiments"};
  app.require_subcommand(1);
  Args args;
  const std::pair<const char*, const char*> commands[] = {
      {"datagen", "generate a synthetic shapes dataset"},
      {"pretrain", "train a pretext objective and save a checkpoint"},
      {"finetune", "apply a transfer scenario and finetune on dice"},
      {"cka", "encoder CKA similarity between checkpoints"},
      {"report", "aggregate RunLogs into curve and summary CSVs"},
  };
  for (const auto& [name, help] : commands) add_command(app, name, help, args);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERR harness:usage " << e.what() << "\n";
    return 2;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), args);
  } catch (const segxfer::Error& e) {
    std::cerr << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "ERR harness:internal " << e.what() << "\n";
  }
  return 1;
}
