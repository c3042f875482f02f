#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "ardnas/app.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << ardnas::kUsage;
    return ardnas::kExitValidation;
  }
  ardnas::CliOptions o;
  std::uint64_t seed = 0;
  CLI::App cli{"sparse Bayesian architecture search and compression"};
  cli.set_help_flag("-h,--help");
  cli.add_option("command", o.command, "search | proxy-search | compress | retrain | eval | export")->required();
  cli.add_option("--config", o.config, "JSON config file");
  auto* seed_opt = cli.add_option("--seed", seed, "overrides the config seed");
  cli.add_option("--out", o.out, "output directory");
  cli.add_option("--data", o.data, "directory with MNIST IDX files");
  cli.add_option("--mode", o.mode, "exact | approx-hessian");
  cli.add_option("--arch", o.arch, "exported architecture or network JSON");
  cli.add_option("--format", o.format, "json | dot");
  try {
    cli.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    std::cout << cli.help() << ardnas::kUsage;
    return ardnas::kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << ardnas::kUsage;
    return ardnas::kExitValidation;
  }
  if (*seed_opt) o.seed = seed;
  return ardnas::run_cli(o, std::cout, std::cerr);
}
