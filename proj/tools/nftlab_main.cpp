#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "nftlab/experiment.hpp"

namespace {

using nftlab::ConfigError;
using nftlab::ExperimentConfig;
using nftlab::json;

struct Args {
  std::string subcommand;
  std::vector<std::string> configs;  // run-all takes several, others take one
  std::string model_path;
  std::string out_dir = "out";
  std::string method;
  int epochs = -1;
  int jobs = 1;
  std::vector<std::string> overrides;
  bool help = false;
};

void print_usage() {
  std::cout
      << "Usage: nftlab <subcommand> [options] [config.json ...]\n"
      << "Subcommands:\n"
      << "  gen-data            write the synthetic dataset as IDX files\n"
      << "  train-benign        train a clean reference model\n"
      << "  train-backdoor      poison the training pool and train\n"
      << "  purify              purify a checkpoint (--model required)\n"
      << "  evaluate            ASR/ACC/LCR of a checkpoint (--model required)\n"
      << "  theorem-check       mixup bound and homogeneity diagnostics\n"
      << "  export-embeddings   penultimate-layer features to CSV (--model)\n"
      << "  run-all             full pipeline; accepts several configs\n"
      << "Options:\n"
      << "  --config PATH       experiment config (or pass configs positionally)\n"
      << "  --model PATH        checkpoint consumed by purify/evaluate/export\n"
      << "  --out DIR           output directory (default: out)\n"
      << "  --method nft|vanilla-ft   override purify.method\n"
      << "  --epochs N          override purify.epochs\n"
      << "  --set key=value     dotted-path config override, repeatable\n"
      << "  --jobs N            parallel processes for run-all sweeps\n"
      << "Environment: NFT_LAB_SEED overrides the config seed.\n";
}

bool parse_args(int argc, char** argv, Args& args) {
  if (argc < 2) return false;
  args.subcommand = argv[1];
  if (args.subcommand == "--help" || args.subcommand == "-h") {
    args.help = true;
    return true;
  }
  for (int i = 2; i < argc; ++i) {
    const std::string a = argv[i];
    auto next = [&](const char* flag) -> std::string {
      if (i + 1 >= argc) {
        std::cerr << "missing value for " << flag << "\n";
        return {};
      }
      return argv[++i];
    };
    if (a == "--config") {
      const std::string v = next("--config");
      if (v.empty()) return false;
      args.configs.push_back(v);
    } else if (a == "--model") {
      args.model_path = next("--model");
      if (args.model_path.empty()) return false;
    } else if (a == "--out") {
      args.out_dir = next("--out");
      if (args.out_dir.empty()) return false;
    } else if (a == "--method") {
      args.method = next("--method");
      if (args.method.empty()) return false;
    } else if (a == "--epochs") {
      const std::string v = next("--epochs");
      if (v.empty()) return false;
      args.epochs = std::stoi(v);
    } else if (a == "--set") {
      const std::string v = next("--set");
      if (v.empty()) return false;
      args.overrides.push_back(v);
    } else if (a == "--jobs") {
      const std::string v = next("--jobs");
      if (v.empty()) return false;
      args.jobs = std::stoi(v);
    } else if (a == "--help" || a == "-h") {
      args.help = true;
    } else if (!a.empty() && a[0] != '-') {
      args.configs.push_back(a);
    } else {
      std::cerr << "unknown argument: " << a << "\n";
      return false;
    }
  }
  return true;
}

ExperimentConfig load_config(const Args& args, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw nftlab::IoError("cannot open config '" + path + "'");
  json raw;
  try {
    raw = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("/", std::string("config is not valid json: ") + e.what());
  }
  for (const auto& o : args.overrides) nftlab::apply_override(raw, o);
  if (!args.method.empty()) raw["purify"]["method"] = args.method;
  if (args.epochs >= 0) raw["purify"]["epochs"] = args.epochs;
  if (const char* env = std::getenv("NFT_LAB_SEED")) raw["seed"] = std::stoull(env);
  return nftlab::parse_experiment_config(raw);
}

int run_one(const Args& args, const std::string& config_path, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config(args, config_path);
  const std::string& sub = args.subcommand;
  if (sub == "gen-data") {
    nftlab::run_gen_data_stage(cfg, out_dir);
  } else if (sub == "train-benign") {
    const auto report = nftlab::run_train_stage(cfg, false, out_dir);
    std::cout << "acc " << report["metrics"]["acc"] << "\n";
  } else if (sub == "train-backdoor") {
    if (!cfg.attack) throw ConfigError("/attack", "train-backdoor needs an attack section");
    const auto report = nftlab::run_train_stage(cfg, true, out_dir);
    std::cout << "acc " << report["metrics"]["acc"] << " asr "
              << report["metrics"]["asr"] << "\n";
  } else if (sub == "purify") {
    if (args.model_path.empty()) throw ConfigError("/", "purify needs --model");
    const auto report = nftlab::run_purify_stage(cfg, args.model_path, out_dir);
    std::cout << "acc " << report["metrics"]["acc-before"] << " -> "
              << report["metrics"]["acc-after"] << ", asr "
              << report["metrics"]["asr-before"] << " -> "
              << report["metrics"]["asr-after"] << "\n";
  } else if (sub == "evaluate") {
    if (args.model_path.empty()) throw ConfigError("/", "evaluate needs --model");
    const auto report = nftlab::run_evaluate_stage(cfg, args.model_path, out_dir);
    std::cout << report["metrics"].dump() << "\n";
  } else if (sub == "theorem-check") {
    const auto outcome = nftlab::run_theory_stage(cfg, out_dir);
    std::cout << "inequality-holds "
              << (outcome.bound.inequality_holds ? "true" : "false")
              << " euler-max-residual " << outcome.euler_max_residual << "\n";
  } else if (sub == "export-embeddings") {
    if (args.model_path.empty())
      throw ConfigError("/", "export-embeddings needs --model");
    nftlab::run_export_embeddings_stage(cfg, args.model_path, out_dir);
  } else if (sub == "run-all") {
    const auto result = nftlab::run_pipeline(cfg, out_dir);
    std::cout << result.report["metrics"].dump() << "\n";
  } else {
    std::cerr << "unknown subcommand: " << sub << "\n";
    print_usage();
    return 1;
  }
  return 0;
}

std::string stem_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

// run-all over several configs, fanned across child processes.
int run_sweep(const Args& args) {
  struct Cell {
    std::string config;
    std::string out_dir;
    pid_t pid = -1;
  };
  std::vector<Cell> cells;
  for (const auto& c : args.configs)
    cells.push_back({c, args.out_dir + "/" + stem_of(c), -1});

  int running = 0, failures = 0;
  std::size_t next = 0;
  auto reap = [&]() {
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid > 0) {
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    }
  };
  while (next < cells.size() || running > 0) {
    while (next < cells.size() && running < std::max(1, args.jobs)) {
      Cell& cell = cells[next++];
      const pid_t pid = fork();
      if (pid == 0) {
        Args one = args;
        one.configs = {cell.config};
        _exit(run_one(one, cell.config, cell.out_dir));
      }
      cell.pid = pid;
      ++running;
    }
    if (running > 0) reap();
  }
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  Args args;
  if (!parse_args(argc, argv, args) || args.help || args.subcommand.empty()) {
    print_usage();
    return args.help ? 0 : 1;
  }
  try {
    if (args.configs.empty()) {
      std::cerr << "no config given\n";
      return 1;
    }
    if (args.subcommand == "run-all" && args.configs.size() > 1) return run_sweep(args);
    return run_one(args, args.configs.front(), args.out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
