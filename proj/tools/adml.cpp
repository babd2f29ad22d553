// adml: meta-train, meta-test, gen-adv, gradcheck and report commands.

#include <CLI11.hpp>

#include "adml/cli/commands.hpp"

using namespace adml::cli;

namespace {

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string report;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> eps;
  std::optional<std::size_t> shots, ways, tasks;
  std::optional<std::string> order;

  Overrides overrides() const {
    Overrides o;
    if (seed) o.emplace_back("seed", std::to_string(*seed));
    if (out) o.emplace_back("out", *out);
    if (eps) o.emplace_back("eval.eps", *eps);
    if (shots) o.emplace_back("shots", std::to_string(*shots));
    if (ways) o.emplace_back("ways", std::to_string(*ways));
    if (tasks) o.emplace_back("eval.tasks", std::to_string(*tasks));
    if (order) o.emplace_back("order", *order);
    return o;
  }

  std::optional<std::filesystem::path> config_path() const {
    if (config.empty()) return std::nullopt;
    return std::filesystem::path(config);
  }
};

void add_run_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--shots", f.shots, "Support samples per class");
  cmd->add_option("--ways", f.ways, "Classes per task");
  cmd->add_option("--order", f.order, "Meta-gradient order")->check(CLI::IsMember({"full", "first"}));
}

void add_eval_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--eps", f.eps, "Comma-separated attack budgets");
  cmd->add_option("--tasks", f.tasks, "Number of test tasks");
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate")->required();
  cmd->add_option("--config", f.config, "Config file (default: the config stored in the checkpoint)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial meta-learning: training, evaluation and gradient checks"};
  app.require_subcommand(1);
  Flags f;

  auto* train = app.add_subcommand("meta-train", "Meta-train from a config file");
  train->add_option("--config", f.config, "Config file")->required();
  add_run_flags(train, f);

  auto* test = app.add_subcommand("meta-test", "Evaluate a checkpoint over the scenario grid");
  add_run_flags(test, f);
  add_eval_flags(test, f);

  auto* adv = app.add_subcommand("gen-adv", "Export FGSM examples in the dataset format");
  add_run_flags(adv, f);
  add_eval_flags(adv, f);

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference and closed-form oracle checks");

  auto* report = app.add_subcommand("report", "Re-render report.json as grid.csv and curves.csv");
  report->add_option("report", f.report, "report.json path")->required();
  report->add_option("--out", f.out, "Output directory (default: next to the report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  return guarded(std::cerr, [&] {
    if (*train) {
      RunConfig cfg = load_config(f.config);
      apply_overrides(cfg, f.overrides());
      meta_train_run(cfg, std::cout);
      return 0;
    }
    if (*test) {
      meta_test_run(f.checkpoint, f.config_path(), f.overrides());
      return 0;
    }
    if (*adv) {
      const auto n = gen_adv_run(f.checkpoint, f.config_path(), f.overrides());
      std::cout << "wrote " << n << " adversarial samples\n";
      return 0;
    }
    if (*gc) {
      if (const auto failed = gradcheck_run(std::cout)) {
        std::cerr << "gradcheck failed: " << *failed << '\n';
        return 1;
      }
      std::cout << "all checks passed\n";
      return 0;
    }
    const std::filesystem::path path = f.report;
    report_run(path, f.out ? std::filesystem::path(*f.out) : path.parent_path());
    return 0;
  });
}
