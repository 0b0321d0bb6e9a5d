#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fairleak/harness.hpp"
#include "fairleak/random.hpp"

using namespace fairleak;

int main(int argc, char** argv) {
  CLI::App app{"fairleak: membership-privacy auditing of equalized-odds fair learning"};
  app.require_subcommand(1);

  std::string config_path, out_path, sweep_path, report_path;
  int jobs = 1;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset CSV");
  gen->add_option("--config", config_path, "experiment config file")->required();
  gen->add_option("--out", out_path, "output CSV path")->required();

  auto* run = app.add_subcommand("run", "Run a full experiment");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_path, "output directory")->required();
  run->add_option("--jobs", jobs, "parallel training jobs");

  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  sweep->add_option("--config", config_path, "experiment config file")->required();
  sweep->add_option("--sweep", sweep_path, "sweep spec file")->required();
  sweep->add_option("--out", out_path, "output directory")->required();
  sweep->add_option("--jobs", jobs, "parallel training jobs");

  auto* compare = app.add_subcommand("compare", "Emit the attack-comparison table from a report");
  compare->add_option("--report", report_path, "report.json path")->required();
  compare->add_option("--out", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      Dataset data = generate_synthetic(cfg.synthetic,
                                        derive_seed(cfg.seed, "data"));
      save_csv(data, out_path);
      std::cout << "wrote " << data.size() << " points to " << out_path << "\n";
    } else if (run->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      cfg.jobs = jobs;
      PrivacyReport report = run_experiment(cfg, out_path);
      std::cout << "experiment complete: " << out_path << "/report.json\n";
      std::cout << "  unconstrained acc train/test: "
                << report.summary_unconstrained.train_accuracy << " / "
                << report.summary_unconstrained.test_accuracy << "\n";
      std::cout << "  fair acc train/test:          "
                << report.summary_fair.train_accuracy << " / "
                << report.summary_fair.test_accuracy << "\n";
      std::cout << "  train gap unc/fair:           "
                << report.summary_unconstrained.train_gap << " / "
                << report.summary_fair.train_gap << "\n";
    } else if (sweep->parsed()) {
      ExperimentConfig cfg = load_experiment_config(config_path);
      cfg.jobs = jobs;
      SweepSpec spec = load_sweep_spec(sweep_path);
      run_sweep(cfg, spec, out_path);
      std::cout << "sweep complete: " << out_path << "/sweep_summary.csv\n";
    } else if (compare->parsed()) {
      std::ifstream in(report_path);
      if (!in) throw std::runtime_error("cannot open " + report_path);
      std::stringstream buffer;
      buffer << in.rdbuf();
      PrivacyReport report = report_from_json(buffer.str());
      compare_attacks(report, out_path);
      std::cout << "wrote " << out_path << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
