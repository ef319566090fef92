// Command-line front end: run, sweep, verify, report.

#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "clarinet/experiment.hpp"
#include "clarinet/verify.hpp"

namespace {

namespace ex = clarinet::experiment;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingData = 3;

/// Flags shared by `run` and `sweep`; empty optionals mean "not given".
struct CommonFlags {
  std::string config_file;
  std::optional<std::string> task, method, seeds, data_root, out, pc_source, ablation;
  std::optional<std::size_t> n_true, batch_size;
  std::optional<int> epochs, ts;
  std::optional<double> lambda, temperature, alpha, classifier_lr, adversarial_lr, decay_gamma;
  bool deterministic = false;
  bool no_checkpoints = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_method) {
  cmd->add_option("--config", f.config_file, "key = value config file; flags override it");
  cmd->add_option("--task", f.task, "task name (moons30, moons0, blobs5, mnist2usps, usps2mnist)");
  if (with_method) cmd->add_option("--method", f.method, "clarinet-cc, clarinet-pc, gac or two-step");
  cmd->add_option("--seeds", f.seeds, "comma-separated seeds or ranges, e.g. 1,2,3 or 1-5");
  cmd->add_option("--data-root", f.data_root, "directory with mnist/ and usps/ IDX files");
  cmd->add_option("--out", f.out, "output directory for run folders");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "mini-batch size");
  cmd->add_option("--lambda", f.lambda, "adversarial tradeoff");
  cmd->add_option("--temperature", f.temperature, "sharpening temperature");
  cmd->add_option("--alpha", f.alpha, "true-label loss weight (clarinet-pc)");
  cmd->add_option("--ts", f.ts, "epochs before adversarial updates start");
  cmd->add_option("--classifier-lr", f.classifier_lr, "classifier learning rate");
  cmd->add_option("--adversarial-lr", f.adversarial_lr, "adversarial learning rate");
  cmd->add_option("--decay-gamma", f.decay_gamma, "inverse learning-rate decay strength (0 = constant)");
  cmd->add_option("--pc-source", f.pc_source, "split or augment (clarinet-pc)");
  cmd->add_option("--ablation", f.ablation, "no-sharpen, no-condition, ce-on-complementary (comma list)");
  cmd->add_flag("--deterministic", f.deterministic, "single-threaded, bit-reproducible execution");
  cmd->add_flag("--no-checkpoints", f.no_checkpoints, "skip writing model checkpoints");
}

ex::ExperimentConfig build_config(const CommonFlags& f) {
  ex::ExperimentConfig cfg;
  if (!f.config_file.empty()) ex::apply_config(ex::read_config_file(f.config_file), cfg);
  std::map<std::string, std::string> kv;
  auto put = [&kv](const char* key, const auto& value) {
    if (value) {
      std::ostringstream s;
      s << std::setprecision(17) << *value;
      kv[key] = s.str();
    }
  };
  put("task", f.task);
  put("method", f.method);
  put("seeds", f.seeds);
  put("data_root", f.data_root);
  put("out", f.out);
  put("pc_source", f.pc_source);
  put("ablation", f.ablation);
  put("n_true", f.n_true);
  put("batch_size", f.batch_size);
  put("epochs", f.epochs);
  put("ts", f.ts);
  put("lambda", f.lambda);
  put("temperature", f.temperature);
  put("alpha", f.alpha);
  put("classifier_lr", f.classifier_lr);
  put("adversarial_lr", f.adversarial_lr);
  put("decay_gamma", f.decay_gamma);
  ex::apply_config(kv, cfg);
  if (f.deterministic) cfg.deterministic = true;
  if (f.no_checkpoints) cfg.write_checkpoints = false;
  return cfg;
}

void print_run(const ex::RunRecord& r) {
  std::cout << "seed  target_acc  source_acc\n";
  for (const auto& s : r.seeds) {
    std::cout << std::setw(4) << s.seed << "  " << std::fixed << std::setprecision(4) << std::setw(10) << s.target_acc
              << "  " << std::setw(10) << s.source_acc << '\n';
  }
  std::cout.unsetf(std::ios::fixed);
  std::cout << "target accuracy (%): " << ex::format_mean_std(r.target) << "  median " << std::setprecision(4)
            << r.target.median << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Complementary-label adversarial domain adaptation experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "train one method on one task for each seed");
  add_common(run_cmd, run_flags, true);
  run_cmd->add_option("--n-true", run_flags.n_true, "true-labeled source examples (clarinet-pc)");

  CommonFlags sweep_flags;
  std::vector<std::size_t> sweep_values;
  auto* sweep_cmd = app.add_subcommand("sweep", "clarinet-pc over several n_true values");
  add_common(sweep_cmd, sweep_flags, false);
  sweep_cmd->add_option("--n-true", sweep_values, "n_true values, e.g. 0,200,400")->delimiter(',')->required();

  std::string inject = "none";
  double verify_temperature = 0.5;
  auto* verify_cmd = app.add_subcommand("verify", "run the oracle checks and print a pass/fail table");
  verify_cmd->add_option("--inject", inject, "deliberate fault: none or sign-flip")
      ->check(CLI::IsMember({"none", "sign-flip"}));
  verify_cmd->add_option("--temperature", verify_temperature, "temperature for the sharpening checks");

  std::vector<std::string> report_dirs;
  auto* report_cmd = app.add_subcommand("report", "recompute summaries from persisted metrics");
  report_cmd->add_option("run_dirs", report_dirs, "run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const ex::ExperimentConfig cfg = build_config(run_flags);
      print_run(ex::run(cfg, &std::cerr));
      return 0;
    }
    if (*sweep_cmd) {
      const ex::ExperimentConfig cfg = build_config(sweep_flags);
      const auto result = ex::sweep_true_labels(cfg, sweep_values, &std::cerr);
      std::cout << "n_true  target accuracy (%)   median\n";
      for (const auto& row : result.rows) {
        std::cout << std::setw(6) << row.n_true << "  " << std::setw(20) << ex::format_mean_std(row.record.target)
                  << "  " << std::setprecision(4) << row.record.target.median << '\n';
      }
      for (const auto& note : result.notes) std::cout << note << '\n';
      std::cout << "sweep directory: " << result.sweep_dir << '\n';
      return 0;
    }
    if (*verify_cmd) {
      clarinet::verify::Options options;
      options.sharpen_temperature = verify_temperature;
      if (inject == "sign-flip") options.estimator = clarinet::verify::sign_flipped_estimator;
      const bool ok = clarinet::verify::print_table(std::cout, clarinet::verify::run_all(options));
      std::cout << (ok ? "all checks passed\n" : "some checks FAILED\n");
      return ok ? 0 : kExitFailure;
    }
    if (*report_cmd) {
      bool ok = true;
      for (const auto& dir : report_dirs) {
        const auto rr = ex::report(dir);
        std::cout << dir << '\n';
        print_run(rr.recomputed);
        std::cout << "matches summary.json: " << (rr.consistent() ? "yes" : "NO") << " (max deviation "
                  << rr.max_deviation << ")\n";
        ok &= rr.consistent();
      }
      return ok ? 0 : kExitFailure;
    }
  } catch (const ex::DataMissingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
