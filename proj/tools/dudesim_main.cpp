#include <CLI11.hpp>

#include <dudesim/experiment.hpp>
#include <dudesim/verify.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw dudesim::ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int cmd_run(const std::string& config_path, const std::string& output_dir_override, bool emit_trace) {
  auto cfg = dudesim::parse_config(read_file(config_path));
  if (!output_dir_override.empty()) cfg.output_dir = output_dir_override;
  const auto report = dudesim::execute_run(cfg);
  dudesim::print_run_summary(report, cfg, std::cout);
  for (const auto& art : report.runs)
    for (const auto& f : art.files) std::cout << "wrote " << f << "\n";
  if (emit_trace) {
    const auto speeds = dudesim::build_speeds(cfg.speeds, cfg.objective.workers);
    const auto mode = dudesim::build_mode(cfg.mode);
    for (std::uint64_t seed : cfg.seeds) {
      const auto params = dudesim::build_algo_params(cfg, 1.0);
      const auto trace =
          dudesim::detail::build_trace(cfg.algorithm.kind, params, speeds, mode, cfg.T, seed);
      const auto path = std::filesystem::path(cfg.output_dir) /
                        (std::string(dudesim::to_string(cfg.algorithm.kind)) + "_seed" +
                         std::to_string(seed) + ".trace.jsonl");
      std::ofstream os(path);
      dudesim::write_trace_jsonl(os, trace, cfg.objective.workers);
      std::cout << "wrote " << path.string() << "\n";
    }
  }
  return 0;
}

int cmd_compare(const std::string& config_path, const std::string& algo_csv, const std::string& out) {
  auto cfg = dudesim::parse_config(read_file(config_path));
  std::vector<dudesim::AlgorithmKind> kinds;
  std::stringstream ss(algo_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto kind = dudesim::algorithm_from_string(item);
    if (!kind) throw dudesim::ConfigError("compare: unknown algorithm '" + item + "'");
    kinds.push_back(*kind);
  }
  if (kinds.empty()) throw dudesim::ConfigError("compare: no algorithms given");
  const auto table = dudesim::execute_compare(cfg, kinds);

  std::cout << std::setprecision(6)
            << "algorithm        eta        final_loss     final||gradF||^2  tau_max\n";
  for (const auto& s : table.series) {
    std::cout << std::left << std::setw(16) << dudesim::to_string(s.algorithm) << " " << std::setw(10)
              << s.eta << " " << std::setw(14) << s.result.final_loss << " " << std::setw(17)
              << s.result.final_grad_norm_sq << " " << s.result.tau_max_observed << "\n";
  }
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os.good()) throw dudesim::ConfigError("compare: cannot open output file " + out);
    dudesim::write_comparison_csv(os, table);
    std::cout << "wrote " << out << "\n";
  } else {
    dudesim::write_comparison_csv(std::cout, table);
  }
  return 0;
}

int cmd_verify(const std::string& suite, const std::string& out) {
  const auto results = dudesim::verify::run_suite(suite);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << "criterion " << r.criterion << " (" << r.name << "): "
              << (r.pass ? "PASS" : "FAIL") << " -- " << r.detail << "\n";
    all_pass = all_pass && r.pass;
  }
  const std::string report = dudesim::verify::report_json(results);
  if (!out.empty()) {
    std::ofstream os(out);
    os << report << "\n";
    std::cout << "wrote " << out << "\n";
  }
  return all_pass ? 0 : 1;
}

int cmd_partition(int classes, int samples, int workers, double alpha, std::uint64_t seed,
                  const std::string& labels_path, const std::string& out, bool emit_assignment) {
  std::vector<int> labels;
  if (!labels_path.empty()) {
    std::ifstream is(labels_path);
    if (!is.good()) throw dudesim::ConfigError("partition: cannot open labels file " + labels_path);
    int lab;
    while (is >> lab) labels.push_back(lab);
  } else {
    dudesim::RngStream rng = dudesim::RngStream::keyed(seed, 0x1ab);
    labels.resize(static_cast<std::size_t>(samples));
    for (auto& lab : labels) lab = static_cast<int>(rng.uniform_int(classes));
  }
  const auto part = dudesim::dirichlet_partition(labels, workers, alpha, seed);

  dudesim::json j;
  j["workers"] = workers;
  j["alpha"] = alpha;
  j["seed"] = seed;
  j["samples"] = labels.size();
  j["p"] = part.p;
  j["counts"] = part.counts;
  j["empty_workers"] = part.empty_workers;
  if (emit_assignment) j["assignment"] = part.assignment;
  const std::string text = j.dump(2);
  if (!out.empty()) {
    std::ofstream os(out);
    os << text << "\n";
    std::cout << "wrote " << out << "\n";
  } else {
    std::cout << text << "\n";
  }
  if (!part.empty_workers.empty()) {
    std::cout << "note: " << part.empty_workers.size()
              << " worker(s) received zero samples (small-alpha regime)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"parameter-server training simulator: dual-delayed asynchronous SGD and baselines"};
  app.require_subcommand(1);

  std::string config_path, output_dir, algos, out_path, suite, labels_path;
  int classes = 10, samples = 10000, workers = 10;
  double alpha = 0.5;
  std::uint64_t seed = 1;
  bool emit_assignment = false, emit_trace = false;

  auto* run = app.add_subcommand("run", "execute a run config across its seeds and stepsizes");
  run->add_option("--config", config_path, "path to the JSON run config")->required();
  run->add_option("--output-dir", output_dir, "override the config's output directory");
  run->add_flag("--emit-trace", emit_trace, "also write the schedule trace as JSONL per seed");

  auto* compare = app.add_subcommand("compare", "run several algorithms on one speed trace");
  compare->add_option("--config", config_path, "path to the JSON run config")->required();
  compare->add_option("--algorithms", algos, "comma-separated algorithm kinds")->required();
  compare->add_option("--out", out_path, "CSV output path (stdout when omitted)");

  auto* verify = app.add_subcommand("verify", "run a property suite and report pass/fail");
  verify->add_option("suite", suite, "invariants|reductions|bias|rate|lemma|all")->required();
  verify->add_option("--out", out_path, "write the machine-readable JSON report here");

  auto* partition = app.add_subcommand("partition", "standalone Dirichlet data partitioner");
  partition->add_option("--classes", classes, "number of classes for synthetic labels");
  partition->add_option("--samples", samples, "number of synthetic samples");
  partition->add_option("--labels-file", labels_path, "whitespace-separated labels (overrides synthetic)");
  partition->add_option("--workers", workers, "number of workers")->required();
  partition->add_option("--alpha", alpha, "Dirichlet concentration")->required();
  partition->add_option("--seed", seed, "partition seed");
  partition->add_option("--out", out_path, "JSON output path (stdout when omitted)");
  partition->add_flag("--assignment", emit_assignment, "include the per-sample assignment");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, output_dir, emit_trace);
    if (compare->parsed()) return cmd_compare(config_path, algos, out_path);
    if (verify->parsed()) return cmd_verify(suite, out_path);
    if (partition->parsed())
      return cmd_partition(classes, samples, workers, alpha, seed, labels_path, out_path,
                           emit_assignment);
  } catch (const dudesim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dudesim::SimulationError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
