#include <catch_amalgamated.hpp>

#include <dudesim/config.hpp>
#include <dudesim/experiment.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace dudesim;

namespace {
RunConfig small_config() {
  RunConfig c;
  c.objective.kind = "quadratic";
  c.objective.workers = 3;
  c.objective.dim = 4;
  c.objective.sigma = 0.3;
  c.algorithm.kind = AlgorithmKind::dude_asgd;
  c.stepsize.mode = "explicit";
  c.stepsize.value = 0.02;
  c.T = 40;
  c.seeds = {1};
  return c;
}
}  // namespace

TEST_CASE("config round-trip: parse(emit(config)) == config") {
  const RunConfig c = small_config();
  const auto emitted = to_json(c).dump(2);
  const RunConfig parsed = parse_config(emitted);
  REQUIRE(to_json(parsed).dump(2) == emitted);
  REQUIRE(config_hash(parsed) == config_hash(c));
}

TEST_CASE("config hash distinguishes different configs") {
  RunConfig a = small_config();
  RunConfig b = small_config();
  b.T = 41;
  REQUIRE(config_hash(a) != config_hash(b));
}

TEST_CASE("invalid configs are rejected with precise messages") {
  RunConfig base = small_config();
  auto mutate = [&](auto&& fn) {
    json j = to_json(base);
    fn(j);
    return j.dump();
  };
  // T = 0
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) { j["T"] = 0; })), ConfigError);
  // unknown top-level key
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) { j["extra"] = 1; })), ConfigError);
  // unknown nested key
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) { j["objective"]["foo"] = 1; })), ConfigError);
  // bad algorithm
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) { j["algorithm"]["kind"] = "sgd9000"; })),
                    ConfigError);
  // semi-async width out of range
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) {
                      j["mode"] = {{"kind", "semi_async"}, {"c", 99}};
                    })),
                    ConfigError);
  // vanilla cannot run in lockstep
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) {
                      j["algorithm"]["kind"] = "vanilla_asgd";
                      j["mode"] = {{"kind", "lockstep"}};
                    })),
                    ConfigError);
  // empty grid
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) {
                      j["stepsize"] = {{"mode", "grid"}, {"values", json::array()}};
                    })),
                    ConfigError);
  // theorem1 with zero noise
  REQUIRE_THROWS_AS(parse_config(mutate([](json& j) {
                      j["objective"]["sigma"] = 0.0;
                      j["stepsize"] = {{"mode", "theorem1"}};
                    })),
                    ConfigError);
}

TEST_CASE("experiment-shaped config parses and runs on a synthetic objective") {
  // ten workers, std-5 speeds, batch 64, stepsize grid {0.001, 0.005, 0.01}
  const std::string text = R"({
    "schema_version": 1,
    "objective": {"kind": "logistic", "workers": 10, "dim": 6, "samples": 2000,
                   "alpha": 0.5, "lambda": 0.001, "batch_size": 64, "seed": 7},
    "algorithm": {"kind": "dude_asgd"},
    "stepsize": {"mode": "grid", "values": [0.001, 0.005, 0.01]},
    "speeds": {"mu": 1.0, "std": 5.0, "seed": 3},
    "mode": {"kind": "fully_async"},
    "T": 40,
    "seeds": [1],
    "record_every": 10
  })";
  const RunConfig cfg = parse_config(text);
  REQUIRE(cfg.objective.batch_size == 64);
  REQUIRE(cfg.stepsize.values.size() == 3);
  const auto report = execute_run(cfg, /*write_files=*/false);
  REQUIRE(report.runs.size() == 3);  // one per grid stepsize
  for (const auto& art : report.runs) REQUIRE(std::isfinite(art.result.final_loss));
}

TEST_CASE("outputs embed the resolved config header and a stable hash") {
  namespace fs = std::filesystem;
  RunConfig cfg = small_config();
  cfg.output_dir = (fs::temp_directory_path() / "dudesim_cfg_test").string();
  cfg.output_format = "jsonl";
  fs::remove_all(cfg.output_dir);
  const auto report = execute_run(cfg);
  REQUIRE(report.runs.size() == 1);
  REQUIRE(report.runs.front().files.size() == 1);
  std::ifstream is(report.runs.front().files.front());
  std::string header_line;
  std::getline(is, header_line);
  const json header = json::parse(header_line);
  REQUIRE(header.at("schema_version") == 1);
  REQUIRE(header.at("seed") == 1);
  std::ostringstream expect_hash;
  expect_hash << "0x" << std::hex << config_hash(cfg);
  REQUIRE(header.at("config_hash") == expect_hash.str());
  REQUIRE(config_from_json(header.at("config")).T == cfg.T);
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("compare: dual-delay and sync agree in lockstep, degenerate table works") {
  RunConfig cfg = small_config();
  cfg.mode.kind = "lockstep";
  cfg.T = 100;
  const auto single = execute_compare(cfg, {AlgorithmKind::sync_sgd});
  REQUIRE(single.series.size() == 1);

  const auto table = execute_compare(cfg, {AlgorithmKind::dude_asgd, AlgorithmKind::sync_sgd});
  REQUIRE(table.series.size() == 2);
  REQUIRE((table.series[0].result.final_w - table.series[1].result.final_w).cwiseAbs().maxCoeff() <=
          1e-12);
  std::ostringstream os;
  write_comparison_csv(os, table);
  const std::string text = os.str();
  REQUIRE(text.find("dude_asgd_loss") != std::string::npos);
  REQUIRE(std::count(text.begin(), text.end(), '\n') == 65);  // header + 64 grid rows
}

TEST_CASE("compare: under high heterogeneity full aggregation beats the single-gradient update") {
  RunConfig cfg;
  cfg.objective.kind = "quadratic";
  cfg.objective.workers = 4;
  cfg.objective.dim = 6;
  cfg.objective.hetero = 2.0;
  cfg.objective.sigma = 0.0;
  cfg.objective.seed = 3;
  cfg.stepsize.mode = "explicit";
  cfg.stepsize.value = 0.002;
  cfg.speeds.explicit_speeds = {1.0, 1.5, 4.0, 8.0};
  cfg.T = 40000;
  cfg.seeds = {1};
  cfg.record_every = 1000;
  const auto table = execute_compare(
      cfg, {AlgorithmKind::dude_asgd, AlgorithmKind::vanilla_asgd, AlgorithmKind::sync_sgd,
            AlgorithmKind::siag_mifa});
  const auto& dude = table.series[0].result;
  const auto& vanilla = table.series[1].result;
  REQUIRE(dude.final_grad_norm_sq < vanilla.final_grad_norm_sq);
  REQUIRE(dude.final_grad_norm_sq <= 1e-10);
  REQUIRE(vanilla.final_grad_norm_sq >= 1e-4);  // biased by skewed contribution frequencies
}

TEST_CASE("theorem1 stepsize mode resolves from measured delays") {
  RunConfig cfg = small_config();
  cfg.stepsize.mode = "theorem1";
  cfg.objective.sigma = 0.5;
  const auto report = execute_run(cfg, /*write_files=*/false);
  REQUIRE(report.runs.size() == 1);
  REQUIRE(report.runs.front().eta > 0.0);
  REQUIRE_FALSE(report.notes.empty());
}

TEST_CASE("concurrent seed execution leaves results unchanged") {
  RunConfig cfg = small_config();
  cfg.seeds = {1, 2, 3, 4};
  cfg.T = 200;
  auto run_with_jobs = [&](int jobs) {
    cfg.jobs = jobs;
    std::vector<Vec> finals;
    for (const auto& art : execute_run(cfg, /*write_files=*/false).runs)
      finals.push_back(art.result.final_w);
    return finals;
  };
  const auto serial = run_with_jobs(1);
  const auto parallel = run_with_jobs(4);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t k = 0; k < serial.size(); ++k)
    REQUIRE((serial[k] - parallel[k]).norm() == 0.0);
}
