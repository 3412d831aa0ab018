#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "objectives.hpp"
#include "runner.hpp"
#include "simclock.hpp"

namespace dudesim {

using json = nlohmann::ordered_json;

// Rejected configs surface as ConfigError (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace cfg_detail {
inline void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed,
                        const std::set<std::string>& required) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
  for (const auto& key : required) {
    if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  }
}

template <typename T>
T get(const json& j, const std::string& where, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::detail::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& where, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return get<T>(j, where, key);
}
}  // namespace cfg_detail

struct ObjectiveConfig {
  std::string kind = "quadratic";  // quadratic | logistic
  int workers = 8;
  int dim = 16;
  double hetero = 1.0;     // quadratic
  double sigma = 0.5;      // quadratic noise scale
  int samples = 4000;      // logistic pooled dataset size
  double alpha = 0.5;      // logistic Dirichlet concentration
  double lambda = 1e-3;    // logistic regularizer
  double sigma_bound = 1.0;  // logistic noise bound for stepsize formulas
  int batch_size = 1;
  std::uint64_t seed = 7;
};

struct StepsizeConfig {
  std::string mode = "explicit";  // explicit | theorem1 | grid
  double value = 0.01;
  std::vector<double> values;  // grid
};

struct AlgorithmConfig {
  AlgorithmKind kind = AlgorithmKind::dude_asgd;
  std::string sample_policy = "fresh";  // fresh | receipt
  int local_steps = 1;
  int buffer_size = 1;
  double eta_local = 0.01;
  int shuffle_period = 0;
  bool paranoid = false;  // re-check the aggregation buffer against a re-sum every step
};

struct SpeedConfig {
  double mu = 1.0;
  double std = 1.0;
  std::uint64_t seed = 3;
  std::vector<double> explicit_speeds;  // overrides mu/std when non-empty
};

struct ModeConfig {
  std::string kind = "fully_async";  // fully_async | semi_async | lockstep
  int c = 1;
};

struct W0Config {
  std::string kind = "zero";  // zero | constant | random
  double value = 1.0;         // constant fill or random scale
  std::uint64_t seed = 5;
};

struct RunConfig {
  int schema_version = 1;
  ObjectiveConfig objective;
  AlgorithmConfig algorithm;
  StepsizeConfig stepsize;
  SpeedConfig speeds;
  ModeConfig mode;
  std::int64_t T = 1000;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  W0Config w0;
  int record_every = 1;
  std::string output_dir = "out";
  std::string output_format = "jsonl";  // jsonl | csv | both
  int jobs = 1;
};

inline json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  json obj;
  obj["kind"] = c.objective.kind;
  obj["workers"] = c.objective.workers;
  obj["dim"] = c.objective.dim;
  if (c.objective.kind == "quadratic") {
    obj["hetero"] = c.objective.hetero;
    obj["sigma"] = c.objective.sigma;
  } else {
    obj["samples"] = c.objective.samples;
    obj["alpha"] = c.objective.alpha;
    obj["lambda"] = c.objective.lambda;
    obj["sigma_bound"] = c.objective.sigma_bound;
  }
  obj["batch_size"] = c.objective.batch_size;
  obj["seed"] = c.objective.seed;
  j["objective"] = obj;

  json alg;
  alg["kind"] = to_string(c.algorithm.kind);
  if (c.algorithm.kind == AlgorithmKind::dude_asgd) alg["sample_policy"] = c.algorithm.sample_policy;
  if (c.algorithm.kind == AlgorithmKind::fedbuff) {
    alg["local_steps"] = c.algorithm.local_steps;
    alg["buffer_size"] = c.algorithm.buffer_size;
    alg["eta_local"] = c.algorithm.eta_local;
  }
  if (c.algorithm.kind == AlgorithmKind::shuffled_asgd) alg["shuffle_period"] = c.algorithm.shuffle_period;
  if (c.algorithm.paranoid) alg["paranoid"] = true;
  j["algorithm"] = alg;

  json step;
  step["mode"] = c.stepsize.mode;
  if (c.stepsize.mode == "explicit") step["value"] = c.stepsize.value;
  if (c.stepsize.mode == "grid") step["values"] = c.stepsize.values;
  j["stepsize"] = step;

  json sp;
  if (!c.speeds.explicit_speeds.empty()) {
    sp["values"] = c.speeds.explicit_speeds;
  } else {
    sp["mu"] = c.speeds.mu;
    sp["std"] = c.speeds.std;
    sp["seed"] = c.speeds.seed;
  }
  j["speeds"] = sp;

  json mode;
  mode["kind"] = c.mode.kind;
  if (c.mode.kind == "semi_async") mode["c"] = c.mode.c;
  j["mode"] = mode;

  j["T"] = c.T;
  j["seeds"] = c.seeds;

  json w0;
  w0["kind"] = c.w0.kind;
  if (c.w0.kind == "constant") w0["value"] = c.w0.value;
  if (c.w0.kind == "random") {
    w0["scale"] = c.w0.value;
    w0["seed"] = c.w0.seed;
  }
  j["w0"] = w0;

  j["record_every"] = c.record_every;
  json out;
  out["dir"] = c.output_dir;
  out["format"] = c.output_format;
  j["output"] = out;
  j["jobs"] = c.jobs;
  return j;
}

inline RunConfig config_from_json(const json& j) {
  using namespace cfg_detail;
  RunConfig c;
  expect_keys(j, "config",
              {"schema_version", "objective", "algorithm", "stepsize", "speeds", "mode", "T", "seeds",
               "w0", "record_every", "output", "jobs"},
              {"schema_version", "objective", "algorithm", "stepsize", "T"});
  c.schema_version = get<int>(j, "config", "schema_version");
  if (c.schema_version != 1) throw ConfigError("config.schema_version: unsupported version");

  const json& obj = j.at("objective");
  c.objective.kind = get<std::string>(obj, "objective", "kind");
  if (c.objective.kind == "quadratic") {
    expect_keys(obj, "objective", {"kind", "workers", "dim", "hetero", "sigma", "batch_size", "seed"},
                {"kind", "workers", "dim"});
    c.objective.hetero = get_or(obj, "objective", "hetero", 1.0);
    c.objective.sigma = get_or(obj, "objective", "sigma", 0.5);
  } else if (c.objective.kind == "logistic") {
    expect_keys(obj, "objective",
                {"kind", "workers", "dim", "samples", "alpha", "lambda", "sigma_bound", "batch_size", "seed"},
                {"kind", "workers", "dim", "samples"});
    c.objective.samples = get<int>(obj, "objective", "samples");
    c.objective.alpha = get_or(obj, "objective", "alpha", 0.5);
    c.objective.lambda = get_or(obj, "objective", "lambda", 1e-3);
    c.objective.sigma_bound = get_or(obj, "objective", "sigma_bound", 1.0);
  } else {
    throw ConfigError("objective.kind: must be 'quadratic' or 'logistic'");
  }
  c.objective.workers = get<int>(obj, "objective", "workers");
  c.objective.dim = get<int>(obj, "objective", "dim");
  c.objective.batch_size = get_or(obj, "objective", "batch_size", 1);
  c.objective.seed = get_or<std::uint64_t>(obj, "objective", "seed", 7);
  if (c.objective.workers < 1) throw ConfigError("objective.workers: must be >= 1");
  if (c.objective.dim < 1) throw ConfigError("objective.dim: must be >= 1");
  if (c.objective.batch_size < 1) throw ConfigError("objective.batch_size: must be >= 1");

  const json& alg = j.at("algorithm");
  expect_keys(alg, "algorithm",
              {"kind", "sample_policy", "local_steps", "buffer_size", "eta_local", "shuffle_period",
               "paranoid"},
              {"kind"});
  const auto kind = algorithm_from_string(get<std::string>(alg, "algorithm", "kind"));
  if (!kind) throw ConfigError("algorithm.kind: unknown algorithm '" +
                               get<std::string>(alg, "algorithm", "kind") + "'");
  c.algorithm.kind = *kind;
  c.algorithm.sample_policy = get_or<std::string>(alg, "algorithm", "sample_policy", "fresh");
  if (c.algorithm.sample_policy != "fresh" && c.algorithm.sample_policy != "receipt")
    throw ConfigError("algorithm.sample_policy: must be 'fresh' or 'receipt'");
  c.algorithm.local_steps = get_or(alg, "algorithm", "local_steps", 1);
  c.algorithm.buffer_size = get_or(alg, "algorithm", "buffer_size", 1);
  c.algorithm.eta_local = get_or(alg, "algorithm", "eta_local", 0.01);
  c.algorithm.shuffle_period = get_or(alg, "algorithm", "shuffle_period", 0);
  c.algorithm.paranoid = get_or(alg, "algorithm", "paranoid", false);
  if (c.algorithm.local_steps < 1) throw ConfigError("algorithm.local_steps: must be >= 1");
  if (c.algorithm.buffer_size < 1 || c.algorithm.buffer_size > c.objective.workers)
    throw ConfigError("algorithm.buffer_size: must be in [1, workers]");
  if (c.algorithm.eta_local <= 0.0) throw ConfigError("algorithm.eta_local: must be positive");

  const json& step = j.at("stepsize");
  expect_keys(step, "stepsize", {"mode", "value", "values"}, {"mode"});
  c.stepsize.mode = get<std::string>(step, "stepsize", "mode");
  if (c.stepsize.mode == "explicit") {
    c.stepsize.value = get<double>(step, "stepsize", "value");
    if (c.stepsize.value <= 0.0) throw ConfigError("stepsize.value: must be positive");
  } else if (c.stepsize.mode == "grid") {
    c.stepsize.values = get<std::vector<double>>(step, "stepsize", "values");
    if (c.stepsize.values.empty()) throw ConfigError("stepsize.values: grid must be non-empty");
    for (double v : c.stepsize.values)
      if (v <= 0.0) throw ConfigError("stepsize.values: grid entries must be positive");
  } else if (c.stepsize.mode != "theorem1") {
    throw ConfigError("stepsize.mode: must be 'explicit', 'theorem1' or 'grid'");
  }

  if (j.contains("speeds")) {
    const json& sp = j.at("speeds");
    expect_keys(sp, "speeds", {"mu", "std", "seed", "values"}, {});
    if (sp.contains("values")) {
      c.speeds.explicit_speeds = get<std::vector<double>>(sp, "speeds", "values");
      if (static_cast<int>(c.speeds.explicit_speeds.size()) != c.objective.workers)
        throw ConfigError("speeds.values: need exactly one speed per worker");
      for (double s : c.speeds.explicit_speeds)
        if (s <= 0.0) throw ConfigError("speeds.values: speeds must be positive");
    } else {
      c.speeds.mu = get_or(sp, "speeds", "mu", 1.0);
      c.speeds.std = get_or(sp, "speeds", "std", 1.0);
      c.speeds.seed = get_or<std::uint64_t>(sp, "speeds", "seed", 3);
      if (c.speeds.std < 0.0) throw ConfigError("speeds.std: must be >= 0");
    }
  }

  if (j.contains("mode")) {
    const json& mode = j.at("mode");
    expect_keys(mode, "mode", {"kind", "c"}, {"kind"});
    c.mode.kind = get<std::string>(mode, "mode", "kind");
    if (c.mode.kind == "semi_async") {
      c.mode.c = get<int>(mode, "mode", "c");
      if (c.mode.c < 1 || c.mode.c > c.objective.workers)
        throw ConfigError("mode.c: must be in [1, workers]");
    } else if (c.mode.kind != "fully_async" && c.mode.kind != "lockstep") {
      throw ConfigError("mode.kind: must be 'fully_async', 'semi_async' or 'lockstep'");
    }
  }

  c.T = get<std::int64_t>(j, "config", "T");
  if (c.T < 1) throw ConfigError("config.T: must be >= 1");
  c.seeds = get_or(j, "config", "seeds", std::vector<std::uint64_t>{1, 2, 3});
  if (c.seeds.empty()) throw ConfigError("config.seeds: must be non-empty");

  if (j.contains("w0")) {
    const json& w0 = j.at("w0");
    expect_keys(w0, "w0", {"kind", "value", "scale", "seed"}, {"kind"});
    c.w0.kind = get<std::string>(w0, "w0", "kind");
    if (c.w0.kind == "constant") {
      c.w0.value = get<double>(w0, "w0", "value");
    } else if (c.w0.kind == "random") {
      c.w0.value = get_or(w0, "w0", "scale", 1.0);
      c.w0.seed = get_or<std::uint64_t>(w0, "w0", "seed", 5);
    } else if (c.w0.kind != "zero") {
      throw ConfigError("w0.kind: must be 'zero', 'constant' or 'random'");
    }
  }

  c.record_every = get_or(j, "config", "record_every", 1);
  if (c.record_every < 1) throw ConfigError("config.record_every: must be >= 1");

  if (j.contains("output")) {
    const json& out = j.at("output");
    expect_keys(out, "output", {"dir", "format"}, {});
    c.output_dir = get_or<std::string>(out, "output", "dir", "out");
    c.output_format = get_or<std::string>(out, "output", "format", "jsonl");
    if (c.output_format != "jsonl" && c.output_format != "csv" && c.output_format != "both")
      throw ConfigError("output.format: must be 'jsonl', 'csv' or 'both'");
  }
  c.jobs = get_or(j, "config", "jobs", 1);
  if (c.jobs < 1) throw ConfigError("config.jobs: must be >= 1");

  // Cross-field checks mirrored from the runners.
  if ((c.algorithm.kind == AlgorithmKind::vanilla_asgd || c.algorithm.kind == AlgorithmKind::uniform_asgd ||
       c.algorithm.kind == AlgorithmKind::shuffled_asgd) &&
      c.mode.kind != "fully_async")
    throw ConfigError("mode.kind: " + std::string(to_string(c.algorithm.kind)) + " runs fully asynchronously");
  if (c.stepsize.mode == "theorem1") {
    const double sigma_eff = c.objective.kind == "quadratic" ? c.objective.sigma : c.objective.sigma_bound;
    if (sigma_eff == 0.0)
      throw ConfigError("stepsize.mode: theorem1 undefined for sigma=0; supply an explicit value");
  }
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::detail::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

// FNV-1a over the canonical dump; embedded in every output header so files
// self-describe the configuration that produced them.
inline std::uint64_t config_hash(const RunConfig& c) {
  const std::string dump = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

// --- materialization ------------------------------------------------------

inline std::unique_ptr<Objective> build_objective(const ObjectiveConfig& oc) {
  if (oc.kind == "quadratic")
    return std::make_unique<QuadraticObjective>(
        make_quadratic(oc.workers, oc.dim, oc.hetero, oc.sigma, oc.seed, oc.batch_size));
  return std::make_unique<LogisticObjective>(make_logistic(
      oc.workers, oc.dim, oc.samples, oc.alpha, oc.lambda, oc.batch_size, oc.seed));
}

inline SpeedModel build_speeds(const SpeedConfig& sc, int n) {
  if (!sc.explicit_speeds.empty()) return SpeedModel::from_speeds(sc.explicit_speeds);
  return SpeedModel::truncated_normal(n, sc.mu, sc.std, sc.seed);
}

inline AsyncMode build_mode(const ModeConfig& mc) {
  if (mc.kind == "fully_async") return AsyncMode::fully_async();
  if (mc.kind == "semi_async") return AsyncMode::semi_async(mc.c);
  return AsyncMode::lockstep();
}

inline Vec build_w0(const W0Config& wc, int p) {
  if (wc.kind == "zero") return Vec::Zero(p);
  if (wc.kind == "constant") return Vec::Constant(p, wc.value);
  RngStream rng = RngStream::keyed(wc.seed, 0x3000);
  Vec w(p);
  for (Eigen::Index k = 0; k < w.size(); ++k) w[k] = wc.value * rng.normal();
  return w;
}

inline AlgoParams build_algo_params(const RunConfig& c, double eta) {
  AlgoParams p;
  p.kind = c.algorithm.kind;
  p.eta = eta;
  p.sample_policy = c.algorithm.sample_policy == "receipt" ? SamplePolicy::at_model_receipt
                                                           : SamplePolicy::fresh_at_completion;
  p.fedbuff_local_steps = c.algorithm.local_steps;
  p.fedbuff_buffer = c.algorithm.buffer_size;
  p.fedbuff_eta_local = c.algorithm.eta_local;
  p.shuffle_period = c.algorithm.shuffle_period;
  p.paranoid_checks = c.algorithm.paranoid;
  return p;
}

}  // namespace dudesim
