#include "mlmatvamp/experiment.hpp"

#include "mlmatvamp/diagnostics.hpp"
#include "mlmatvamp/linalg.hpp"
#include "mlmatvamp/parallel.hpp"
#include "mlmatvamp/state_evolution.hpp"
#include "mlmatvamp/vamp.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <tuple>

namespace mlmv {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::invalid_config, what); }

// Reads one JSON object, rejecting unknown keys and ill-typed values.
class Block {
 public:
  Block(const Json& parent, const std::string& key) : name_(key) {
    if (!parent.contains(key)) return;
    node_ = &parent.at(key);
    if (!node_->is_object()) config_error("'" + key + "' must be an object");
  }
  explicit Block(const Json& root) : name_("config"), node_(&root) {
    if (!root.is_object()) config_error("config must be a JSON object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return node_ && node_->contains(key);
  }
  const Json& at(const char* key) const { return node_->at(key); }

  void get(const char* key, std::string& dst) {
    if (!has(key)) return;
    if (!at(key).is_string()) fail(key, "a string");
    dst = at(key).get<std::string>();
  }
  void get(const char* key, double& dst) {
    if (!has(key)) return;
    if (!at(key).is_number()) fail(key, "a number");
    dst = at(key).get<double>();
  }
  // A number or the string "inf" (noise-free).
  void get_extended(const char* key, double& dst) {
    if (!has(key)) return;
    if (at(key).is_string() && at(key).get<std::string>() == "inf") {
      dst = std::numeric_limits<double>::infinity();
      return;
    }
    if (!at(key).is_number()) fail(key, "a number or \"inf\"");
    dst = at(key).get<double>();
  }
  void get(const char* key, bool& dst) {
    if (!has(key)) return;
    if (!at(key).is_boolean()) fail(key, "a boolean");
    dst = at(key).get<bool>();
  }
  void get(const char* key, int& dst) {
    if (!has(key)) return;
    if (!at(key).is_number_integer()) fail(key, "an integer");
    dst = at(key).get<int>();
  }
  void get(const char* key, long& dst) {
    if (!has(key)) return;
    if (!at(key).is_number_integer()) fail(key, "an integer");
    dst = at(key).get<long>();
  }
  void get(const char* key, std::uint64_t& dst) {
    if (!has(key)) return;
    if (!at(key).is_number_unsigned()) fail(key, "a non-negative integer");
    dst = at(key).get<std::uint64_t>();
  }
  void get(const char* key, std::vector<double>& dst) {
    if (!has(key)) return;
    if (!at(key).is_array()) fail(key, "an array of numbers");
    dst.clear();
    for (const Json& v : at(key)) {
      if (!v.is_number()) fail(key, "an array of numbers");
      dst.push_back(v.get<double>());
    }
  }
  void get(const char* key, std::vector<int>& dst) {
    if (!has(key)) return;
    if (!at(key).is_array()) fail(key, "an array of integers");
    dst.clear();
    for (const Json& v : at(key)) {
      if (!v.is_number_integer()) fail(key, "an array of integers");
      dst.push_back(v.get<int>());
    }
  }

  void finish() const {
    if (!node_) return;
    for (auto it = node_->begin(); it != node_->end(); ++it)
      if (!seen_.count(it.key())) config_error("unknown key '" + it.key() + "' in '" + name_ + "'");
  }

 private:
  [[noreturn]] void fail(const char* key, const char* type) const {
    config_error("'" + name_ + "." + key + "' must be " + type);
  }

  std::string name_;
  const Json* node_ = nullptr;
  std::set<std::string> seen_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

Mode parse_mode(const std::string& m) {
  if (m == "mmse") return Mode::mmse;
  if (m == "map") return Mode::map;
  config_error("vamp.mode must be 'mmse' or 'map'");
}

struct Stats {
  double mean = kNaN;
  double sd = kNaN;
  double stderr_ = kNaN;
  int count = 0;
};

Stats stats(const std::vector<double>& v) {
  Stats s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / s.count;
  if (s.count < 2) {
    s.sd = s.stderr_ = 0.0;
    return s;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / (s.count - 1));
  s.stderr_ = s.sd / std::sqrt(static_cast<double>(s.count));
  return s;
}

// NaN-aware JSON number: NaN and infinities become null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
double from_num(const Json& j) { return j.is_number() ? j.get<double>() : kNaN; }

void write_json(const Json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) config_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error("cannot read '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    config_error("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

fs::path prepare_dir(const std::string& out_dir) {
  const fs::path p(out_dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) config_error("cannot create output directory '" + out_dir + "': " + ec.message());
  return p;
}

Provenance provenance(const ExperimentConfig& cfg) { return Provenance{cfg.hash(), cfg.seed}; }

std::string sweep_name(const ExperimentConfig& cfg) {
  return cfg.sweep.variable.empty() ? std::string("none") : cfg.sweep.variable;
}

// Curve and summary rows shared by the simulate and se outputs.
struct CurvePoint {
  int k = 0;
  int layer = 0;
  std::string metric;
  double mean = kNaN;
  double stderr_ = kNaN;
  int count = 0;
};

struct SummaryRow {
  std::string quantity;
  Stats s;
};

struct PointResult {
  std::size_t index = 0;
  double sweep_value = kNaN;
  std::vector<CurvePoint> curves;
  std::vector<SummaryRow> summary;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> failures;
  double seconds = 0.0;
};

Json point_to_json(const PointResult& p) {
  Json j;
  j["index"] = p.index;
  j["sweep_value"] = num(p.sweep_value);
  j["seeds"] = p.seeds;
  j["failures"] = p.failures;
  j["seconds"] = p.seconds;
  Json curves = Json::array();
  for (const CurvePoint& c : p.curves)
    curves.push_back({{"k", c.k}, {"layer", c.layer}, {"metric", c.metric}, {"mean", num(c.mean)},
                      {"stderr", num(c.stderr_)}, {"count", c.count}});
  j["curves"] = curves;
  Json summary = Json::object();
  for (const SummaryRow& r : p.summary)
    summary[r.quantity] = {{"mean", num(r.s.mean)}, {"sd", num(r.s.sd)}, {"stderr", num(r.s.stderr_)},
                           {"count", r.s.count}};
  j["summary"] = summary;
  return j;
}

void write_point_tables(const std::vector<PointResult>& points, const ExperimentConfig& cfg, const fs::path& dir) {
  const Provenance prov = provenance(cfg);
  CsvWriter summary((dir / "summary.csv").string(), prov,
                    {"point", "sweep_variable", "sweep_value", "quantity", "mean", "sd", "stderr", "count"});
  for (const PointResult& p : points)
    for (const SummaryRow& r : p.summary) {
      summary.field(static_cast<long long>(p.index)).field(sweep_name(cfg)).field(p.sweep_value).field(r.quantity);
      summary.field(r.s.mean).field(r.s.sd).field(r.s.stderr_).field(r.s.count);
      summary.end_row();
    }
  CsvWriter curves((dir / "curves.csv").string(), prov,
                   {"point", "sweep_value", "k", "layer", "metric", "mean", "stderr", "count"});
  for (const PointResult& p : points)
    for (const CurvePoint& c : p.curves) {
      curves.field(static_cast<long long>(p.index)).field(p.sweep_value).field(c.k).field(c.layer).field(c.metric);
      curves.field(c.mean).field(c.stderr_).field(c.count);
      curves.end_row();
    }
}

Json summary_json(const std::string& command, const ExperimentConfig& cfg, const std::vector<PointResult>& points) {
  Json j;
  j["command"] = command;
  j["config_hash"] = cfg.hash();
  j["seed"] = cfg.seed;
  j["sweep_variable"] = sweep_name(cfg);
  Json arr = Json::array();
  for (const PointResult& p : points) arr.push_back(point_to_json(p));
  j["points"] = arr;
  j["config"] = cfg.to_json();
  return j;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

VampOptions vamp_options(const ExperimentConfig& cfg) {
  VampOptions o;
  o.n_iter = cfg.vamp.n_iter;
  o.damping = cfg.vamp.damping;
  o.bounds = cfg.vamp.bounds;
  o.keep_snapshots = false;
  return o;
}

// ---- simulate

struct TrialResult {
  bool ok = false;
  std::string error;
  std::vector<std::vector<double>> mse_plus, mse_minus;  // [k][ell]
  int safeguard_events = 0;
  double test_error = kNaN, k_route = kNaN, nmse = kNaN, nmse_k_route = kNaN;
};

TrialResult run_trial(const ExperimentConfig& pc, std::uint64_t seed, std::uint64_t pseed,
                      const fs::path& trace_path, const std::string& hash) {
  TrialResult r;
  try {
    const Instance inst = build_instance(pc, seed, pseed);
    const DenoiserSuite suite = make_suite(pc, inst, 1);
    VampOptions o = vamp_options(pc);
    o.init_seed = Stream(seed).derive("init").next_u64();
    const VampTrace tr = vamp_run(inst.model, inst.y(), o, suite, &inst.signals);
    write_trace_csv(tr, trace_path.string(), Provenance{hash, seed});
    for (const IterationRecord& it : tr.iterations) {
      std::vector<double> p, m;
      for (const LayerMetrics& lm : it.layers) {
        p.push_back(lm.mse_plus);
        m.push_back(lm.mse_minus);
      }
      r.mse_plus.push_back(p);
      r.mse_minus.push_back(m);
    }
    r.safeguard_events = tr.safeguard_events;
    if (inst.two_layer) {
      Stream test_rng = Stream(seed).derive("test");
      const TestErrorReport te =
          empirical_test_error(*inst.two_layer, tr.last.zhat_plus[0], pc.test.n_test, test_rng, pc.test.k_samples);
      r.test_error = te.empirical;
      r.k_route = te.k_route;
      if (inst.two_layer->noise_var > 0.0) {
        r.nmse = normalized_test_mse(te.empirical, inst.two_layer->noise_var);
        r.nmse_k_route = normalized_test_mse(te.k_route, inst.two_layer->noise_var);
      }
    }
    r.ok = true;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::invalid_config || e.kind() == ErrorKind::invalid_model) throw;
    r.error = e.what();
  }
  return r;
}

PointResult simulate_point(const ExperimentConfig& cfg, std::size_t point, const fs::path& trace_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig pc = sweep_point(cfg, point);
  const std::string hash = cfg.hash();
  PointResult out;
  out.index = point;
  out.sweep_value = sweep_value(cfg, point);
  std::vector<TrialResult> trials(static_cast<std::size_t>(cfg.trials));
  for (int t = 0; t < cfg.trials; ++t) out.seeds.push_back(trial_seed(cfg.seed, point, t));
  parallel_for(cfg.trials, cfg.threads, [&](Index begin, Index end) {
    for (Index t = begin; t < end; ++t) {
      const fs::path tp = trace_dir / ("trace_p" + std::to_string(point) + "_t" + std::to_string(t) + ".csv");
      trials[static_cast<std::size_t>(t)] =
          run_trial(pc, out.seeds[static_cast<std::size_t>(t)], point_seed(cfg.seed, point), tp, hash);
    }
  });

  std::vector<const TrialResult*> ok;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    if (trials[t].ok)
      ok.push_back(&trials[t]);
    else
      out.failures.push_back("trial " + std::to_string(t) + ": " + trials[t].error);
  }
  if (!ok.empty()) {
    const std::size_t iters = ok.front()->mse_plus.size();
    const std::size_t layers = ok.front()->mse_plus.front().size();
    for (std::size_t k = 0; k < iters; ++k)
      for (std::size_t l = 0; l < layers; ++l)
        for (int side = 0; side < 2; ++side) {
          std::vector<double> v;
          for (const TrialResult* t : ok) v.push_back(side == 0 ? t->mse_plus[k][l] : t->mse_minus[k][l]);
          const Stats s = stats(v);
          out.curves.push_back({static_cast<int>(k), static_cast<int>(l), side == 0 ? "mse_plus" : "mse_minus",
                                s.mean, s.stderr_, s.count});
        }
    auto add = [&](const std::string& name, auto get) {
      std::vector<double> v;
      for (const TrialResult* t : ok) {
        const double x = get(*t);
        if (!std::isnan(x)) v.push_back(x);
      }
      if (!v.empty()) out.summary.push_back({name, stats(v)});
    };
    add("mse_plus_final", [](const TrialResult& t) { return t.mse_plus.back()[0]; });
    add("test_error", [](const TrialResult& t) { return t.test_error; });
    add("test_error_k_route", [](const TrialResult& t) { return t.k_route; });
    add("normalized_test_mse", [](const TrialResult& t) { return t.nmse; });
    add("normalized_test_mse_k_route", [](const TrialResult& t) { return t.nmse_k_route; });
    add("safeguard_events", [](const TrialResult& t) { return static_cast<double>(t.safeguard_events); });
  }
  Stats okc;
  okc.mean = static_cast<double>(ok.size());
  okc.count = cfg.trials;
  okc.sd = okc.stderr_ = 0.0;
  out.summary.push_back({"trials_ok", okc});
  Stats failc = okc;
  failc.mean = static_cast<double>(cfg.trials) - okc.mean;
  out.summary.push_back({"trials_failed", failc});
  out.seconds = elapsed(t0);
  return out;
}

// ---- state evolution

Estimate se_test_error(const SeHistory& se, const TwoLayerProblem& prob, int k, const ExperimentConfig& cfg,
                       std::uint64_t seed) {
  auto one = [&](const SeHistory& h, std::uint64_t s) {
    return predict_test_error(h.cell(k, 0).joint_estimate.value, prob.f2, prob.act, cfg.test.k_samples, Stream(s));
  };
  if (se.runs.empty()) return one(se, seed);
  std::vector<double> v;
  for (std::size_t r = 0; r < se.runs.size(); ++r) v.push_back(one(se.runs[r], mix64(seed + r)).value);
  const Stats s = stats(v);
  return {s.mean, s.stderr_};
}

PointResult se_point(const ExperimentConfig& cfg, std::size_t point, const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentConfig pc = sweep_point(cfg, point);
  PointResult out;
  out.index = point;
  out.sweep_value = sweep_value(cfg, point);
  const std::uint64_t inst_seed = Stream(cfg.seed).derive("se-instance", point).next_u64();
  const std::uint64_t se_seed = Stream(cfg.seed).derive("se", point).next_u64();
  out.seeds = {inst_seed, se_seed};
  const Instance inst = build_instance(pc, inst_seed, point_seed(cfg.seed, point));
  const DenoiserSuite suite = make_suite(pc, inst, cfg.threads);
  SeOptions so;
  so.samples = pc.se.samples;
  so.n_iter = pc.vamp.n_iter;
  so.seed = se_seed;
  so.bounds = pc.vamp.bounds;
  so.replicates = pc.se.replicates;
  so.moment_match = pc.se.moment_match;
  if (pc.se.condition_on_signal) so.input_rows = inst.signals.z[0];
  const SeHistory se = se_run(inst.model, so, suite);
  write_se_csv(se, (dir / ("se_p" + std::to_string(point) + ".csv")).string(), Provenance{cfg.hash(), se_seed});

  const int count = std::max<int>(1, static_cast<int>(se.runs.size()));
  const Mat id = Mat::Identity(inst.model.d, inst.model.d);
  for (int k = 0; k < static_cast<int>(se.cells.size()); ++k)
    for (int l = 0; l < se.num_layers; ++l)
      for (int side = 0; side < 2; ++side) {
        const Estimate e = predict_layer_mse(se, l, k, id, side == 0);
        out.curves.push_back({k, l, side == 0 ? "mse_plus" : "mse_minus", e.value, e.std_error, count});
      }
  const int last = static_cast<int>(se.cells.size()) - 1;
  const Estimate fin = predict_layer_mse(se, 0, last, id, true);
  auto row = [&](const std::string& name, double v, double se_v) {
    Stats s;
    s.mean = v;
    s.sd = kNaN;
    s.stderr_ = se_v;
    s.count = count;
    out.summary.push_back({name, s});
  };
  row("mse_plus_final", fin.value, fin.std_error);
  if (inst.two_layer) {
    const Estimate te = se_test_error(se, *inst.two_layer, last, pc, Stream(se_seed).derive("k-route").next_u64());
    row("test_error", te.value, te.std_error);
    const double nv = inst.two_layer->noise_var;
    if (nv > 0.0) row("normalized_test_mse", normalized_test_mse(te.value, nv), te.std_error / nv);
  }
  row("safeguard_events", static_cast<double>(se.safeguard_events), 0.0);
  out.seconds = elapsed(t0);
  return out;
}

// ---- compare

fs::path resolve_summary(const std::string& p, const std::string& base) {
  fs::path path(p);
  if (path.is_relative()) path = fs::path(base) / path;
  if (fs::is_directory(path)) path /= "summary.json";
  return path;
}

struct Value {
  double mean = kNaN;
  double stderr_ = kNaN;
};

struct Compared {
  std::size_t point;
  double sweep_value;
  int k, layer;
  std::string quantity;
  Value sim, se;
  double diff, band;
  bool gating, pass;
};

}  // namespace

// ---- configuration

Json ExperimentConfig::to_json() const {
  Json j;
  j["schema"] = kSchema;
  j["application"] = application;
  j["two_layer"] = {{"n", two_layer.n},
                    {"n_in", two_layer.n_in},
                    {"d", two_layer.d},
                    {"activation", two_layer.activation},
                    {"snr_db", std::isinf(two_layer.snr_db) ? Json("inf") : Json(two_layer.snr_db)}};
  j["multi_task"] = {{"n", multi_task.n},           {"p", multi_task.p},
                     {"d", multi_task.d},           {"prior", multi_task.prior},
                     {"noise_var", multi_task.noise_var}, {"prior_param", multi_task.prior_param}};
  j["mixed_regression"] = {{"n", mixed_regression.n},
                           {"p", mixed_regression.p},
                           {"q_prob", mixed_regression.q_prob},
                           {"noise_var", mixed_regression.noise_var}};
  if (!model.is_null()) j["model"] = model;
  if (!model_file.empty()) j["model_file"] = model_file;
  j["sweep"] = {{"variable", sweep.variable}, {"values", sweep.values}};
  j["trials"] = trials;
  j["seed"] = seed;
  j["threads"] = threads;
  j["vamp"] = {{"n_iter", vamp.n_iter},
               {"damping", vamp.damping},
               {"mode", vamp.mode},
               {"floor", vamp.bounds.floor},
               {"cap", vamp.bounds.cap}};
  j["quadrature"] = {{"order", quadrature.order},       {"node_budget", quadrature.node_budget},
                     {"min_order", quadrature.min_order}, {"samples", quadrature.samples},
                     {"seed", quadrature.seed},         {"exploit_linear", quadrature.exploit_linear}};
  j["newton"] = {{"tol", newton.tol}, {"max_iter", newton.max_iter}, {"kink_smooth", newton.kink_smooth}};
  j["se"] = {{"samples", se.samples},
             {"replicates", se.replicates},
             {"moment_match", se.moment_match},
             {"condition_on_signal", se.condition_on_signal}};
  j["test"] = {{"n_test", test.n_test}, {"k_samples", test.k_samples}};
  j["compare"] = {{"simulate", compare.simulate}, {"se", compare.se},       {"rel_band", compare.rel_band},
                  {"se_band", compare.se_band},   {"k_min", compare.k_min}, {"k_max", compare.k_max},
                  {"layers", compare.layers}};
  j["diagnose"] = {{"max_k", diagnose.max_k},
                   {"band", diagnose.band},
                   {"kurtosis_band", diagnose.kurtosis_band},
                   {"min_pass_rate", diagnose.min_pass_rate},
                   {"se_samples", diagnose.se_samples},
                   {"se_replicates", diagnose.se_replicates}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const Json& j, const std::string& base_dir) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  Block root(j);
  int schema = 0;
  if (!root.has("schema")) config_error("missing 'schema'");
  root.get("schema", schema);
  if (schema != kSchema) config_error("unsupported schema " + std::to_string(schema) + " (expected 1)");
  root.get("application", c.application);
  {
    Block b(j, "two_layer");
    b.get("n", c.two_layer.n);
    b.get("n_in", c.two_layer.n_in);
    b.get("d", c.two_layer.d);
    b.get("activation", c.two_layer.activation);
    b.get_extended("snr_db", c.two_layer.snr_db);
    b.finish();
    root.has("two_layer");
  }
  {
    Block b(j, "multi_task");
    b.get("n", c.multi_task.n);
    b.get("p", c.multi_task.p);
    b.get("d", c.multi_task.d);
    b.get("prior", c.multi_task.prior);
    b.get("noise_var", c.multi_task.noise_var);
    b.get("prior_param", c.multi_task.prior_param);
    b.finish();
    root.has("multi_task");
  }
  {
    Block b(j, "mixed_regression");
    b.get("n", c.mixed_regression.n);
    b.get("p", c.mixed_regression.p);
    b.get("q_prob", c.mixed_regression.q_prob);
    b.get("noise_var", c.mixed_regression.noise_var);
    b.finish();
    root.has("mixed_regression");
  }
  if (root.has("model")) c.model = root.at("model");
  root.get("model_file", c.model_file);
  {
    Block b(j, "sweep");
    b.get("variable", c.sweep.variable);
    b.get("values", c.sweep.values);
    b.finish();
    root.has("sweep");
  }
  root.get("trials", c.trials);
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  {
    Block b(j, "vamp");
    b.get("n_iter", c.vamp.n_iter);
    b.get("damping", c.vamp.damping);
    b.get("mode", c.vamp.mode);
    b.get("floor", c.vamp.bounds.floor);
    b.get("cap", c.vamp.bounds.cap);
    b.finish();
    root.has("vamp");
  }
  {
    Block b(j, "quadrature");
    b.get("order", c.quadrature.order);
    b.get("node_budget", c.quadrature.node_budget);
    b.get("min_order", c.quadrature.min_order);
    b.get("samples", c.quadrature.samples);
    b.get("seed", c.quadrature.seed);
    b.get("exploit_linear", c.quadrature.exploit_linear);
    b.finish();
    root.has("quadrature");
  }
  {
    Block b(j, "newton");
    b.get("tol", c.newton.tol);
    b.get("max_iter", c.newton.max_iter);
    b.get("kink_smooth", c.newton.kink_smooth);
    b.finish();
    root.has("newton");
  }
  {
    Block b(j, "se");
    b.get("samples", c.se.samples);
    b.get("replicates", c.se.replicates);
    b.get("moment_match", c.se.moment_match);
    b.get("condition_on_signal", c.se.condition_on_signal);
    b.finish();
    root.has("se");
  }
  {
    Block b(j, "test");
    b.get("n_test", c.test.n_test);
    b.get("k_samples", c.test.k_samples);
    b.finish();
    root.has("test");
  }
  {
    Block b(j, "compare");
    b.get("simulate", c.compare.simulate);
    b.get("se", c.compare.se);
    b.get("rel_band", c.compare.rel_band);
    b.get("se_band", c.compare.se_band);
    b.get("k_min", c.compare.k_min);
    b.get("k_max", c.compare.k_max);
    b.get("layers", c.compare.layers);
    b.finish();
    root.has("compare");
  }
  {
    Block b(j, "diagnose");
    b.get("max_k", c.diagnose.max_k);
    b.get("band", c.diagnose.band);
    b.get("kurtosis_band", c.diagnose.kurtosis_band);
    b.get("min_pass_rate", c.diagnose.min_pass_rate);
    b.get("se_samples", c.diagnose.se_samples);
    b.get("se_replicates", c.diagnose.se_replicates);
    b.finish();
    root.has("diagnose");
  }
  root.finish();
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const {
  Json j = to_json();
  j.erase("threads");
  return hex64(fnv1a(j.dump()));
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> apps{"two_layer", "multi_task", "mixed_regression", "model"};
  if (!apps.count(application)) config_error("unknown application '" + application + "'");
  if (application == "model" && model.is_null() && model_file.empty())
    config_error("application 'model' needs 'model' or 'model_file'");
  if (trials < 1) config_error("trials must be >= 1");
  if (threads < 1) config_error("threads must be >= 1");
  if (vamp.n_iter < 1) config_error("vamp.n_iter must be >= 1");
  if (!(vamp.damping > 0.0 && vamp.damping <= 1.0)) config_error("vamp.damping must lie in (0, 1]");
  if (!(vamp.bounds.floor > 0.0 && vamp.bounds.floor <= vamp.bounds.cap))
    config_error("vamp precision bounds need 0 < floor <= cap");
  parse_mode(vamp.mode);
  if (quadrature.order < 1 || quadrature.node_budget < 1 || quadrature.min_order < 1 || quadrature.samples < 1)
    config_error("quadrature sizes must be >= 1");
  if (se.samples < 2) config_error("se.samples must be >= 2");
  if (se.replicates < 1) config_error("se.replicates must be >= 1");
  if (test.n_test < 2 || test.k_samples < 2) config_error("test sizes must be >= 2");
  if (!(compare.rel_band >= 0.0) || !(compare.se_band >= 0.0)) config_error("compare bands must be >= 0");
  if (compare.k_min < 0 || compare.k_max < compare.k_min) config_error("compare needs 0 <= k_min <= k_max");
  if (diagnose.max_k < 0) config_error("diagnose.max_k must be >= 0");
  if (diagnose.se_samples < 2 || diagnose.se_replicates < 1) config_error("diagnose SE sizes out of range");
  if (!sweep.variable.empty()) {
    if (application == "model") config_error("the 'model' application has no sweepable fields");
    if (sweep.values.empty()) config_error("sweep.values must not be empty");
    const Json block = to_json().at(application);
    if (!block.contains(sweep.variable) || !(block.at(sweep.variable).is_number() || sweep.variable == "snr_db"))
      config_error("sweep variable '" + sweep.variable + "' is not a numeric field of '" + application + "'");
  } else if (!sweep.values.empty()) {
    config_error("sweep.values given without sweep.variable");
  }
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error("cannot read config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  const fs::path parent = fs::path(path).parent_path();
  return ExperimentConfig::from_json(j, parent.empty() ? "." : parent.string());
}

std::size_t sweep_size(const ExperimentConfig& cfg) { return cfg.sweep.values.empty() ? 1 : cfg.sweep.values.size(); }

double sweep_value(const ExperimentConfig& cfg, std::size_t point) {
  if (cfg.sweep.values.empty()) return kNaN;
  return cfg.sweep.values.at(point);
}

ExperimentConfig sweep_point(const ExperimentConfig& cfg, std::size_t point) {
  if (cfg.sweep.variable.empty()) return cfg;
  Json j = cfg.to_json();
  Json& field = j.at(cfg.application).at(cfg.sweep.variable);
  const double v = cfg.sweep.values.at(point);
  if (field.is_number_integer()) {
    if (v != std::floor(v)) config_error("sweep value for integer field '" + cfg.sweep.variable + "' is fractional");
    field = static_cast<long long>(v);
  } else {
    field = v;
  }
  j["sweep"] = {{"variable", ""}, {"values", Json::array()}};
  return ExperimentConfig::from_json(j, cfg.base_dir);
}

std::uint64_t trial_seed(std::uint64_t master, std::size_t point, int trial) {
  return Stream(master).derive("trial", point, static_cast<std::uint64_t>(trial)).next_u64();
}

std::uint64_t point_seed(std::uint64_t master, std::size_t point) {
  return Stream(master).derive("point", point).next_u64();
}

Instance build_instance(const ExperimentConfig& pc, std::uint64_t seed, std::uint64_t pseed) {
  Instance inst;
  if (pc.application == "two_layer") {
    const auto& t = pc.two_layer;
    if (t.d < 1) config_error("two_layer.d must be >= 1");
    Stream f2_rng = Stream(pseed).derive("second-layer");
    const Vec f2 = gaussian_matrix<double>(t.d, 1, f2_rng).col(0);
    TwoLayerProblem p = build_two_layer(t.n, t.n_in, t.d, t.activation, t.snr_db, seed, f2);
    inst.model = p.model;
    inst.signals = p.signals;
    inst.two_layer = std::move(p);
  } else if (pc.application == "multi_task") {
    const auto& t = pc.multi_task;
    MultiTaskProblem p = build_multi_task(t.n, t.p, t.d, t.prior, t.noise_var, seed, t.prior_param);
    inst.model = std::move(p.model);
    inst.signals = std::move(p.signals);
    inst.inference_prior = p.inference_prior;
  } else if (pc.application == "mixed_regression") {
    const auto& t = pc.mixed_regression;
    MixedRegressionProblem p = build_mixed_regression(t.n, t.p, t.q_prob, t.noise_var, seed);
    inst.model = std::move(p.model);
    inst.signals = std::move(p.signals);
  } else {
    if (!pc.model.is_null()) {
      inst.model = model_from_json(pc.model);
    } else {
      fs::path path(pc.model_file);
      if (path.is_relative()) path = fs::path(pc.base_dir) / path;
      inst.model = load_model(path.string());
    }
    inst.signals = generate_signals(inst.model, Stream(seed).derive("signals"));
  }
  return inst;
}

DenoiserSuite make_suite(const ExperimentConfig& cfg, const Instance& inst, int threads) {
  DenoiserSuite s;
  s.mode = parse_mode(cfg.vamp.mode);
  s.quad = cfg.quadrature;
  s.quad.threads = threads;
  s.newton = cfg.newton;
  s.input_prior = inst.inference_prior;
  s.threads = threads;
  return s;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const Json::exception*>(&e)) return 2;
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::invalid_config:
      case ErrorKind::invalid_pairing:
      case ErrorKind::invalid_model:
      case ErrorKind::unsupported:
        return 2;
      default:
        return 3;
    }
  }
  return 3;
}

// ---- commands

int cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const fs::path dir = prepare_dir(out_dir);
  const fs::path traces = dir / "traces";
  fs::create_directories(traces);
  write_json(cfg.to_json(), dir / "config.json");
  std::vector<PointResult> points;
  bool all_failed_somewhere = false;
  for (std::size_t p = 0; p < sweep_size(cfg); ++p) {
    points.push_back(simulate_point(cfg, p, traces));
    const PointResult& r = points.back();
    log << "simulate point " << p << " (" << sweep_name(cfg) << " = " << format_double(r.sweep_value) << "): "
        << cfg.trials - static_cast<int>(r.failures.size()) << "/" << cfg.trials << " trials ok, "
        << format_double(r.seconds) << " s\n";
    for (const std::string& f : r.failures) log << "  " << f << '\n';
    if (static_cast<int>(r.failures.size()) == cfg.trials) all_failed_somewhere = true;
  }
  write_point_tables(points, cfg, dir);
  write_json(summary_json("simulate", cfg, points), dir / "summary.json");
  if (all_failed_somewhere) {
    log << "every trial failed at some sweep point\n";
    return 3;
  }
  return 0;
}

int cmd_se(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const fs::path dir = prepare_dir(out_dir);
  write_json(cfg.to_json(), dir / "config.json");
  std::vector<PointResult> points;
  for (std::size_t p = 0; p < sweep_size(cfg); ++p) {
    points.push_back(se_point(cfg, p, dir));
    log << "se point " << p << " (" << sweep_name(cfg) << " = " << format_double(points.back().sweep_value)
        << "): " << format_double(points.back().seconds) << " s\n";
  }
  write_point_tables(points, cfg, dir);
  write_json(summary_json("se", cfg, points), dir / "summary.json");
  return 0;
}

int cmd_compare(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const fs::path dir = prepare_dir(out_dir);
  fs::path sim_path, se_path;
  if (cfg.compare.simulate.empty()) {
    const int rc = cmd_simulate(cfg, (dir / "simulate").string(), log);
    if (rc != 0) return rc;
    sim_path = dir / "simulate" / "summary.json";
  } else {
    sim_path = resolve_summary(cfg.compare.simulate, cfg.base_dir);
  }
  if (cfg.compare.se.empty()) {
    const int rc = cmd_se(cfg, (dir / "se").string(), log);
    if (rc != 0) return rc;
    se_path = dir / "se" / "summary.json";
  } else {
    se_path = resolve_summary(cfg.compare.se, cfg.base_dir);
  }
  const Json sim = read_json(sim_path);
  const Json se = read_json(se_path);
  const Json& sp = sim.at("points");
  const Json& ep = se.at("points");
  if (sp.size() != ep.size() || sim.at("sweep_variable") != se.at("sweep_variable"))
    throw Error(ErrorKind::invalid_pairing, "simulate and se summaries have different sweep grids");

  std::vector<Compared> rows;
  const std::set<int> layers(cfg.compare.layers.begin(), cfg.compare.layers.end());
  auto judge = [&](Compared c) {
    c.diff = c.sim.mean - c.se.mean;
    const double comb = std::sqrt(c.sim.stderr_ * c.sim.stderr_ + c.se.stderr_ * c.se.stderr_);
    c.band = std::max(cfg.compare.rel_band * std::abs(c.se.mean), cfg.compare.se_band * comb);
    c.pass = std::isfinite(c.diff) && std::abs(c.diff) <= c.band;
    rows.push_back(c);
  };
  for (std::size_t p = 0; p < sp.size(); ++p) {
    const double sv = from_num(sp[p].at("sweep_value"));
    const double ev = from_num(ep[p].at("sweep_value"));
    if (!(sv == ev || (std::isnan(sv) && std::isnan(ev))))
      throw Error(ErrorKind::invalid_pairing, "sweep value mismatch at point " + std::to_string(p));
    std::map<std::tuple<int, int, std::string>, Value> se_curves;
    for (const Json& c : ep[p].at("curves"))
      se_curves[{c.at("k").get<int>(), c.at("layer").get<int>(), c.at("metric").get<std::string>()}] =
          Value{from_num(c.at("mean")), from_num(c.at("stderr"))};
    for (const Json& c : sp[p].at("curves")) {
      const int k = c.at("k").get<int>();
      const int l = c.at("layer").get<int>();
      const std::string m = c.at("metric").get<std::string>();
      if (m != "mse_plus" || k < cfg.compare.k_min || k > cfg.compare.k_max || !layers.count(l)) continue;
      const auto it = se_curves.find({k, l, m});
      if (it == se_curves.end()) continue;
      judge(Compared{p, sv, k, l, m, Value{from_num(c.at("mean")), from_num(c.at("stderr"))}, it->second, 0.0, 0.0,
                     true, false});
    }
    const Json& ss = sp[p].at("summary");
    const Json& es = ep[p].at("summary");
    for (const char* q : {"mse_plus_final", "test_error", "normalized_test_mse"}) {
      if (!ss.contains(q) || !es.contains(q)) continue;
      const bool gating = std::string(q) == "normalized_test_mse";
      judge(Compared{p, sv, -1, 0, q, Value{from_num(ss.at(q).at("mean")), from_num(ss.at(q).at("stderr"))},
                     Value{from_num(es.at(q).at("mean")), from_num(es.at(q).at("stderr"))}, 0.0, 0.0, gating,
                     false});
    }
  }

  const Provenance prov = provenance(cfg);
  CsvWriter csv((dir / "compare.csv").string(), prov,
                {"point", "sweep_value", "k", "layer", "quantity", "sim", "sim_stderr", "se", "se_stderr", "diff",
                 "band", "gating", "pass"});
  int failures = 0;
  Json jrows = Json::array();
  for (const Compared& c : rows) {
    csv.field(static_cast<long long>(c.point)).field(c.sweep_value).field(c.k).field(c.layer).field(c.quantity);
    csv.field(c.sim.mean).field(c.sim.stderr_).field(c.se.mean).field(c.se.stderr_).field(c.diff).field(c.band);
    csv.field(c.gating ? 1 : 0).field(c.pass ? 1 : 0);
    csv.end_row();
    if (c.gating && !c.pass) ++failures;
    jrows.push_back({{"point", c.point}, {"sweep_value", num(c.sweep_value)}, {"k", c.k}, {"layer", c.layer},
                     {"quantity", c.quantity}, {"sim", num(c.sim.mean)}, {"se", num(c.se.mean)},
                     {"diff", num(c.diff)}, {"band", num(c.band)}, {"gating", c.gating}, {"pass", c.pass}});
  }
  Json out;
  out["command"] = "compare";
  out["config_hash"] = cfg.hash();
  out["seed"] = cfg.seed;
  out["simulate_hash"] = sim.at("config_hash");
  out["se_hash"] = se.at("config_hash");
  out["rows"] = jrows;
  out["gating_failures"] = failures;
  write_json(out, dir / "compare.json");
  int gating = 0;
  for (const Compared& c : rows) gating += c.gating;
  log << "compare: " << gating - failures << "/" << gating << " gating rows inside their bands\n";
  return failures == 0 ? 0 : 1;
}

int cmd_diagnose(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const fs::path dir = prepare_dir(out_dir);
  write_json(cfg.to_json(), dir / "config.json");
  bool ok = true;
  Json bundle;
  bundle["command"] = "diagnose";
  bundle["config_hash"] = cfg.hash();
  bundle["seed"] = cfg.seed;
  bundle["points"] = Json::array();
  for (std::size_t p = 0; p < sweep_size(cfg); ++p) {
    const ExperimentConfig pc = sweep_point(cfg, p);
    const std::uint64_t seed = Stream(cfg.seed).derive("diagnose", p).next_u64();
    const Instance inst = build_instance(pc, seed, point_seed(cfg.seed, p));
    const DenoiserSuite suite = make_suite(pc, inst, cfg.threads);
    const std::vector<Mat> tau = signal_second_moments(inst.model);
    std::vector<Mat> gamma;
    for (const Mat& t : tau) gamma.push_back(spd_inverse(t));
    const int n_iter = pc.diagnose.max_k + 1;

    VampOptions vo = vamp_options(pc);
    vo.n_iter = n_iter;
    vo.keep_snapshots = true;
    vo.init = InitMode::oracle_gaussian;
    vo.oracle_tau = tau;
    vo.gamma_minus_init = gamma;
    vo.init_seed = Stream(seed).derive("init").next_u64();
    const VampTrace tr = vamp_run(inst.model, inst.y(), vo, suite, &inst.signals);

    SeOptions so;
    so.samples = pc.diagnose.se_samples;
    so.n_iter = n_iter;
    so.seed = Stream(seed).derive("se").next_u64();
    so.bounds = pc.vamp.bounds;
    so.init = SeInit::independent_gaussian;
    so.tau_minus_init = tau;
    so.gamma_minus_init = gamma;
    so.replicates = pc.diagnose.se_replicates;
    so.input_rows = inst.signals.z[0];
    const SeHistory se = se_run(inst.model, so, suite);

    GaussianityOptions go;
    go.band = pc.diagnose.band;
    go.kurtosis_band = pc.diagnose.kurtosis_band;
    const GaussianityReport rep =
        gaussianity_report(compute_transformed_errors(tr, inst.signals, inst.model), se, pc.diagnose.max_k, go);
    const std::string stem = "diagnose_p" + std::to_string(p);
    write_report_csv(rep, (dir / (stem + ".csv")).string(), Provenance{cfg.hash(), seed});
    std::ofstream((dir / (stem + ".txt")), std::ios::binary) << report_table(rep);
    Json pj = report_to_json(rep);
    pj["point"] = p;
    pj["sweep_value"] = num(sweep_value(cfg, p));
    pj["seed"] = seed;
    Json ev = Json::array();
    for (const IterationRecord& it : tr.iterations) {
      Json row = Json::array();
      for (const LayerMetrics& m : it.layers) row.push_back(m.safeguard_events);
      ev.push_back(row);
    }
    pj["engine_safeguard_events"] = ev;
    pj["se_safeguard_events"] = se.safeguard_events;
    bundle["points"].push_back(pj);
    const bool pass = rep.pass_rate >= pc.diagnose.min_pass_rate;
    ok = ok && pass;
    log << "diagnose point " << p << ": pass rate " << format_double(rep.pass_rate) << " (need "
        << format_double(pc.diagnose.min_pass_rate) << ")" << (pass ? "" : " FAIL") << '\n';
  }
  write_json(bundle, dir / "diagnose.json");
  return ok ? 0 : 1;
}

}  // namespace mlmv
