// rtfm: command-line front end for simulation campaigns, estimation, rank
// selection, CV curves, forecasting and the normality diagnostic.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rtfm/evaluation.hpp"
#include "rtfm/fit.hpp"
#include "rtfm/forecast.hpp"
#include "rtfm/io.hpp"
#include "rtfm/random.hpp"
#include "rtfm/simulate.hpp"

namespace fs = std::filesystem;
using namespace rtfm;
using io::fmt;

namespace {

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

struct Flags {
  std::string config, data, out, tau, kappa, ranks;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, iters;
};

/// Effective settings of one command: a fixed key list with defaults,
/// overridden by the config file and then by flags. The audit line lists
/// every key, so it can be replayed as a config file.
class Settings {
 public:
  Settings(std::string command, std::vector<std::pair<std::string, std::string>> defaults, const Flags& f)
      : command_(std::move(command)), entries_(std::move(defaults)) {
    std::set<std::string> known{"command"};
    for (const auto& [k, v] : entries_) known.insert(k);
    if (!f.config.empty()) {
      const io::Config cfg = io::Config::load(f.config);
      cfg.allow_only(known);
      if (cfg.has("command") && cfg.str("command", "") != command_)
        throw ConfigError("config was written for command '" + cfg.str("command", "") + "'");
      for (auto& [k, v] : entries_)
        if (cfg.has(k)) v = cfg.str(k, v);
    }
    override_from("data", f.data);
    override_from("output", f.out);
    override_from("tau", f.tau);
    override_from("kappa", f.kappa);
    override_from("ranks", f.ranks);
    if (f.iters) override_from("iterations", std::to_string(*f.iters));
    if (f.seed) override_from("seed", std::to_string(*f.seed));
  }

  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return v;
    throw ConfigError("internal: unknown setting '" + key + "'");
  }

  double num(const std::string& key) const {
    io::Config c;
    c.set(key, get(key));
    return c.num(key, 0.0);
  }
  std::uint64_t count(const std::string& key) const { return io::Config::parse_count(get(key), key); }
  bool flag(const std::string& key) const {
    io::Config c;
    c.set(key, get(key));
    return c.flag(key, false);
  }

  std::string audit() const {
    std::string s = "command=" + command_;
    for (const auto& [k, v] : entries_) s += " " + k + "=" + v;
    return s;
  }

  fs::path output_dir() const {
    fs::path p = get("output");
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IoError("cannot create output directory '" + p.string() + "': " + ec.message());
    return p;
  }

 private:
  void override_from(const std::string& key, const std::string& value) {
    if (value.empty()) return;
    for (auto& [k, v] : entries_)
      if (k == key) {
        v = value;
        return;
      }
    throw ConfigError("option for '" + key + "' is not used by '" + command_ + "'");
  }

  std::string command_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::size_t resolve_threads(const Flags& f) {
  if (f.threads) {
    if (*f.threads < 1) throw ConfigError("--threads must be at least 1");
    return *f.threads;
  }
  if (const char* env = std::getenv("RTFM_THREADS"); env && *env) {
    const auto n = io::Config::parse_count(env, "RTFM_THREADS");
    if (n < 1) throw ConfigError("RTFM_THREADS must be at least 1");
    return static_cast<std::size_t>(n);
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Value parsers

std::optional<TruncationLevel> parse_tau(const std::string& s, const std::string& auto_word, const std::string& key) {
  if (s == auto_word) return std::nullopt;
  if (s == "inf") return TruncationLevel::infinity();
  io::Config c;
  c.set(key, s);
  const double v = c.num(key, 0.0);
  if (!(v > 0.0)) throw ConfigError(key + " must be positive, 'inf' or '" + auto_word + "'");
  return TruncationLevel(v);
}

std::string tau_string(TruncationLevel t) { return t.is_infinite() ? "inf" : fmt(t.value()); }

Dims parse_dims(const std::string& s, const std::string& key) {
  Dims d = io::Config::parse_list(s, key);
  validate_dims(d);
  return d;
}

std::optional<Ranks> parse_ranks(const std::string& s, const Dims& dims) {
  if (s == "auto") return std::nullopt;
  Ranks r = io::Config::parse_list(s, "ranks");
  validate_ranks(r, dims);
  return r;
}

CvConfig cv_config(const Settings& s) {
  CvConfig c;
  c.grid_size = s.count("grid_size");
  c.folds = s.count("folds");
  c.iterations = s.count("iterations");
  c.validate();
  return c;
}

RankConfig rank_config(const Settings& s, const Dims& dims) {
  RankConfig c;
  if (s.get("r_bar") != "default") c.r_bar = io::Config::parse_list(s.get("r_bar"), "r_bar");
  c.max_iterations = s.count("rank_passes");
  if (s.get("rho") != "reciprocal") c.rho = RhoRule::fixed_value(s.num("rho"));
  c.validate(dims);
  return c;
}

TensorSeries load_data(const Settings& s) {
  if (s.get("data").empty()) throw ConfigError("no input data (use --data)");
  return io::read_data(s.get("data"));
}

void write_loadings(const fs::path& path, const std::string& audit, const Matrix& m) {
  std::vector<std::string> header{"row"};
  for (Eigen::Index j = 0; j < m.cols(); ++j) header.push_back("col" + std::to_string(j + 1));
  io::CsvWriter w(path, "rtfm.loadings", audit, header);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i + 1)};
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(fmt(m(i, j)));
    w.row(row);
  }
}

void write_cv_curve(const fs::path& path, const std::string& audit, const CvResult& cv) {
  io::CsvWriter w(path, "rtfm.cv_curve", audit, {"index", "tau", "cv", "selected"});
  for (std::size_t m = 0; m < cv.grid.size(); ++m)
    w.row({std::to_string(m + 1), fmt(cv.grid[m]), fmt(cv.curve[m]), m == cv.index ? "1" : "0"});
}

void write_rank_trace(const fs::path& path, const std::string& audit, const RankResult& r) {
  io::CsvWriter w(path, "rtfm.rank_trace", audit, {"pass", "mode", "rank"});
  for (std::size_t p = 0; p < r.trace.size(); ++p)
    for (std::size_t k = 0; k < r.trace[p].size(); ++k)
      w.row({std::to_string(p + 1), std::to_string(k + 1), std::to_string(r.trace[p][k])});
}

void write_eigenvalues(const fs::path& path, const std::string& audit, const std::vector<std::vector<Vector>>& stages,
                       const std::string& stage_label) {
  io::CsvWriter w(path, "rtfm.eigenvalues", audit, {stage_label, "mode", "index", "value"});
  for (std::size_t i = 0; i < stages.size(); ++i)
    for (std::size_t k = 0; k < stages[i].size(); ++k)
      for (Eigen::Index j = 0; j < stages[i][k].size(); ++j)
        w.row({std::to_string(i), std::to_string(k + 1), std::to_string(j + 1), fmt(stages[i][k](j))});
}

/// Runs `job(r)` for r in [0, count) on `threads` workers; results land at
/// their replication index, so output order never depends on scheduling.
template <class Result, class Job>
std::vector<Result> run_replications(std::size_t count, std::size_t threads, Job job) {
  std::vector<Result> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r; (r = next++) < count;) {
      try {
        out[r] = job(r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < std::min(threads, count); ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

using MetricRow = std::pair<std::string, double>;

void write_metrics(const fs::path& dir, const std::string& audit, const std::vector<std::vector<MetricRow>>& reps,
                   const std::string& scenario) {
  io::CsvWriter m(dir / "metrics.csv", "rtfm.metrics", audit, {"replication", "metric", "value"});
  std::vector<std::string> names;
  for (std::size_t r = 0; r < reps.size(); ++r)
    for (const auto& [name, v] : reps[r]) {
      m.row({std::to_string(r + 1), name, fmt(v)});
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  io::CsvWriter s(dir / "summary.csv", "rtfm.summary", audit, {"scenario", "metric", "mean", "sd", "count"});
  for (const auto& name : names) {
    std::vector<double> vals;
    for (const auto& rep : reps)
      for (const auto& [n, v] : rep)
        if (n == name && !std::isnan(v)) vals.push_back(v);
    if (vals.empty()) {
      s.row({scenario, name, "nan", "nan", "0"});
      continue;
    }
    const auto sum = summarize(name, vals);
    s.row({scenario, name, fmt(sum.mean), fmt(sum.sd), std::to_string(sum.count)});
    std::cout << name << ": mean=" << fmt(sum.mean) << " sd=" << fmt(sum.sd) << " n=" << sum.count << "\n";
  }
}

// ---------------------------------------------------------------------------
// simulate

int cmd_simulate(const Flags& f) {
  Settings s("simulate",
             {{"scenario", "T3"}, {"dims", "preset"}, {"true_ranks", "preset"}, {"n", "500"}, {"phi", "0.3"},
              {"psi", "0.3"}, {"factor_dist", "gaussian"}, {"idio_dist", "gaussian"}, {"loading_draw", "uniform"},
              {"p", "100"}, {"r", "3"}, {"dependence", "independent"}, {"ranks", "true"}, {"tau", "cv"},
              {"kappa", "tau"}, {"iterations", "2"}, {"grid_size", "50"}, {"folds", "3"}, {"r_bar", "default"},
              {"rank_passes", "10"}, {"rho", "reciprocal"}, {"seed", "1"}, {"replications", "100"},
              {"outlier_target", "idiosyncratic"}, {"outlier_rate", "0"}, {"local_window", "10"},
              {"write_data", "false"}, {"output", "."}},
             f);
  const std::string scenario = s.get("scenario");
  const bool vector_case = scenario.size() == 2 && scenario[0] == 'V';
  const std::uint64_t reps = s.count("replications");
  if (reps < 1) throw ConfigError("replications must be at least 1");
  const std::uint64_t seed = s.count("seed");

  TensorDgpConfig tcfg;
  VectorDgpConfig vcfg;
  Dims dims;
  Ranks truth_ranks;
  if (vector_case) {
    vcfg.scenario = parse_vector_scenario(scenario);
    vcfg.p = s.count("p");
    vcfg.r = s.count("r");
    vcfg.n = s.count("n");
    const std::string dep = s.get("dependence");
    if (dep == "dependent") vcfg.dependence = Dependence::dependent;
    else if (dep != "independent") throw ConfigError("dependence must be 'independent' or 'dependent'");
    vcfg.validate();
    dims = {vcfg.p};
    truth_ranks = {vcfg.r};
  } else {
    if (scenario == "custom") {
      if (s.get("dims") == "preset") throw ConfigError("scenario=custom needs dims");
      tcfg.dims = parse_dims(s.get("dims"), "dims");
      tcfg.ranks = Ranks(tcfg.dims.size(), 3);
    } else {
      tcfg = TensorDgpConfig::preset(scenario);
      if (s.get("dims") != "preset" && parse_dims(s.get("dims"), "dims") != tcfg.dims)
        throw ConfigError("dims conflict with scenario " + scenario + " (use scenario=custom)");
    }
    if (s.get("true_ranks") != "preset") tcfg.ranks = io::Config::parse_list(s.get("true_ranks"), "true_ranks");
    tcfg.n = s.count("n");
    tcfg.phi = s.num("phi");
    tcfg.psi = s.num("psi");
    tcfg.factor_dist = parse_innovation(s.get("factor_dist"));
    tcfg.idio_dist = parse_innovation(s.get("idio_dist"));
    const std::string ld = s.get("loading_draw");
    if (ld == "orthonormal") tcfg.loading_draw = LoadingDraw::orthonormal_sqrt_p;
    else if (ld != "uniform") throw ConfigError("loading_draw must be 'uniform' or 'orthonormal'");
    tcfg.validate();
    dims = tcfg.dims;
    truth_ranks = tcfg.ranks;
  }

  OutlierConfig ocfg;
  const std::string target = s.get("outlier_target");
  if (target == "factor") ocfg.target = OutlierTarget::factor;
  else if (target != "idiosyncratic") throw ConfigError("outlier_target must be 'idiosyncratic' or 'factor'");
  ocfg.varrho = s.num("outlier_rate");
  ocfg.validate();

  FitOptions fo;
  if (s.get("ranks") == "true") fo.ranks = truth_ranks;
  else fo.ranks = parse_ranks(s.get("ranks"), dims);
  fo.tau = parse_tau(s.get("tau"), "cv", "tau");
  fo.kappa = parse_tau(s.get("kappa"), "tau", "kappa");
  fo.iterations = s.count("iterations");
  fo.cv = cv_config(s);
  fo.rank = rank_config(s, dims);
  const std::size_t local = s.count("local_window");
  const bool write_data = s.flag("write_data");
  const fs::path dir = s.output_dir();
  const std::string audit = s.audit();

  auto job = [&](std::size_t r) {
    const std::uint64_t rs = replication_seed(seed, r);
    TensorSample sample;
    if (vector_case) {
      VectorDgpConfig c = vcfg;
      c.seed = rs;
      sample = gen_vector(c);
    } else {
      TensorDgpConfig c = tcfg;
      c.seed = rs;
      sample = gen_tensor(c);
    }
    OutlierConfig oc = ocfg;
    oc.seed = rs;
    contaminate(sample, oc);
    if (write_data) {
      io::write_series(dir / ("rep_" + std::to_string(r + 1) + ".rtfm"), sample.x);
      for (std::size_t k = 0; k < sample.loadings.size(); ++k)
        write_loadings(dir / ("truth_rep_" + std::to_string(r + 1) + "_mode_" + std::to_string(k + 1) + ".csv"), audit,
                       sample.loadings[k]);
    }
    const auto rep = fit(sample.x, fo);
    std::vector<MetricRow> m;
    if (!fo.tau) m.emplace_back("tau", rep.tau.value());
    for (std::size_t k = 0; k < dims.size(); ++k)
      if (!fo.ranks) m.emplace_back("rank_mode_" + std::to_string(k + 1), static_cast<double>(rep.ranks[k]));
    for (std::size_t k = 0; k < dims.size(); ++k) {
      const Matrix& est = rep.loadings().e[k];
      const double err = est.cols() == sample.loadings[k].cols() ? loading_error(est, sample.loadings[k]) : NAN;
      m.emplace_back("loading_error_mode_" + std::to_string(k + 1), err);
    }
    m.emplace_back("common_error_all", common_error(rep.common, sample.common));
    m.emplace_back("common_error_local", common_error(rep.common, sample.common, local));
    return m;
  };
  const auto results = run_replications<std::vector<MetricRow>>(reps, resolve_threads(f), job);
  write_metrics(dir, audit, results, scenario);
  return kOk;
}

// ---------------------------------------------------------------------------
// estimate / rank / cv

const std::vector<std::pair<std::string, std::string>> kEstimateKeys{
    {"data", ""},        {"ranks", "auto"},   {"tau", "cv"},       {"kappa", "tau"},       {"iterations", "2"},
    {"grid_size", "50"}, {"folds", "3"},      {"r_bar", "default"}, {"rank_passes", "10"}, {"rho", "reciprocal"},
    {"output", "."}};

int cmd_estimate(const Flags& f) {
  Settings s("estimate", kEstimateKeys, f);
  const TensorSeries x = load_data(s);
  const Dims& dims = x.dims();
  FitOptions fo;
  fo.ranks = parse_ranks(s.get("ranks"), dims);
  fo.tau = parse_tau(s.get("tau"), "cv", "tau");
  fo.kappa = parse_tau(s.get("kappa"), "tau", "kappa");
  fo.iterations = s.count("iterations");
  fo.cv = cv_config(s);
  fo.rank = rank_config(s, dims);
  const fs::path dir = s.output_dir();
  const auto rep = fit(x, fo);
  const std::string audit = s.audit();

  for (std::size_t i = 0; i < rep.stages.size(); ++i)
    for (std::size_t k = 0; k < dims.size(); ++k)
      write_loadings(dir / ("loadings_stage_" + std::to_string(i) + "_mode_" + std::to_string(k + 1) + ".csv"), audit,
                     rep.stages[i].lambda[k]);
  {
    std::vector<std::string> header{"t"};
    for (std::size_t j = 0; j < product(rep.factors.dims()); ++j) header.push_back("f" + std::to_string(j + 1));
    io::CsvWriter w(dir / "factors.csv", "rtfm.factors", audit, header);
    for (std::size_t t = 0; t < rep.factors.length(); ++t) {
      std::vector<std::string> row{std::to_string(t + 1)};
      for (double v : rep.factors.slice(t)) row.push_back(fmt(v));
      w.row(row);
    }
  }
  std::vector<std::vector<Vector>> spectra;
  for (const auto& st : rep.stages) spectra.push_back(st.eigvals);
  write_eigenvalues(dir / "eigenvalues.csv", audit, spectra, "stage");
  {
    io::CsvWriter w(dir / "truncation.csv", "rtfm.truncation", audit, {"tau", "kappa", "ranks"});
    std::string ranks = ranks_to_string(rep.ranks);
    std::replace(ranks.begin(), ranks.end(), ',', ';');
    w.row({tau_string(rep.tau), tau_string(rep.kappa), ranks});
  }
  if (rep.cv) write_cv_curve(dir / "cv_curve.csv", audit, *rep.cv);
  if (rep.rank) write_rank_trace(dir / "rank_trace.csv", audit, *rep.rank);

  std::cout << "tau=" << tau_string(rep.tau) << " kappa=" << tau_string(rep.kappa) << "\n";
  std::cout << "ranks=" << ranks_to_string(rep.ranks) << (rep.rank ? " (estimated)" : "") << "\n";
  return kOk;
}

int cmd_rank(const Flags& f) {
  Settings s("rank",
             {{"data", ""}, {"tau", "cv"}, {"iterations", "2"}, {"grid_size", "50"}, {"folds", "3"},
              {"r_bar", "default"}, {"rank_passes", "10"}, {"rho", "reciprocal"}, {"output", "."}},
             f);
  const TensorSeries x = load_data(s);
  const RankConfig rc = rank_config(s, x.dims());
  std::optional<TruncationLevel> tau = parse_tau(s.get("tau"), "cv", "tau");
  const fs::path dir = s.output_dir();
  const std::string audit = s.audit();
  if (!tau) {
    const auto cv = cv_tau(x, rc.resolve_r_bar(x.dims()), cv_config(s));
    write_cv_curve(dir / "cv_curve.csv", audit, cv);
    tau = TruncationLevel(cv.tau);
  }
  const auto res = estimate_ranks(x, *tau, rc);
  write_rank_trace(dir / "rank_trace.csv", audit, res);
  write_eigenvalues(dir / "rank_eigenvalues.csv", audit, {res.eigvals}, "final_pass");
  if (!res.converged)
    std::cerr << "warning: ranks did not stabilise within " << rc.max_iterations << " passes\n";
  std::cout << ranks_to_string(res.ranks) << "\n";
  return kOk;
}

int cmd_cv(const Flags& f) {
  Settings s("cv",
             {{"data", ""}, {"ranks", "auto"}, {"iterations", "2"}, {"grid_size", "50"}, {"folds", "3"},
              {"r_bar", "default"}, {"output", "."}},
             f);
  const TensorSeries x = load_data(s);
  RankConfig rc;
  if (s.get("r_bar") != "default") rc.r_bar = io::Config::parse_list(s.get("r_bar"), "r_bar");
  const auto ranks = parse_ranks(s.get("ranks"), x.dims());
  const Ranks use = ranks ? *ranks : rc.resolve_r_bar(x.dims());
  const fs::path dir = s.output_dir();
  const auto cv = cv_tau(x, use, cv_config(s));
  write_cv_curve(dir / "cv_curve.csv", s.audit(), cv);
  std::cout << "tau=" << fmt(cv.tau) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// forecast

int cmd_forecast(const Flags& f) {
  Settings s("forecast",
             {{"data", ""}, {"window", "120"}, {"h_max", "24"}, {"rank", "1"}, {"tau", "cv"}, {"kappa", "tau"},
              {"compare_tau", "inf"}, {"standardize", "mean_sd"}, {"cv_per_window", "false"}, {"iterations", "2"},
              {"grid_size", "50"}, {"folds", "3"}, {"output", "."}},
             f);
  const TensorSeries x = load_data(s);
  ForecastConfig a;
  a.window = s.count("window");
  a.h_max = s.count("h_max");
  a.rank = s.count("rank");
  a.tau = parse_tau(s.get("tau"), "cv", "tau");
  a.kappa = parse_tau(s.get("kappa"), "tau", "kappa");
  a.standardization = parse_standardization(s.get("standardize"));
  a.cv_per_window = s.flag("cv_per_window");
  a.cv = cv_config(s);
  ForecastConfig b = a;
  b.tau = parse_tau(s.get("compare_tau"), "cv", "compare_tau");
  b.kappa.reset();
  if (x.order() != 1) throw ConfigError("forecast needs a vector panel (K = 1)");
  a.validate(x.dims()[0]);
  const fs::path dir = s.output_dir();
  const std::string audit = s.audit();

  const auto ra = rolling_errors(x, a);
  const auto rb = rolling_errors(x, b);
  const auto diff = loss_difference(ra, rb);
  {
    io::CsvWriter w(dir / "forecast_errors.csv", "rtfm.forecast_errors", audit,
                    {"origin", "variable", "tau", "err", "err_compare"});
    for (std::size_t j = 0; j < ra.origins.size(); ++j)
      for (Eigen::Index i = 0; i < ra.errors.rows(); ++i)
        w.row({std::to_string(ra.origins[j] + 1), std::to_string(i + 1), fmt(ra.taus[j]),
               fmt(ra.errors(i, static_cast<Eigen::Index>(j))), fmt(rb.errors(i, static_cast<Eigen::Index>(j)))});
  }
  {
    io::CsvWriter w(dir / "loss_diff.csv", "rtfm.loss_diff", audit, {"origin", "loss", "loss_compare", "diff"});
    for (std::size_t j = 0; j < diff.origins.size(); ++j)
      w.row({std::to_string(diff.origins[j] + 1), fmt(diff.loss_a[j]), fmt(diff.loss_b[j]), fmt(diff.diff[j])});
  }
  {
    io::CsvWriter w(dir / "forecast_summary.csv", "rtfm.forecast_summary", audit,
                    {"variable", "mean_err", "mean_err_compare", "ratio"});
    for (Eigen::Index i = 0; i < ra.mean_errors.size(); ++i)
      w.row({std::to_string(i + 1), fmt(ra.mean_errors(i)), fmt(rb.mean_errors(i)),
             fmt(ra.mean_errors(i) / rb.mean_errors(i))});
  }
  std::cout << "origins=" << ra.origins.size() << " mean_err=" << fmt(ra.mean_errors.mean())
            << " mean_err_compare=" << fmt(rb.mean_errors.mean()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// diagnose

int cmd_diagnose(const Flags& f) {
  Settings s("diagnose",
             {{"dims", "20,30,40"}, {"n", "500"}, {"phi", "0"}, {"psi", "0"}, {"factor_dist", "gaussian"},
              {"idio_dist", "gaussian"}, {"tau", "cv"}, {"iterations", "2"}, {"grid_size", "50"}, {"folds", "3"},
              {"seed", "1"}, {"replications", "100"}, {"output", "."}},
             f);
  TensorDgpConfig c;
  c.dims = parse_dims(s.get("dims"), "dims");
  c.ranks = Ranks(c.dims.size(), 1);
  c.n = s.count("n");
  c.phi = s.num("phi");
  c.psi = s.num("psi");
  c.factor_dist = parse_innovation(s.get("factor_dist"));
  c.idio_dist = parse_innovation(s.get("idio_dist"));
  c.loading_draw = LoadingDraw::orthonormal_sqrt_p;
  c.validate();
  const auto fixed_tau = parse_tau(s.get("tau"), "cv", "tau");
  const CvConfig cvc = cv_config(s);
  const std::uint64_t reps = s.count("replications"), seed = s.count("seed");
  if (reps < 1) throw ConfigError("replications must be at least 1");
  const fs::path dir = s.output_dir();
  const std::string audit = s.audit();

  struct Rep {
    NormalityScores scores;
    double tau = 0.0;
  };
  auto job = [&](std::size_t r) {
    TensorDgpConfig cr = c;
    cr.seed = replication_seed(seed, r);
    const auto sample = gen_tensor(cr);
    const TruncationLevel tau =
        fixed_tau ? *fixed_tau : TruncationLevel(cv_tau(sample.x, c.ranks, cvc).tau);
    std::vector<Vector> unit;
    for (std::size_t k = 0; k < c.dims.size(); ++k)
      unit.push_back(sample.loadings[k].col(0) / std::sqrt(static_cast<double>(c.dims[k])));
    return Rep{normality_diagnostic(sample.x, unit, tau), tau.is_infinite() ? INFINITY : tau.value()};
  };
  const auto results = run_replications<Rep>(reps, resolve_threads(f), job);

  std::vector<double> pooled;
  std::size_t omitted = 0;
  io::CsvWriter w(dir / "z_scores.csv", "rtfm.z_scores", audit, {"replication", "mode", "index", "z", "tau"});
  for (std::size_t r = 0; r < results.size(); ++r) {
    const auto& sc = results[r].scores;
    omitted += sc.omitted;
    for (std::size_t k = 0; k < sc.z.size(); ++k)
      for (std::size_t i = 0; i < sc.z[k].size(); ++i) {
        w.row({std::to_string(r + 1), std::to_string(k + 1), std::to_string(i + 1), fmt(sc.z[k][i]),
               fmt(results[r].tau)});
        pooled.push_back(sc.z[k][i]);
      }
  }
  const double d = ks_statistic_normal(pooled);
  const double p = ks_pvalue(d, pooled.size());
  io::CsvWriter sw(dir / "diagnose_summary.csv", "rtfm.diagnose_summary", audit, {"statistic", "value"});
  sw.row({"count", std::to_string(pooled.size())});
  sw.row({"omitted", std::to_string(omitted)});
  sw.row({"ks_statistic", fmt(d)});
  sw.row({"ks_pvalue", fmt(p)});
  for (std::size_t k = 0; k < c.dims.size(); ++k) {
    std::vector<double> dev;
    for (const auto& r : results) dev.insert(dev.end(), r.scores.deviation[k].begin(), r.scores.deviation[k].end());
    sw.row({"deviation_sd_mode_" + std::to_string(k + 1), fmt(summarize("dev", dev).sd)});
  }
  std::cout << "z_count=" << pooled.size() << " ks=" << fmt(d) << " p=" << fmt(p) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tail-robust Tucker tensor factor models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rtfm 1.0");
  Flags f;

  auto add_common = [&f](CLI::App* sub, bool data) {
    sub->add_option("--config", f.config, "key=value configuration file")->check(CLI::ExistingFile);
    if (data) sub->add_option("--data", f.data, "input series (.rtfm binary, or .csv panel for K = 1)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--threads", f.threads, "worker threads (default: RTFM_THREADS or 1)");
  };
  auto add_estimation = [&f](CLI::App* sub, bool ranks, bool kappa) {
    sub->add_option("--tau", f.tau, "truncation level: number, inf, or cv");
    if (kappa) sub->add_option("--kappa", f.kappa, "factor truncation level: number, inf, or tau");
    if (ranks) sub->add_option("--ranks", f.ranks, "comma-separated ranks, or auto");
    sub->add_option("--iters", f.iters, "projected refinement iterations");
  };

  auto* sim = app.add_subcommand("simulate", "Monte Carlo campaign on a simulated scenario");
  add_common(sim, false);
  add_estimation(sim, true, true);
  sim->add_option("--seed", f.seed, "base seed");
  auto* est = app.add_subcommand("estimate", "estimate loadings, factors and the common component");
  add_common(est, true);
  add_estimation(est, true, true);
  auto* rank = app.add_subcommand("rank", "estimate the number of factors per mode");
  add_common(rank, true);
  add_estimation(rank, false, false);
  auto* cv = app.add_subcommand("cv", "cross-validation curve for the truncation level");
  add_common(cv, true);
  cv->add_option("--ranks", f.ranks, "comma-separated ranks, or auto (rank upper bounds)");
  cv->add_option("--iters", f.iters, "projected refinement iterations");
  auto* fc = app.add_subcommand("forecast", "rolling-window forecasts for a vector panel");
  add_common(fc, true);
  add_estimation(fc, false, true);
  auto* diag = app.add_subcommand("diagnose", "loading normality diagnostic on simulated rank-one data");
  add_common(diag, false);
  diag->add_option("--tau", f.tau, "truncation level: number, inf, or cv");
  diag->add_option("--iters", f.iters, "projected refinement iterations");
  diag->add_option("--seed", f.seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(f);
    if (*est) return cmd_estimate(f);
    if (*rank) return cmd_rank(f);
    if (*cv) return cmd_cv(f);
    if (*fc) return cmd_forecast(f);
    if (*diag) return cmd_diagnose(f);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUnexpected;
}
