#pragma once

// Experiment runner: config parsing, reference trajectories, metrics and
// CSV output. One ExperimentConfig describes one trajectory.

#include "symkry/core.hpp"
#include "symkry/integrators.hpp"
#include "symkry/matfun.hpp"
#include "symkry/problems.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace symkry {

inline constexpr const char* version = "0.1.0";

/// Raised for malformed or inconsistent run descriptions (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class ReferenceKind { automatic, none, dense, fine };

struct ReferenceSpec {
  ReferenceKind kind = ReferenceKind::automatic;
  int refinement = 100;
};

inline std::string to_string(const ReferenceSpec& r) {
  switch (r.kind) {
    case ReferenceKind::automatic: return "auto";
    case ReferenceKind::none: return "none";
    case ReferenceKind::dense: return "dense";
    case ReferenceKind::fine: return "fine:" + std::to_string(r.refinement);
  }
  return "?";
}

struct ExperimentConfig {
  std::string name = "run";
  std::string problem = "linear-wave";
  ProblemParams params;
  Method method = Method::ee;
  BasisProcess process = BasisProcess::arnoldi;
  Index basis_dim = 16;
  double t_final = 1.0;
  Index n_steps = 100;
  ReferenceSpec reference;
  std::string output;
  Index record_every = 1;
  std::uint64_t seed = 0;
  FixedPointOptions fixed_point;
  bool iemp_refreeze = false;
  int breakdown_retries = 3;
  double divergence_factor = 1e6;
  bool lanczos_reorthogonalize = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not a number: '" + value + "'");
  }
  if (used != value.size()) throw ConfigError("'" + key + "': trailing characters in '" + value + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': not an integer: '" + value + "'");
  }
  if (used != value.size()) throw ConfigError("'" + key + "': not an integer: '" + value + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("'" + key + "': expected a boolean, got '" + value + "'");
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline Method parse_method(const std::string& s) {
  const std::string v = detail::lower(s);
  if (v == "ee") return Method::ee;
  if (v == "eemp") return Method::eemp;
  if (v == "iemp") return Method::iemp;
  throw ConfigError("unknown method '" + s + "' (EE, EEMP, IEMP)");
}

inline BasisProcess parse_process(const std::string& s) {
  std::string v = detail::lower(s);
  std::replace(v.begin(), v.end(), '_', '-');
  for (auto p : {BasisProcess::arnoldi, BasisProcess::symplectic_arnoldi, BasisProcess::isotropic_arnoldi,
                 BasisProcess::hamiltonian_lanczos}) {
    if (v == to_string(p)) return p;
  }
  throw ConfigError("unknown basis process '" + s +
                    "' (arnoldi, symplectic-arnoldi, isotropic-arnoldi, hamiltonian-lanczos)");
}

/// "dense", "none", "auto", "fine" or "fine:<factor>".
inline ReferenceSpec parse_reference(const std::string& s) {
  const std::string v = detail::lower(s);
  ReferenceSpec r;
  if (v == "auto") return r;
  if (v == "none") {
    r.kind = ReferenceKind::none;
    return r;
  }
  if (v == "dense" || v == "dense_linear" || v == "dense-linear") {
    r.kind = ReferenceKind::dense;
    return r;
  }
  if (v == "fine") {
    r.kind = ReferenceKind::fine;
    return r;
  }
  if (v.rfind("fine:", 0) == 0) {
    r.kind = ReferenceKind::fine;
    const long long f = detail::parse_int("reference", v.substr(5));
    if (f < 1) throw ConfigError("reference refinement must be >= 1");
    r.refinement = static_cast<int>(f);
    return r;
  }
  throw ConfigError("unknown reference '" + s + "' (dense, fine:<factor>, none, auto)");
}

/// Sets one key. Keys match the CLI long flags; problem parameters use
/// `param = name=value` or `param.name = value`.
inline void apply_config_key(ExperimentConfig& c, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = detail::trim(raw_key);
  const std::string value = detail::trim(raw_value);
  if (key == "name") c.name = value;
  else if (key == "problem") c.problem = value;
  else if (key == "method") c.method = parse_method(value);
  else if (key == "basis") c.process = parse_process(value);
  else if (key == "basis-dim") c.basis_dim = detail::parse_int(key, value);
  else if (key == "t-final") c.t_final = detail::parse_double(key, value);
  else if (key == "steps") c.n_steps = detail::parse_int(key, value);
  else if (key == "record-every") c.record_every = detail::parse_int(key, value);
  else if (key == "output") c.output = value;
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
  else if (key == "reference") c.reference = parse_reference(value);
  else if (key == "fp-tol") c.fixed_point.tol = detail::parse_double(key, value);
  else if (key == "fp-stall-tol") c.fixed_point.stall_tol = detail::parse_double(key, value);
  else if (key == "fp-max-iter") c.fixed_point.max_iter = static_cast<int>(detail::parse_int(key, value));
  else if (key == "iemp-refreeze") c.iemp_refreeze = detail::parse_bool(key, value);
  else if (key == "breakdown-retries") c.breakdown_retries = static_cast<int>(detail::parse_int(key, value));
  else if (key == "divergence-factor") c.divergence_factor = detail::parse_double(key, value);
  else if (key == "lanczos-reorthogonalize") c.lanczos_reorthogonalize = detail::parse_bool(key, value);
  else if (key == "param") {
    const auto eq = value.find('=');
    if (eq == std::string::npos) throw ConfigError("param expects name=value, got '" + value + "'");
    const std::string pname = detail::trim(value.substr(0, eq));
    c.params[pname] = detail::parse_double("param " + pname, detail::trim(value.substr(eq + 1)));
  } else if (key.rfind("param.", 0) == 0) {
    c.params[key.substr(6)] = detail::parse_double(key, value);
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

/// Problem parameters with registry defaults filled in.
inline ProblemParams effective_params(const ExperimentConfig& c) {
  try {
    return resolve_problem_params(c.problem, c.params);
  } catch (const MisuseError& e) {
    throw ConfigError(e.what());
  }
}

inline void validate(const ExperimentConfig& c) {
  const ProblemParams p = effective_params(c);
  if (p.at("n") < 3) throw ConfigError("grid size n must be >= 3");
  const auto dim = 2 * static_cast<Index>(p.at("n"));
  if (c.n_steps < 1) throw ConfigError("steps must be >= 1");
  if (!(c.t_final > 0.0) || !std::isfinite(c.t_final)) throw ConfigError("t-final must be positive");
  if (c.record_every < 1) throw ConfigError("record-every must be >= 1");
  if (c.basis_dim < 1) throw ConfigError("basis-dim must be >= 1");
  if (c.basis_dim > dim) {
    throw ConfigError("basis-dim " + std::to_string(c.basis_dim) + " exceeds system dimension " +
                      std::to_string(dim));
  }
  if (produces_symplectic(c.process) && c.basis_dim % 2 != 0) {
    throw ConfigError("basis-dim must be even for " + std::string(to_string(c.process)));
  }
  if (c.fixed_point.max_iter < 1 || !(c.fixed_point.tol > 0.0) || !(c.fixed_point.stall_tol >= 0.0)) throw ConfigError("invalid fixed-point options");
  if (c.breakdown_retries < 0) throw ConfigError("breakdown-retries must be >= 0");
}

/// One-line key=value echo used in CSV headers. Stable ordering.
inline std::string config_echo(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "name=" << c.name << " problem=" << c.problem;
  for (const auto& [k, v] : effective_params(c)) os << " param." << k << "=" << detail::format_double(v);
  os << " method=" << to_string(c.method) << " basis=" << to_string(c.process) << " basis-dim=" << c.basis_dim
     << " t-final=" << detail::format_double(c.t_final) << " steps=" << c.n_steps
     << " record-every=" << c.record_every << " reference=" << to_string(c.reference) << " seed=" << c.seed
     << " fp-tol=" << detail::format_double(c.fixed_point.tol)
     << " fp-stall-tol=" << detail::format_double(c.fixed_point.stall_tol) << " fp-max-iter=" << c.fixed_point.max_iter
     << " iemp-refreeze=" << (c.iemp_refreeze ? 1 : 0) << " breakdown-retries=" << c.breakdown_retries
     << " divergence-factor=" << detail::format_double(c.divergence_factor)
     << " lanczos-reorthogonalize=" << (c.lanczos_reorthogonalize ? 1 : 0);
  return os.str();
}

/// Parses `key = value` text. Lines before the first `[section]` are
/// defaults inherited by every section; without sections the defaults form
/// a single run. `#` and `;` start comments.
inline std::vector<ExperimentConfig> parse_config(std::istream& in, const ExperimentConfig& base = {}) {
  ExperimentConfig defaults = base;
  std::vector<ExperimentConfig> runs;
  ExperimentConfig* current = &defaults;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      runs.push_back(defaults);
      runs.back().name = detail::trim(line.substr(1, line.size() - 2));
      current = &runs.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_config_key(*current, line.substr(0, eq), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (runs.empty()) runs.push_back(defaults);
  return runs;
}

inline std::vector<ExperimentConfig> load_config_file(const std::string& path, const ExperimentConfig& base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return parse_config(in, base);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// Metrics.

inline double relative_energy_error(const HamiltonianSystem& sys, const Vector& x_t, const Vector& x0) {
  const double h0 = sys.energy(x0);
  const double ht = sys.energy(x_t);
  if (!std::isfinite(h0) || !std::isfinite(ht)) throw NumericalError("relative_energy_error: non-finite energy");
  return std::abs(ht - h0) / std::max(std::abs(h0), 1e-300);
}

inline double solution_error(const Vector& x_t, const Vector& ref_t) {
  detail::require_same(x_t.size(), ref_t.size(), "solution_error");
  return (x_t - ref_t).norm() / std::max(ref_t.norm(), 1e-300);
}

// Reference trajectories.

/// Largest 2n accepted by the dense linear reference.
inline constexpr Index dense_reference_limit = 2000;

namespace detail {

inline Vector rk4_step(const HamiltonianSystem& sys, const Vector& x, double h) {
  const Vector k1 = sys.field(x);
  const Vector k2 = sys.field(x + 0.5 * h * k1);
  const Vector k3 = sys.field(x + 0.5 * h * k2);
  const Vector k4 = sys.field(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// exp(h [[A, c], [0, 0]]) so that [x+; 1] = P [x; 1] is the exact affine flow over h.
inline Matrix affine_propagator(const HamiltonianSystem& sys, double h) {
  const Index d = sys.dim();
  if (d > dense_reference_limit) {
    throw ConfigError("dense reference refused for dimension " + std::to_string(d) + " > " +
                      std::to_string(dense_reference_limit));
  }
  Matrix aug = Matrix::Zero(d + 1, d + 1);
  aug.topLeftCorner(d, d) = densify_jacobian(sys, Vector::Zero(d));
  aug.topRightCorner(d, 1) = sys.constant_term();
  return expm(h * aug);
}

}  // namespace detail

/// Reference states in lockstep with a uniform coarse grid t_i = i h.
/// Dense mode is exact for affine systems; fine mode runs classical RK4 with
/// `refinement` substeps per coarse step.
class ReferenceTrajectory {
 public:
  ReferenceTrajectory(const HamiltonianSystem& sys, const Vector& x0, double h, ReferenceSpec spec)
      : sys_(sys), h_(h), spec_(resolve(sys, spec)), x_(x0) {
    if (spec_.kind == ReferenceKind::dense) {
      if (!sys.is_linear()) throw ConfigError("dense reference requires a linear system");
      propagator_ = detail::affine_propagator(sys, h);
    }
  }

  static ReferenceSpec resolve(const HamiltonianSystem& sys, ReferenceSpec spec) {
    if (spec.kind != ReferenceKind::automatic) return spec;
    if (sys.is_linear() && sys.dim() <= dense_reference_limit) spec.kind = ReferenceKind::dense;
    else spec.kind = ReferenceKind::fine;
    return spec;
  }

  bool enabled() const { return spec_.kind != ReferenceKind::none; }
  const ReferenceSpec& spec() const { return spec_; }
  Index step() const { return step_; }
  const Vector& state() const { return x_; }

  /// Marches forward to coarse step `target` (>= current step).
  const Vector& advance_to(Index target) {
    if (target < step_) throw MisuseError("ReferenceTrajectory: cannot go backwards");
    if (!enabled()) return x_;
    const Index d = x_.size();
    for (; step_ < target; ++step_) {
      if (spec_.kind == ReferenceKind::dense) {
        Vector next = propagator_.topLeftCorner(d, d) * x_ + propagator_.topRightCorner(d, 1);
        x_ = std::move(next);
      } else {
        const double hs = h_ / spec_.refinement;
        for (int s = 0; s < spec_.refinement; ++s) x_ = detail::rk4_step(sys_, x_, hs);
      }
    }
    return x_;
  }

 private:
  const HamiltonianSystem& sys_;
  double h_;
  ReferenceSpec spec_;
  Vector x_;
  Matrix propagator_;
  Index step_ = 0;
};

/// States at the requested times (nondecreasing, starting at or after 0).
/// Fine mode uses substeps no longer than `max_substep`.
inline std::vector<Vector> reference_solution(const HamiltonianSystem& sys, const Vector& x0,
                                              const std::vector<double>& t_grid, ReferenceSpec spec,
                                              double max_substep = 1e-3) {
  spec = ReferenceTrajectory::resolve(sys, spec);
  if (spec.kind == ReferenceKind::none) throw MisuseError("reference_solution: reference disabled");
  std::vector<Vector> out;
  out.reserve(t_grid.size());
  Vector x = x0;
  double t = 0.0;
  for (double target : t_grid) {
    if (target < t) throw MisuseError("reference_solution: time grid must be nondecreasing");
    const double span = target - t;
    if (span > 0.0) {
      if (spec.kind == ReferenceKind::dense) {
        const Matrix p = detail::affine_propagator(sys, span);
        const Index d = x.size();
        x = (p.topLeftCorner(d, d) * x + p.topRightCorner(d, 1)).eval();
      } else {
        const auto sub = static_cast<Index>(std::ceil(span / max_substep));
        const double hs = span / static_cast<double>(sub);
        for (Index s = 0; s < sub; ++s) x = detail::rk4_step(sys, x, hs);
      }
    }
    t = target;
    out.push_back(x);
  }
  return out;
}

// Series and CSV.

struct MetricsRow {
  Index step = 0;
  double t = 0.0;
  double rel_energy_error = 0.0;
  double sol_error = std::numeric_limits<double>::quiet_NaN();
  Index basis_dim = 0;
  int fp_iters = 0;
};

struct MetricsSeries {
  std::string header;  // config echo
  std::vector<MetricsRow> rows;
};

inline constexpr const char* csv_columns = "step,t,rel_energy_error,sol_error,basis_dim,fp_iters";

inline std::string csv_row(const MetricsRow& r) {
  std::string s = std::to_string(r.step);
  s += ',';
  s += detail::format_double(r.t);
  s += ',';
  s += detail::format_double(r.rel_energy_error);
  s += ',';
  s += std::isnan(r.sol_error) ? std::string("nan") : detail::format_double(r.sol_error);
  s += ',';
  s += std::to_string(r.basis_dim);
  s += ',';
  s += std::to_string(r.fp_iters);
  return s;
}

inline void write_csv(std::ostream& os, const MetricsSeries& series) {
  os << "# symkry " << version << ' ' << series.header << '\n' << csv_columns << '\n';
  for (const auto& r : series.rows) os << csv_row(r) << '\n';
}

struct RunResult {
  ExperimentConfig config;
  MetricsSeries series;
  TrajectorySummary summary;
  ReferenceSpec reference;
  double energy0 = 0.0;
  double final_rel_energy_error = 0.0;
  double max_rel_energy_error = 0.0;
  double final_sol_error = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;

  bool ok() const { return summary.status == RunStatus::completed; }
};

inline StepperConfig stepper_config(const ExperimentConfig& c) {
  StepperConfig s;
  s.method = c.method;
  s.process = c.process;
  s.basis_dim = c.basis_dim;
  s.fixed_point = c.fixed_point;
  s.iemp_refreeze = c.iemp_refreeze;
  s.breakdown_retries = c.breakdown_retries;
  s.seed = c.seed;
  s.krylov.lanczos_reorthogonalize = c.lanczos_reorthogonalize;
  return s;
}

/// Integrates one configuration and records metrics every `record_every`
/// steps (plus step 0). When `c.output` is set the CSV is written there,
/// including the rows recorded before a failure.
inline RunResult run(const ExperimentConfig& c) {
  validate(c);
  const auto start = std::chrono::steady_clock::now();
  RunResult res;
  res.config = c;
  res.series.header = config_echo(c);

  const std::unique_ptr<GridProblem> sys = make_problem(c.problem, effective_params(c));
  const Vector x0 = sys->initial_state();
  const double h = c.t_final / static_cast<double>(c.n_steps);
  ReferenceTrajectory ref(*sys, x0, h, c.reference);
  res.reference = ref.spec();
  res.energy0 = sys->energy(x0);

  std::optional<std::ofstream> file;
  if (!c.output.empty()) {
    file.emplace(c.output, std::ios::out | std::ios::trunc);
    if (!*file) throw ConfigError("cannot open output file '" + c.output + "'");
    *file << "# symkry " << version << ' ' << res.series.header << '\n' << csv_columns << '\n';
  }

  auto observer = [&](Index step, double t, const Vector& x, const StepInfo& info) {
    if (step % c.record_every != 0) return;
    MetricsRow row;
    row.step = step;
    row.t = t;
    row.rel_energy_error = relative_energy_error(*sys, x, x0);
    if (ref.enabled()) row.sol_error = solution_error(x, ref.advance_to(step));
    row.basis_dim = info.basis_dim;
    row.fp_iters = info.fp_iters;
    res.max_rel_energy_error = std::max(res.max_rel_energy_error, row.rel_energy_error);
    res.final_rel_energy_error = row.rel_energy_error;
    res.final_sol_error = row.sol_error;
    res.series.rows.push_back(row);
    if (file) *file << csv_row(row) << '\n';
  };

  IntegrationOptions opts;
  opts.divergence_factor = c.divergence_factor;
  res.summary = integrate(*sys, stepper_config(c), x0, c.t_final, c.n_steps, observer, opts);
  if (file) file->flush();
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

inline std::string summary_line(const RunResult& r) {
  std::ostringstream os;
  os << r.config.name << ": " << to_string(r.summary.status) << " steps=" << r.summary.steps_done << "/"
     << r.config.n_steps << " final_rel_energy_error=" << detail::format_double(r.final_rel_energy_error)
     << " max_rel_energy_error=" << detail::format_double(r.max_rel_energy_error)
     << " final_sol_error=" << (std::isnan(r.final_sol_error) ? "nan" : detail::format_double(r.final_sol_error))
     << " matvecs=" << r.summary.counters.matvecs << " fp_iters=" << r.summary.counters.fp_iters
     << " wall=" << r.wall_seconds << "s";
  if (!r.summary.message.empty()) os << " (" << r.summary.message << ")";
  return os.str();
}

/// Runs independent configurations on up to `jobs` worker threads. Results
/// keep the input order. The first exception thrown by any run is rethrown.
inline std::vector<RunResult> run_all(const std::vector<ExperimentConfig>& configs, unsigned jobs,
                                      const std::function<void(const RunResult&)>& on_done = {}) {
  std::vector<RunResult> results(configs.size());
  std::vector<std::exception_ptr> errors(configs.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < configs.size(); i = next++) {
      try {
        results[i] = run(configs[i]);
        if (on_done) {
          std::lock_guard<std::mutex> lock(done_mutex);
          on_done(results[i]);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(configs.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace symkry
