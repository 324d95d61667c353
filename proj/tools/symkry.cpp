// symkry: run Krylov exponential-integrator experiments and write CSV metrics.
//
//   symkry run --problem nls --method EEMP --basis arnoldi --basis-dim 20 ...
//   symkry run --config runs.cfg --section lanczos --steps 500
//   symkry preset fig1-right-desk --output-dir out
//   symkry list-problems | list-presets
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include "symkry/symkry.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#ifndef SYMKRY_PRESET_DIR
#define SYMKRY_PRESET_DIR "presets"
#endif

namespace fs = std::filesystem;

namespace {

constexpr int exit_config = 2;
constexpr int exit_numerical = 3;

// Long flags that map one-to-one onto config keys.
const std::vector<std::pair<std::string, std::string>> run_flags = {
    {"problem", "problem name (see list-problems)"},
    {"method", "EE, EEMP or IEMP"},
    {"basis", "arnoldi, symplectic-arnoldi, isotropic-arnoldi, hamiltonian-lanczos"},
    {"basis-dim", "total columns of the basis"},
    {"t-final", "final time"},
    {"steps", "number of uniform steps"},
    {"record-every", "record metrics every N steps"},
    {"output", "CSV output path"},
    {"seed", "seed for breakdown restarts"},
    {"reference", "dense | fine:<factor> | none | auto"},
    {"fp-tol", "IEMP fixed-point tolerance"},
    {"fp-stall-tol", "IEMP: accept a stalled fixed point below this relative increment (0 = never)"},
    {"fp-max-iter", "IEMP fixed-point iteration cap"},
    {"iemp-refreeze", "IEMP: relinearize at the converged midpoint (0/1)"},
    {"breakdown-retries", "perturbed restarts after a Lanczos breakdown"},
    {"divergence-factor", "abort when |x| exceeds this multiple of |x0| (0 = off)"},
    {"lanczos-reorthogonalize", "omega-reorthogonalize Lanczos vectors (0/1)"},
    {"name", "run label used in output names"},
};

struct RunOptions {
  std::map<std::string, std::string> flags;
  std::vector<std::string> params;
  std::string config_file;
  std::string section;
  std::string output_dir;
  unsigned jobs = 1;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunOptions& o) {
  for (const auto& [key, help] : run_flags) {
    cmd->add_option_function<std::string>(
        "--" + key, [&o, k = key](const std::string& v) { o.flags[k] = v; }, help);
  }
  cmd->add_option("--param", o.params, "problem parameter override name=value (repeatable)");
  cmd->add_option("--output-dir", o.output_dir, "directory for CSV files without an explicit output");
  cmd->add_option("--jobs", o.jobs, "worker threads for multi-run configs")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", o.quiet, "suppress the per-run summary");
}

void apply_overrides(symkry::ExperimentConfig& c, const RunOptions& o) {
  for (const auto& [k, v] : o.flags) symkry::apply_config_key(c, k, v);
  for (const auto& p : o.params) symkry::apply_config_key(c, "param", p);
}

void assign_outputs(std::vector<symkry::ExperimentConfig>& runs, const RunOptions& o, const std::string& stem) {
  for (auto& c : runs) {
    if (!c.output.empty()) {
      if (!o.output_dir.empty() && fs::path(c.output).is_relative()) c.output = (fs::path(o.output_dir) / c.output).string();
      continue;
    }
    if (o.output_dir.empty()) continue;
    const std::string file = runs.size() == 1 && stem == c.name ? stem : stem + "-" + c.name;
    c.output = (fs::path(o.output_dir) / (file + ".csv")).string();
  }
  if (!o.output_dir.empty()) fs::create_directories(o.output_dir);
}

int execute(std::vector<symkry::ExperimentConfig> runs, const RunOptions& o) {
  for (const auto& c : runs) symkry::validate(c);
  const auto results = symkry::run_all(runs, o.jobs, [&](const symkry::RunResult& r) {
    if (!o.quiet) std::cout << symkry::summary_line(r) << std::endl;
  });
  int code = 0;
  for (const auto& r : results) {
    if (!r.ok()) code = exit_numerical;
  }
  return code;
}

std::vector<symkry::ExperimentConfig> select_section(std::vector<symkry::ExperimentConfig> runs,
                                                     const std::string& section) {
  if (section.empty()) return runs;
  std::vector<symkry::ExperimentConfig> out;
  std::copy_if(runs.begin(), runs.end(), std::back_inserter(out),
               [&](const auto& c) { return c.name == section; });
  if (out.empty()) throw symkry::ConfigError("no section named '" + section + "'");
  return out;
}

std::vector<std::string> preset_names(const std::string& dir) {
  std::vector<std::string> names;
  if (!fs::is_directory(dir)) return names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".cfg") names.push_back(entry.path().stem().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Krylov exponential integrators for Hamiltonian systems"};
  app.set_version_flag("--version", std::string("symkry ") + symkry::version);
  app.require_subcommand(1);
  std::string preset_dir = SYMKRY_PRESET_DIR;
  app.add_option("--preset-dir", preset_dir, "directory holding <name>.cfg presets");

  RunOptions run_opts;
  auto* run_cmd = app.add_subcommand("run", "integrate one configuration (or every section of --config)");
  add_run_flags(run_cmd, run_opts);
  run_cmd->add_option("--config", run_opts.config_file, "key = value config file");
  run_cmd->add_option("--section", run_opts.section, "run only this section of the config file");

  RunOptions preset_opts;
  std::string preset_name;
  auto* preset_cmd = app.add_subcommand("preset", "run a named preset");
  preset_cmd->add_option("preset", preset_name, "preset name (see list-presets)")->required();
  add_run_flags(preset_cmd, preset_opts);
  preset_cmd->add_option("--section", preset_opts.section, "run only this section of the preset");

  auto* list_problems = app.add_subcommand("list-problems", "show problems and their parameters");
  auto* list_presets = app.add_subcommand("list-presets", "show available presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*list_problems) {
      for (const auto& info : symkry::problem_registry()) {
        std::cout << info.name << "  " << info.summary << '\n';
        for (const auto& p : info.params) {
          std::cout << "    " << p.name << " = " << symkry::detail::format_double(p.default_value) << "  "
                    << p.help << '\n';
        }
      }
      return 0;
    }
    if (*list_presets) {
      for (const auto& name : preset_names(preset_dir)) std::cout << name << '\n';
      return 0;
    }
    if (*run_cmd) {
      std::vector<symkry::ExperimentConfig> runs;
      if (!run_opts.config_file.empty()) {
        runs = select_section(symkry::load_config_file(run_opts.config_file), run_opts.section);
      } else {
        if (!run_opts.section.empty()) throw symkry::ConfigError("--section requires --config");
        runs.emplace_back();
      }
      for (auto& c : runs) apply_overrides(c, run_opts);
      const std::string stem = run_opts.config_file.empty() ? runs.front().name
                                                            : fs::path(run_opts.config_file).stem().string();
      assign_outputs(runs, run_opts, stem);
      return execute(std::move(runs), run_opts);
    }
    if (*preset_cmd) {
      const fs::path file = fs::path(preset_dir) / (preset_name + ".cfg");
      if (!fs::exists(file)) throw symkry::ConfigError("unknown preset '" + preset_name + "'");
      auto runs = select_section(symkry::load_config_file(file.string()), preset_opts.section);
      for (auto& c : runs) apply_overrides(c, preset_opts);
      assign_outputs(runs, preset_opts, preset_name);
      return execute(std::move(runs), preset_opts);
    }
  } catch (const symkry::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const symkry::MisuseError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const symkry::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_config;
  }
  return 0;
}
