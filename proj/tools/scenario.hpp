#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scp/benchmarks.hpp"
#include "scp/tracking.hpp"

namespace scp::cli {

/// Flat `key = value` text with dotted keys and `#` comments.
struct KeyValues {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;
  std::string base_dir;  // for relative paths inside the file
};

KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues load_key_values(const std::string& path);

enum class ScheduleKind { Linear, List, File, ClosedLoop };

struct ScenarioConfig {
  std::string name;
  std::string problem = "tutorial";
  CascadeConfig cascade;
  std::string variant = "apcscp";  // apcscp | pcscp | rtgn | fascp
  std::string jacobian_name = "exact";
  JacobianStrategy jacobian;
  HessianStrategy hessian;
  bool gauss_newton = false;  // cascade only; resolved by build_instance
  SolverOptions solver;
  bool refresh_on_failure = false;

  ScheduleKind schedule = ScheduleKind::Linear;
  Vec schedule_start;
  Vec schedule_step;
  int schedule_count = 0;
  std::vector<Vec> schedule_values;
  std::string schedule_path;
  int closed_loop_steps = 30;
  double closed_loop_disturbance = 0.05;

  bool oracle = false;
  double fascp_eps = 1e-10;
  int fascp_max_iter = 100;

  // solve only
  Vec xi;
  std::string start = "solution";  // solution | perturbed | steady
  double perturbation = 0.1;

  std::string output;
  std::uint32_t seed = 42;
};

/// Reads one scenario from keys under `prefix` falling back to the unprefixed
/// defaults. Unknown keys raise ConfigError.
ScenarioConfig scenario_from(const KeyValues& kv, const std::string& prefix = "");

/// Checks every key of a single-scenario file.
void check_known_keys(const KeyValues& kv);

/// Built benchmark with its starting point data.
struct Instance {
  ParametricNLP problem;
  std::optional<CascadeBenchmark> cascade;
  std::optional<HessianStrategy> hessian;  // overrides the scenario's
};

Instance build_instance(const ScenarioConfig& sc);
TrackerConfig tracker_config(const ScenarioConfig& sc);

struct TrackOutcome {
  TrackingTrace trace;
  std::optional<double> state_ratio;  // closed loop: |w_end - w_s| / |w_0 - w_s|
};

/// Parameter list for open-loop schedules. ConfigError when empty.
std::vector<Vec> schedule_values(const ScenarioConfig& sc, Eigen::Index p);

TrackOutcome run_track(const ScenarioConfig& sc);

struct TrackSummary {
  std::size_t samples = 0;
  std::optional<double> max_oracle_error;
  std::optional<double> mean_oracle_error;
  double max_violation = 0.0;
  std::int64_t solver_iters = 0;
  std::int64_t jacobian_evals = 0;
};

TrackSummary summarize(const TrackingTrace& trace);

/// Shortest round-trip decimal.
std::string format_double(double v);
std::string format_vec(const Vec& v);  // ';'-joined

std::string trace_csv(const TrackingTrace& trace);
std::string fascp_csv(const FascpResult& r);

inline constexpr const char* kTraceHeader =
    "k,xi,step_status,solver_iters,kkt_stationarity,kkt_equality,region_violation,jac_error,"
    "oracle_error";
inline constexpr const char* kSolveHeader = "j,step_inf_norm,kkt_total,error_vs_oracle";
inline constexpr const char* kBenchHeader =
    "scenario,problem,variant,jacobian,status,samples,max_oracle_error,mean_oracle_error,"
    "max_violation,solver_iters,jacobian_evals,state_ratio";

/// Exit codes: 0 success, 1 configuration error, 2 runtime failure.
int cmd_track(const std::string& config_path, const std::optional<std::string>& out);
int cmd_solve(const std::string& config_path, const std::optional<std::string>& out);
int cmd_bench(const std::string& config_path, const std::optional<std::string>& out,
              int threads);

}  // namespace scp::cli
