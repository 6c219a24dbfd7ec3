#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "scenario.hpp"

namespace {

int thread_count() {
  const char* env = std::getenv("SCP_TRACK_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    std::size_t used = 0;
    const int n = std::stoi(env, &used);
    if (used == std::string(env).size() && n >= 1) return n;
  } catch (const std::exception&) {
  }
  std::cerr << "scp-track: ignoring invalid SCP_TRACK_THREADS='" << env << "'\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric SCP tracking driver", "scp-track"};
  app.require_subcommand(1);

  std::string config;
  std::string out;
  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("config", config, "Scenario file")->required();
    sub->add_option("--out", out, "Output CSV path (overrides 'output')");
    return sub;
  };
  CLI::App* track = add("track", "Track a parameter schedule and write a per-sample CSV");
  CLI::App* solve = add("solve", "Run full SCP at one parameter value");
  CLI::App* bench = add("bench", "Run the listed scenarios and write a summary CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::optional<std::string> out_opt = out.empty() ? std::nullopt : std::optional(out);
  try {
    if (track->parsed()) return scp::cli::cmd_track(config, out_opt);
    if (solve->parsed()) return scp::cli::cmd_solve(config, out_opt);
    if (bench->parsed()) return scp::cli::cmd_bench(config, out_opt, thread_count());
  } catch (const std::exception& e) {
    std::cerr << "scp-track: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
