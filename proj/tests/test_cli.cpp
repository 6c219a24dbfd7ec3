#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "doctest.h"
#include "scenario.hpp"

using namespace scp;
using namespace scp::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("scp_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string write(const std::string& name, const std::string& text) const {
    const fs::path p = path / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

const char* kSweep =
    "problem = tutorial\n"
    "variant = apcscp\n"
    "schedule.start = 1.2\n"
    "schedule.step = 0.25\n"
    "schedule.count = 10\n"
    "oracle = true\n";

}  // namespace

TEST_CASE("config text: comments, whitespace and errors") {
  const KeyValues kv = parse_key_values("# header\n a = 1 # trailing\n\nb.c=x y\n");
  CHECK(kv.values.at("a") == "1");
  CHECK(kv.values.at("b.c") == "x y");
  CHECK(kv.lines.at("b.c") == 4);
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 3\n"), ConfigError);
  CHECK_THROWS_AS(check_known_keys(parse_key_values("problem = tutorial\nsolver.tolerance = 1\n")),
                  ConfigError);
}

TEST_CASE("scenario: defaults and typed values") {
  const ScenarioConfig sc = scenario_from(parse_key_values(""));
  CHECK(sc.problem == "tutorial");
  CHECK(sc.variant == "apcscp");
  CHECK(sc.jacobian_name == "frozen");
  CHECK(sc.schedule == ScheduleKind::Linear);
  const auto xs = schedule_values(sc, 1);
  REQUIRE(xs.size() == 10);
  CHECK(xs.front()(0) == 1.2);
  CHECK(xs.back()(0) == doctest::Approx(3.45).epsilon(1e-15));

  const ScenarioConfig pc = scenario_from(parse_key_values("variant = pcscp\n"));
  CHECK(pc.jacobian_name == "exact");

  const ScenarioConfig c = scenario_from(parse_key_values("problem = cascade\n"));
  CHECK(c.schedule == ScheduleKind::ClosedLoop);
  CHECK(c.start == "steady");

  const ScenarioConfig l = scenario_from(
      parse_key_values("schedule = list\nschedule.values = 1.2, 1.3 ,1.5\n"));
  const auto lv = schedule_values(l, 1);
  REQUIRE(lv.size() == 3);
  CHECK(lv[1](0) == 1.3);
  CHECK_THROWS_AS(schedule_values(l, 2), ConfigError);
}

TEST_CASE("scenario: invalid values are configuration errors") {
  for (const char* text : {
           "variant = sqp\n",
           "jacobian = guess\n",
           "hessian = bfgs\n",
           "solver.tol = -1\n",
           "solver.max_iter = 1.5\n",
           "oracle = maybe\n",
           "schedule.start = 1.2;x\n",
           "schedule = closed_loop\n",
           "problem = cascade\nclosed_loop.disturbance = 1.5\n",
           "problem = cascade\nstart = solution\n",
           "hessian = gauss_newton\n",
           "variant = pcscp\njacobian = frozen\n",
           "schedule.start = 1.2;1.3\n",
       }) {
    CAPTURE(text);
    CHECK_THROWS_AS(scenario_from(parse_key_values(text)), ConfigError);
  }
  const ScenarioConfig empty = scenario_from(parse_key_values("schedule.count = 0\n"));
  CHECK_THROWS_AS(schedule_values(empty, 1), ConfigError);
  const ScenarioConfig none = scenario_from(parse_key_values("schedule = list\n"));
  CHECK_THROWS_AS(schedule_values(none, 1), ConfigError);
}

TEST_CASE("format_double: shortest round trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.2) == "1.2");
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(1e-300) == "1e-300");
  CHECK(format_vec(Vec{{1.0, -2.5}}) == "1;-2.5");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
}

TEST_CASE("cmd_track: tutorial sweep writes header plus one row per sample") {
  TempDir d;
  const std::string cfg = d.write("sweep.cfg", kSweep);
  REQUIRE(cmd_track(cfg, d.file("a.csv")) == 0);
  const std::string a = slurp(d.file("a.csv"));
  CHECK(count_lines(a) == 11);
  CHECK(a.rfind(std::string(kTraceHeader) + "\n", 0) == 0);
  CHECK(a.find("\n0,1.2,initial,0,") != std::string::npos);

  REQUIRE(cmd_track(cfg, d.file("b.csv")) == 0);
  CHECK(slurp(d.file("b.csv")) == a);
}

TEST_CASE("cmd_track: output key is relative to the config file") {
  TempDir d;
  const std::string cfg = d.write("rel.cfg", std::string(kSweep) + "output = out.csv\n");
  REQUIRE(cmd_track(cfg, std::nullopt) == 0);
  CHECK(fs::exists(d.file("out.csv")));
}

TEST_CASE("cmd_track: exit codes") {
  TempDir d;
  const std::string empty = d.write("empty.cfg", "schedule.count = 0\n");
  CHECK(cmd_track(empty, d.file("e.csv")) == 1);
  CHECK_FALSE(fs::exists(d.file("e.csv")));

  const std::string unknown = d.write("unknown.cfg", "problem = tutorial\nspeed = 3\n");
  CHECK(cmd_track(unknown, d.file("u.csv")) == 1);
  CHECK(cmd_track(d.file("missing.cfg"), d.file("m.csv")) == 1);

  const std::string low = d.write("low.cfg", "schedule.start = 1.0\n");
  CHECK(cmd_track(low, d.file("l.csv")) == 1);

  const std::string no_out = d.write("noout.cfg", kSweep);
  CHECK(cmd_track(no_out, std::nullopt) == 1);

  // An infeasible sample aborts the run; the partial trace is still written.
  const std::string bad = d.write("bad.cfg",
                                  "variant = pcscp\nschedule = list\n"
                                  "schedule.values = 1.2, 1.45, 1.7, 0.0, 1.2\n");
  CHECK(cmd_track(bad, d.file("b.csv")) == 2);
  CHECK(count_lines(slurp(d.file("b.csv"))) == 4);
}

TEST_CASE("cmd_solve: convergence and iteration cap") {
  TempDir d;
  const std::string ok = d.write("ok.cfg",
                                 "variant = pcscp\nxi = 1.45\nstart = perturbed\noracle = true\n");
  REQUIRE(cmd_solve(ok, d.file("ok.csv")) == 0);
  const std::string csv = slurp(d.file("ok.csv"));
  CHECK(csv.rfind(std::string(kSolveHeader) + "\n", 0) == 0);
  CHECK(count_lines(csv) >= 3);

  const std::string capped =
      d.write("cap.cfg", "variant = pcscp\nxi = 1.45\nstart = perturbed\nfascp.max_iter = 1\n");
  CHECK(cmd_solve(capped, d.file("cap.csv")) == 2);
  CHECK(count_lines(slurp(d.file("cap.csv"))) == 2);

  const std::string wrong_dim = d.write("dim.cfg", "xi = 1.45;2\n");
  CHECK(cmd_solve(wrong_dim, d.file("dim.csv")) == 1);
}

TEST_CASE("cmd_bench: rows in config order, independent of the thread count") {
  TempDir d;
  const std::string cfg = d.write("bench.cfg",
                                  "bench.scenarios = ap, pc, rt, bad\n"
                                  "schedule.count = 6\n"
                                  "oracle = true\n"
                                  "scenario.pc.variant = pcscp\n"
                                  "scenario.rt.variant = rtgn\n"
                                  "scenario.bad.variant = pcscp\n"
                                  "scenario.bad.schedule = list\n"
                                  "scenario.bad.schedule.values = 1.2, 0.0\n");
  CHECK(cmd_bench(cfg, d.file("one.csv"), 1) == 2);
  CHECK(cmd_bench(cfg, d.file("four.csv"), 4) == 2);
  const std::string one = slurp(d.file("one.csv"));
  CHECK(one == slurp(d.file("four.csv")));
  CHECK(count_lines(one) == 5);
  const auto ap = one.find("\nap,tutorial,apcscp,frozen,ok,6,");
  const auto pc = one.find("\npc,tutorial,pcscp,exact,ok,6,");
  const auto rt = one.find("\nrt,tutorial,rtgn,exact,ok,6,");
  const auto bad = one.find("\nbad,tutorial,pcscp,exact,aborted,1,");
  CHECK(ap != std::string::npos);
  CHECK(pc > ap);
  CHECK(rt > pc);
  CHECK(bad > rt);
  CHECK(bad != std::string::npos);

  const std::string typo = d.write("typo.cfg", "bench.scenarios = a\nscenario.b.variant = pcscp\n");
  CHECK(cmd_bench(typo, d.file("t.csv"), 1) == 1);
  const std::string none = d.write("none.cfg", "problem = tutorial\n");
  CHECK(cmd_bench(none, d.file("n.csv"), 1) == 1);
}
