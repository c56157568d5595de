#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "prsrg/config.hpp"
#include "prsrg/experiment.hpp"

using namespace prsrg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("prsrg_harness_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name), std::ios::binary) << text;
    return path(name);
  }

  int cli(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" + PRSRG_CLI_PATH + "\" " + args +
                            " > \"" + path("stdout.txt").string() + "\" 2> \"" +
                            path("stderr.txt").string() + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  fs::path dir_;
};

std::string small_config(const std::string& extra = "") {
  return "[experiment]\nmanifold = sphere:20\nseed = 5\nbudget = 2000000\n\n"
         "[problem]\nkind = rayleigh\nn = 200\nstart = v2\n" + extra;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

}  // namespace

TEST(Config, ErrorsCarryLineNumbers) {
  const std::pair<const char*, std::size_t> cases[] = {
      {"[experiment]\nseed = 1\nseed = 2\n", 3},
      {"key = 1\n", 1},
      {"[experiment]\n\n# c\nbogus = 3\n", 4},
      {"[solver]\nepsilon = abc\n", 2},
      {"[experiment]\n[nope]\n", 2},
      {"[problem]\nkind = cube\n", 2},
      {"[solver]\ndelta = -1\n", 2},
      {"[experiment\n", 1},
      {"[experiment]\nno equals sign\n", 2},
  };
  for (const auto& [text, line] : cases) {
    try {
      ExperimentConfig::parse(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.line(), line) << text << " -> " << e.what();
      EXPECT_NE(std::string(e.what()).find("line " + std::to_string(line)), std::string::npos);
    }
  }
}

TEST(Config, RoundTrip) {
  ExperimentConfig c = ExperimentConfig::parse(small_config("spectrum = 3,2,1\n"
                                                            "[solver]\neta = 0.25\nm = 7\n"
                                                            "[sweep]\nn = 10, 20\n"));
  EXPECT_EQ(c.problem.spectrum, "3,2,1");
  EXPECT_EQ(*c.solver.m, 7u);
  EXPECT_EQ(c.sweep.n, (std::vector<std::uint64_t>{10, 20}));
  EXPECT_EQ(ExperimentConfig::parse(c.to_string()), c);
  const ExperimentConfig defaults;
  EXPECT_EQ(ExperimentConfig::parse(defaults.to_string()), defaults);
}

TEST(Cli, RunWritesTraceAndReport) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  ASSERT_EQ(w.cli("run -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 0)
      << slurp(w.path("stderr.txt"));
  const std::string trace = slurp(w.path("o/trace.csv"));
  EXPECT_EQ(trace.substr(0, trace.find('\n')), kTraceHeader);
  const auto rep = read_json(w.path("o/report.json"));
  EXPECT_FALSE(rep["certified"].is_null());
  EXPECT_LE(rep["queries_used"].get<std::uint64_t>(), 2000000u);
}

TEST(Cli, ZeroBudgetUsesNoQueries) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  ASSERT_EQ(w.cli("run -c \"" + cfg.string() + "\" --budget 0 --out \"" + w.path("o").string() + "\""), 0);
  const auto rep = read_json(w.path("o/report.json"));
  EXPECT_EQ(rep["queries_used"].get<std::uint64_t>(), 0u);
  EXPECT_TRUE(rep["certified"].is_null());
}

TEST(Cli, RepeatedRunsAreByteIdentical) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  const std::string base = "run -c \"" + cfg.string() + "\" --out ";
  ASSERT_EQ(w.cli(base + "\"" + w.path("o1").string() + "\""), 0);
  ASSERT_EQ(w.cli(base + "\"" + w.path("o2").string() + "\""), 0);
  ASSERT_EQ(w.cli(base + "\"" + w.path("o3").string() + "\"", "PRSRG_THREADS=1"), 0);
  ASSERT_EQ(w.cli(base + "\"" + w.path("o4").string() + "\"", "PRSRG_THREADS=4"), 0);
  const std::string t1 = slurp(w.path("o1/trace.csv"));
  ASSERT_FALSE(t1.empty());
  for (const char* o : {"o2", "o3", "o4"}) {
    EXPECT_EQ(slurp(w.path(std::string(o) + "/trace.csv")), t1) << o;
    EXPECT_EQ(slurp(w.path(std::string(o) + "/report.json")), slurp(w.path("o1/report.json"))) << o;
  }
}

TEST(Cli, SeedOverrideChangesRun) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  const std::string base = "run -c \"" + cfg.string() + "\" --out ";
  ASSERT_EQ(w.cli(base + "\"" + w.path("o1").string() + "\" --seed 1"), 0);
  ASSERT_EQ(w.cli(base + "\"" + w.path("o2").string() + "\" --seed 2"), 0);
  EXPECT_NE(slurp(w.path("o1/trace.csv")), slurp(w.path("o2/trace.csv")));
}

TEST(Cli, ExitCodes) {
  Workspace w;
  EXPECT_EQ(w.cli("run"), 2);
  EXPECT_EQ(w.cli("run -c \"" + w.path("missing.cfg").string() + "\""), 2);
  const auto bad = w.write("bad.cfg", "[experiment]\nseed = x\n");
  EXPECT_EQ(w.cli("run -c \"" + bad.string() + "\""), 2);
  EXPECT_NE(slurp(w.path("stderr.txt")).find("line 2"), std::string::npos);
  const auto at_min = w.write("min.cfg",
                              "[experiment]\nmanifold = sphere:20\n[problem]\nkind = rayleigh\nn = 200\n"
                              "start = v1\n[couple]\ntrials = 3\n");
  EXPECT_EQ(w.cli("couple -c \"" + at_min.string() + "\" --out \"" + w.path("o").string() + "\""), 3);
  EXPECT_EQ(w.cli("frobnicate"), 2);
}

TEST(Cli, CertifyPoints) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  std::string e1 = "1", e2 = "0";
  for (int i = 1; i < 20; ++i) {
    e1 += ",0";
    e2 += i == 1 ? ",1" : ",0";
  }
  const auto p1 = w.write("v1.csv", e1 + "\n");
  const auto p2 = w.write("v2.csv", e2 + "\n");
  const std::string base = "certify -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\" -p ";
  ASSERT_EQ(w.cli(base + "\"" + p1.string() + "\""), 0) << slurp(w.path("stderr.txt"));
  EXPECT_TRUE(read_json(w.path("o/certification.json"))["passed"].get<bool>());
  ASSERT_EQ(w.cli(base + "\"" + p2.string() + "\""), 0);
  const auto c2 = read_json(w.path("o/certification.json"));
  EXPECT_FALSE(c2["passed"].get<bool>());
  EXPECT_NEAR(c2["lambda_min_estimate"].get<double>(), -2.0, 0.05);
  const auto wrong_dim = w.write("w.csv", "1,0,0\n");
  EXPECT_EQ(w.cli(base + "\"" + wrong_dim.string() + "\""), 2);
  const auto off = w.write("off.csv", "2" + e1.substr(1) + "\n");
  EXPECT_EQ(w.cli(base + "\"" + off.string() + "\""), 2);
}

TEST(Cli, CoupleOnQuadraticSaddle) {
  Workspace w;
  const auto cfg = w.write("q.cfg",
                           "[experiment]\nmanifold = euclidean:10\nseed = 2\n"
                           "[problem]\nkind = quadratic\nn = 16\ngamma = 0.5\nstart = origin\n"
                           "[solver]\nrho = 1\nD = 1\nT_max = 400\n"
                           "[couple]\ntrials = 6\n");
  ASSERT_EQ(w.cli("couple -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 0)
      << slurp(w.path("stderr.txt"));
  const auto j = read_json(w.path("o/couple.json"));
  EXPECT_EQ(j["trials"].get<int>(), 6);
  EXPECT_NEAR(j["lambda_min"].get<double>(), -0.5, 1e-6);
  EXPECT_GE(j["deviation_frequency"].get<double>(), 0.8);
}

TEST(Cli, QuadraticWithoutRhoIsRejected) {
  Workspace w;
  const auto cfg = w.write("q.cfg",
                           "[experiment]\nmanifold = euclidean:10\n"
                           "[problem]\nkind = quadratic\nn = 16\nstart = origin\n");
  EXPECT_EQ(w.cli("run -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 2);
  EXPECT_NE(slurp(w.path("stderr.txt")).find("rho"), std::string::npos);
}

TEST(Cli, MalformedStartIsRejected) {
  Workspace w;
  for (const char* start : {"v2 # saddle", "v0", "vx", "v1000"}) {
    const auto cfg = w.write("a.cfg", "[experiment]\nmanifold = sphere:20\n[problem]\nn = 200\nstart = " +
                                          std::string(start) + "\n");
    EXPECT_EQ(w.cli("run -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 2) << start;
  }
}

TEST(Cli, CoupleWithZeroTrials) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config("[couple]\ntrials = 0\n"));
  ASSERT_EQ(w.cli("couple -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 0)
      << slurp(w.path("stderr.txt"));
  const auto j = read_json(w.path("o/couple.json"));
  EXPECT_EQ(j["trials"].get<int>(), 0);
  EXPECT_TRUE(j["deviation_frequency"].is_null());
}

TEST(Cli, SweepWritesEveryCell) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config("[sweep]\nn = 64,128,256\nseeds = 10\n"));
  ASSERT_EQ(w.cli("sweep -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\""), 0)
      << slurp(w.path("stderr.txt"));
  int reports = 0;
  for (const auto& e : fs::directory_iterator(w.path("o")))
    reports += e.path().filename().string().rfind("report_", 0) == 0;
  EXPECT_EQ(reports, 30);
  std::ifstream s(w.path("o/summary.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(s, line)) ++rows;
  EXPECT_EQ(rows, 30);
}

TEST(Cli, BenchRunsEveryAlgorithm) {
  Workspace w;
  const auto cfg = w.write("a.cfg", small_config());
  ASSERT_EQ(w.cli("bench -c \"" + cfg.string() + "\" --out \"" + w.path("o").string() + "\" --budget 200000"), 0)
      << slurp(w.path("stderr.txt"));
  for (const char* a : {"prsrg", "prgd", "rsgd", "rsrg_unperturbed"}) {
    EXPECT_TRUE(fs::exists(w.path(std::string("o/report_") + a + ".json"))) << a;
    const std::string t = slurp(w.path(std::string("o/trace_") + a + ".csv"));
    EXPECT_EQ(t.substr(0, t.find('\n')), kTraceHeader) << a;
  }
}
