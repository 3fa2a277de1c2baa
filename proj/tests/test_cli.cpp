#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mjnn/io.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(MJNN_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {-1, ""};
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "mjnn_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::string kFixture = std::string(MJNN_FIXTURE_DIR) + "/paper_sec4.json";
const std::string kGains = std::string(MJNN_FIXTURE_DIR) + "/reference_gains.json";

}  // namespace

TEST(Cli, ValidateFixture) {
  const auto r = run("validate " + kFixture);
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("valid: 4 modes, 2 nodes"), std::string::npos);
  EXPECT_NE(r.output.find("warning: sector"), std::string::npos);
}

TEST(Cli, ValidateReportsRowSum) {
  auto j = mjnn::io::read_json(kFixture);
  j["transitions"][1][1] = 0.5;
  const auto path = scratch_dir("rowsum") / "model.json";
  mjnn::io::write_text(path, j.dump());
  const auto r = run("validate " + path.string());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.output.find("RowSumViolation"), std::string::npos) << r.output;
}

TEST(Cli, MissingFileIsIoError) {
  EXPECT_EQ(run("validate /nonexistent/model.json").exit_code, 2);
}

TEST(Cli, BadFlagsFail) {
  EXPECT_EQ(run("synthesize " + kFixture + " --gamma 1 --gamma-bracket 0.1 1").exit_code, 1);
  EXPECT_EQ(run("--help").exit_code, 0);
}

TEST(Cli, SimulateIsDeterministic) {
  const auto a = scratch_dir("sim_a");
  const auto b = scratch_dir("sim_b");
  const std::string common = "simulate " + kFixture + " --gains " + kGains + " --runs 5 --horizon 60 --seed 7 --out ";
  ASSERT_EQ(run(common + a.string()).exit_code, 0);
  ASSERT_EQ(run(common + b.string()).exit_code, 0);
  for (const char* name : {"trajectory.csv", "ensemble.csv", "metrics.json"}) {
    const auto sa = slurp(a / name);
    EXPECT_FALSE(sa.empty()) << name;
    EXPECT_EQ(sa, slurp(b / name)) << name;
  }
  const auto metrics = mjnn::io::read_json(a / "metrics.json");
  EXPECT_TRUE(metrics.contains("ratio"));
  EXPECT_EQ(mjnn::io::read_json(a / "config.json").at("seed").get<int>(), 7);
}

TEST(Cli, ZeroDisturbanceRatioNotApplicable) {
  const auto out = scratch_dir("sim_zero");
  const auto r = run("simulate " + kFixture + " --gains " + kGains + " --runs 2 --horizon 10 --zero-disturbance --out " +
                     out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(mjnn::io::read_json(out / "metrics.json").at("ratio"), "NotApplicable");
}

TEST(Cli, SynthesizeWritesArtifacts) {
  const auto out = scratch_dir("syn");
  const auto r = run("synthesize " + kFixture + " --gamma 1 --out " + out.string());
  ASSERT_EQ(r.exit_code, 0) << r.output;
  EXPECT_EQ(slurp(out / "ccl_trace.csv").rfind("iter,objective,residual,coupling,verified\n", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "gains.json"));
  EXPECT_TRUE(fs::exists(out / "certificate.json"));
  EXPECT_EQ(mjnn::io::read_json(out / "status.json").at("status"), "Converged");
  const auto v = run("verify " + kFixture + " --gains " + (out / "gains.json").string() + " --gamma 1 --out " +
                     (out / "verify").string());
  EXPECT_EQ(v.exit_code, 0) << v.output;
}
