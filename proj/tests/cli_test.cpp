#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

// Runs the CLI with stdout+stderr captured; paths come from the build system.
CommandResult run_cli(const std::string& args) {
  const fs::path tmp = fs::temp_directory_path() / "safl_cli_out.txt";
  const std::string cmd = std::string(SAFL_CLI_PATH) + " " + args + " > " + tmp.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CommandResult res;
  res.exit_code = WEXITSTATUS(raw);
  std::ifstream in(tmp);
  std::stringstream ss;
  ss << in.rdbuf();
  res.output = ss.str();
  fs::remove(tmp);
  return res;
}

std::string golden(const std::string& name) {
  const fs::path p = fs::path(SAFL_GOLDEN_DIR) / name;
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<missing golden file: " + p.string() + ">";
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Cli, HelpGoldenFiles) {
  EXPECT_EQ(run_cli("--help").output, golden("help.txt"));
  EXPECT_EQ(run_cli("run --help").output, golden("help_run.txt"));
  EXPECT_EQ(run_cli("sweep --help").output, golden("help_sweep.txt"));
  EXPECT_EQ(run_cli("impossibility --help").output, golden("help_impossibility.txt"));
  EXPECT_EQ(run_cli("pac --help").output, golden("help_pac.txt"));
  EXPECT_EQ(run_cli("report --help").output, golden("help_report.txt"));
}

TEST(Cli, MissingConfigNamesPathAndExits2) {
  const auto res = run_cli("run --config missing.cfg");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("missing.cfg"), std::string::npos);
}

TEST(Cli, BadFlagExits2WithUsage) {
  const auto res = run_cli("run --no-such-flag");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownOverrideKeyExits2) {
  const fs::path dir = fs::temp_directory_path() / "safl_cli_cfg";
  fs::create_directories(dir);
  std::ofstream(dir / "c.cfg") << "[scenario]\nname = positively-related\n";
  const auto res =
      run_cli("run --config " + (dir / "c.cfg").string() + " --set instance.bogus=1 --out " +
              (dir / "out").string());
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("bogus"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ImpossibilitySubcommand) {
  const auto res = run_cli("impossibility --omega 0.5 --trials 2000 --seed 7");
  EXPECT_EQ(res.exit_code, 0);
  EXPECT_NE(res.output.find("failure rate"), std::string::npos);
  EXPECT_NE(res.output.find("Wilson"), std::string::npos);
}

TEST(Cli, PacSubcommand) {
  const auto res = run_cli("pac --grid 100 1000 10000 100000 --trials 60 --seed 3");
  EXPECT_EQ(res.exit_code, 0);
  EXPECT_NE(res.output.find("log-log slope"), std::string::npos);
}

TEST(Cli, RunRejectsMultiCellConfigs) {
  const fs::path dir = fs::temp_directory_path() / "safl_cli_multi";
  fs::create_directories(dir);
  std::ofstream(dir / "c.cfg") << "[scenario]\nname = impossibility\n[instance]\nomega = 0.5\n"
                               << "n = 20, 200\ntrials = 1000\n";
  const auto res = run_cli("run --config " + (dir / "c.cfg").string() + " --out " +
                           (dir / "out").string());
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("sweep"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, SweepThenReportRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "safl_cli_sweep";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "c.cfg") << "[scenario]\nname = impossibility\n[instance]\nomega = 0.5\n"
                               << "n = 20\ntrials = 1500\n[run]\nseeds = 0\n";
  const auto sweep = run_cli("sweep --config " + (dir / "c.cfg").string() + " --out " +
                             (dir / "out").string());
  EXPECT_EQ(sweep.exit_code, 0) << sweep.output;
  const auto report = run_cli("report " + (dir / "out").string());
  EXPECT_EQ(report.exit_code, 0) << report.output;
  EXPECT_NE(report.output.find("PASS"), std::string::npos);
  EXPECT_NE(report.output.find("all checks passed"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ReportMissingDirExits3) {
  const auto res = run_cli("report /nonexistent/safl_out");
  EXPECT_EQ(res.exit_code, 3);
}
