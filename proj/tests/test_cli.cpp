#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("sfpe-cli-" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path config(const std::string& body, const std::string& name = "run.ini") {
    const fs::path p = dir_ / name;
    std::ofstream(p) << "schema_version = 1\nseed = 5\n" << body << "[output]\ndir = " << (dir_ / "out").string()
                     << "\nverbosity = 0\n";
    return p;
  }

  Result run(const std::string& args) {
    const std::string cmd = std::string(SFPE_CLI_PATH) + " " + args + " > " + (dir_ / "stdout").string() + " 2> " +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(dir_ / "stdout");
    r.err = slurp(dir_ / "stderr");
    return r;
  }

  fs::path dir_;
};

const char* kHeat =
    "[problem]\nfamily = brownian\nd = 1\nL = 1\ng = norm2\n"
    "[lyapunov]\np = 2\n"
    "[solver]\nK = 4\nknots = 9\nlo = -2\nhi = 2\npaths = 500\nsteps = 10\n";

const char* kDeterministic = "[problem]\nd = 1\nL = 1\nmu = 0\nsigma = 0\nf = v\ng = 1\n";

}  // namespace

TEST_F(Cli, Version) {
  const Result r = run("version");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("sfpe 0.1.0", 0), 0u);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("solve").code, 0);
  EXPECT_NE(run("solve -c " + (dir_ / "missing.ini").string()).code, 0);
  EXPECT_NE(run("frobnicate").code, 0);
}

TEST_F(Cli, ConfigErrorsExitWithOne) {
  const Result r = run("solve -c " + config("[problem]\nfamily = brownian\nL = 1\ncolour = blue\n").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error: unknown key 'problem.colour'"), std::string::npos) << r.err;
}

TEST_F(Cli, SolveWritesReproducibleOutputs) {
  const auto cfg = config(kHeat).string();
  const Result r = run("solve -c " + cfg + " --threads 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("converged after 2 iterations"), std::string::npos) << r.out;
  const std::string csv = slurp(dir_ / "out" / "solution.csv");
  EXPECT_EQ(csv.rfind("t,x1,u\n", 0), 0u);
  const auto report = nlohmann::json::parse(slurp(dir_ / "out" / "report.json"));
  EXPECT_TRUE(report["converged"].get<bool>());
  EXPECT_FALSE(report["residual"].is_null());

  ASSERT_EQ(run("solve -c " + cfg + " --threads 3").code, 0);
  EXPECT_EQ(slurp(dir_ / "out" / "solution.csv"), csv);
  ASSERT_EQ(run("solve -c " + cfg + " --seed 6").code, 0);
  EXPECT_NE(slurp(dir_ / "out" / "solution.csv"), csv);
}

TEST_F(Cli, SolveOutOverride) {
  const fs::path other = dir_ / "elsewhere";
  ASSERT_EQ(run("solve -c " + config(kHeat).string() + " --out " + other.string()).code, 0);
  EXPECT_TRUE(fs::exists(other / "solution.csv"));
  EXPECT_TRUE(fs::exists(other / "report.json"));
}

TEST_F(Cli, SolveWithoutConvergenceExitsWithTwo) {
  const std::string body = std::string(kDeterministic) +
                           "[lyapunov]\nkind = expression\nV = 1\n"
                           "[solver]\nK = 4\nknots = 2\nlo = -1\nhi = 1\npaths = 1\nsteps = 10\ntol = 1e-14\n"
                           "max_iter = 2\n";
  const Result r = run("solve -c " + config(body).string());
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_NE(r.out.find("not converged"), std::string::npos);
}

TEST_F(Cli, EstimateDeterministicIterates) {
  const auto cfg = config(std::string(kDeterministic) + "[estimate]\nt = 0\nx = 0\ndepth = 4\nsteps = 1\n").string();
  Result r = run("estimate -c " + cfg);
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["estimate"].get<double>(), 8.0 / 3.0, 1e-12);
  EXPECT_EQ(j["depth"], 4);
  r = run("estimate -c " + cfg + " --depth 5 --seed 99");
  ASSERT_EQ(r.code, 0) << r.err;
  j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["estimate"].get<double>(), 65.0 / 24.0, 1e-12);
}

TEST_F(Cli, EstimateOverridesAndWorkCap) {
  const auto cfg = config("[problem]\nfamily = brownian\nd = 2\nL = 1\nf = v\ng = norm2\n"
                          "[estimate]\nmax_work = 1000\n")
                       .string();
  Result r = run("estimate -c " + cfg + " --t 0.5 --x 0.1,0.2 --depth 1 --widths 10,1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out).contains("work"));
  r = run("estimate -c " + cfg + " --depth 3 --widths 100,100");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("exceeds"), std::string::npos) << r.err;
}

TEST_F(Cli, CheckLyapunovPassAndFail) {
  const std::string problem = "[problem]\nfamily = ou\nd = 1\nL = 1\n";
  const std::string check = "[check]\npoints = 500\npaths = 2000\nsteps = 20\n";
  Result r = run("check-lyapunov -c " + config(problem + "[lyapunov]\np = 2\n" + check).string());
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_TRUE(nlohmann::json::parse(r.out)["pass"].get<bool>());

  r = run("check-lyapunov -c " + config(problem + "[lyapunov]\nkind = expression\nV = 1 + norm2\nrho = 0\n" + check).string());
  EXPECT_EQ(r.code, 3);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["generator"]["violation"].get<bool>());
  EXPECT_NE(r.err.find("FAIL"), std::string::npos);
}

TEST_F(Cli, VerifyContractionTable) {
  const std::string body = "[problem]\nfamily = brownian\nd = 1\nL = 1\nf = v\ng = norm2\n"
                           "[lyapunov]\np = 2\n"
                           "[solver]\nK = 10\nknots = 9\nlo = -3\nhi = 3\npaths = 100\nsteps = 20\n";
  const Result r = run("verify-contraction -c " + config(body).string() + " --lambda-sweep 2,5");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("lambda,measured,bound\n2,", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("\n5,"), std::string::npos);
  EXPECT_EQ(slurp(dir_ / "out" / "contraction.csv"), r.out);
}

TEST_F(Cli, CoupleTest) {
  const std::string same = "[problem]\nfamily = truncated-ou\nd = 1\nL = 1\nradius = 3\n"
                           "[couple]\nx0 = 0\npaths = 50\nsteps = 100\nradius = 2\nfreeze_x0 = 4\n";
  Result r = run("couple-test -c " + config(same).string());
  EXPECT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["coupling"]["exact"].get<bool>());
  EXPECT_TRUE(j["at_rest"]["exact"].get<bool>());

  const std::string different = "[problem]\nd = 1\nL = 1\nmu = 0\nsigma = 1\n"
                                "[problem2]\nd = 1\nL = 1\nmu = 0.5\nsigma = 1\n"
                                "[couple]\npaths = 10\nsteps = 10\n";
  r = run("couple-test -c " + config(different).string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("on path 0 at step 1"), std::string::npos) << r.err;
}
