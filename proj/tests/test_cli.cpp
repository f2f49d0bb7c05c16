#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "oracles.hpp"
#include "spregret/json_io.hpp"
#include "spregret/model.hpp"

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  fs::path dir;

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("spregret_cli_") + info->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  int run(const std::string& args, const std::string& env = "") const {
    const std::string cmd = env + (env.empty() ? "" : " ") + "'" SPREGRET_CLI_PATH "' " + args +
                            " > '" + path("stdout.txt") + "' 2> '" + path("stderr.txt") + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string slurp(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string model(int N, int T) {
    const auto out = path("model_" + std::to_string(N) + "_" + std::to_string(T) + ".json");
    EXPECT_EQ(run("gen-model --masses " + std::to_string(N) + " --horizon " + std::to_string(T) +
                  " -o " + out),
              0);
    return out;
  }
};

TEST_F(Cli, HelpExitsCleanly) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(slurp(path("stdout.txt")).find("synth"), std::string::npos);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("no-such-command"), 2);
}

TEST_F(Cli, GenModelWritesTheChain) {
  ASSERT_EQ(run("gen-model --masses 10 --ts 0.5 --horizon 30 -o " + path("m.json")), 0);
  const auto sys = spregret::HorizonSystem::from_json(spregret::io::read_json_file(path("m.json")));
  EXPECT_EQ(sys.state_dim(), 20);
  EXPECT_EQ(sys.input_dim(), 10);
  EXPECT_EQ(sys.horizon(), 30);
  const auto ref = spregret::spring_mass_chain(10, 0.5, 0.5, 1.0, 0.5, 30);
  EXPECT_EQ(sys.A(0), ref.A(0));
  EXPECT_EQ(sys.B(0), ref.B(0));
  ASSERT_EQ(run("gen-model --masses 10 --ts 0.5 --horizon 30 -o " + path("m2.json")), 0);
  EXPECT_EQ(slurp(path("m.json")), slurp(path("m2.json")));
}

TEST_F(Cli, GenModelRejectsBadParameters) {
  EXPECT_EQ(run("gen-model --masses 1 -o " + path("m.json")), 2);
  EXPECT_EQ(run("gen-model --ts 0 -o " + path("m.json")), 2);
  EXPECT_EQ(run("gen-model --discretization tustin -o " + path("m.json")), 2);
}

TEST_F(Cli, GenPatternFormats) {
  const auto m = model(3, 3);
  ASSERT_EQ(run("gen-pattern --model " + m + " --kind chain --format text -o " + path("s.txt")), 0);
  const auto S = spregret::SparsityPattern::from_text(slurp(path("s.txt")));
  EXPECT_EQ(S, spregret::chain_sparsity(3, 3));
  ASSERT_EQ(run("gen-pattern --model " + m + " --kind nearest-qi -o " + path("q.json")), 0);
  const auto Q = spregret::SparsityPattern::from_json(spregret::io::read_json_file(path("q.json")));
  EXPECT_TRUE(S.leq(Q));
}

TEST_F(Cli, SynthMissingModelIsAnInputError) {
  EXPECT_EQ(run("synth --model " + path("absent.json") + " -o " + path("k.json")), 2);
}

TEST_F(Cli, SynthSpregretIsWellPosed) {
  const auto m = model(3, 6);
  ASSERT_EQ(run("synth --model " + m + " --method spregret -o " + path("k.json")), 0);
  const auto rep = spregret::io::read_json_file(path("k.json.report.json"));
  EXPECT_GE(rep.at("pipeline").at("lambda_star").get<double>(), -1e-6);
  const auto ctrl = spregret::io::read_json_file(path("k.json"));
  EXPECT_EQ(ctrl.at("provenance").at("config").at("method"), "spregret");
}

TEST_F(Cli, SynthCentralizedH2MatchesRiccati) {
  const auto m = model(2, 5);
  ASSERT_EQ(run("synth --model " + m + " --method h2 --pattern all-ones -o " + path("k.json") +
                " --report " + path("r.json")),
            0);
  const double v = spregret::io::read_json_file(path("r.json")).at("value").get<double>();
  const auto sys = spregret::spring_mass_chain(2, 0.5, 0.5, 1.0, 0.5, 5);
  const double ref = oracle::riccati_h2(sys.A(0), sys.B(0), 5);
  EXPECT_NEAR(v, ref, 1e-6 * ref);
}

TEST_F(Cli, SynthExitCodes) {
  const auto m = model(3, 3);
  ASSERT_EQ(run("gen-pattern --model " + m + " --kind chain -o " + path("s.json")), 0);
  EXPECT_EQ(run("synth --model " + m + " --method spregret --oracle-pattern " + path("s.json") +
                " -o " + path("k.json")),
            3);
  EXPECT_NE(slurp(path("stderr.txt")).find("oracle"), std::string::npos);
  EXPECT_EQ(run("synth --model " + m + " --method hinf --max-newton 1 -o " + path("k.json")), 4);
  EXPECT_EQ(run("synth --model " + m + " --method lqr -o " + path("k.json")), 2);
}

TEST_F(Cli, AffectedMassesExperimentIsDeterministic) {
  const std::string args =
      "experiment affected-masses --masses 3 --horizon 4 --draws 30 --iterations 3 --seed 5 -o ";
  ASSERT_EQ(run(args + path("a"), "SPREGRET_THREADS=1"), 0);
  ASSERT_EQ(run(args + path("b"), "SPREGRET_THREADS=3"), 0);
  const auto csv = slurp(path("a.csv"));
  EXPECT_EQ(csv, slurp(path("b.csv")));
  EXPECT_EQ(slurp(path("a.json")), slurp(path("b.json")));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "sweep_point,controller,win_mean,win_ci_lo,win_ci_hi,mean_cost");
  // 3 sweep points x 4 controllers plus the header.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  EXPECT_NE(slurp(path("a.svg")).find("<svg"), std::string::npos);
  const auto j = spregret::io::read_json_file(path("a.json"));
  EXPECT_EQ(j.at("config").at("seed"), 5);
}

TEST_F(Cli, MassCountExperimentSweepsChains) {
  ASSERT_EQ(run("experiment mass-count --from 3 --to 6 --horizon 3 --draws 10 --iterations 2 -o " +
                path("mc")),
            0);
  const auto j = spregret::io::read_json_file(path("mc.json"));
  ASSERT_EQ(j.at("results").size(), 4u);
  EXPECT_EQ(j.at("results")[0].at("sweep_point"), 3);
  EXPECT_EQ(j.at("results")[3].at("sweep_point"), 6);
  EXPECT_EQ(j.at("results")[0].at("controllers").size(), 3u);
}

TEST_F(Cli, ExperimentRejectsBadConfiguration) {
  EXPECT_EQ(run("experiment affected-masses --masses 3 --horizon 3 --draws 0 -o " + path("x")), 2);
  EXPECT_EQ(run("experiment affected-masses --masses 3 --horizon 3 --iterations 1 -o " + path("x")),
            2);
  EXPECT_EQ(run("experiment mass-count --from 5 --to 4 --horizon 3 -o " + path("x")), 2);
  EXPECT_FALSE(fs::exists(path("x.csv")));
}

}  // namespace
