// Batch front end: models, patterns, synthesis and win-percentage experiments.
//
// Exit codes: 0 ok, 2 invalid input, 3 information-structure (QI) failure,
// 4 solver failure or failed solver audit.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <iostream>
#include <string>
#include <vector>

#include "spregret/spregret.hpp"

namespace sr = spregret;

namespace {

constexpr const char* kThreadsEnv = "SPREGRET_THREADS";

struct PlantArgs {
  int masses = 5;
  double k = 0.5, c = 0.5, mass = 1.0, ts = 0.5;
  int horizon = 20;
  std::string discretization = "zoh";

  void add(CLI::App* app) {
    app->add_option("--masses", masses, "number of masses N (>= 2)")->capture_default_str();
    app->add_option("--k", k, "spring constant")->capture_default_str();
    app->add_option("--c", c, "damper constant")->capture_default_str();
    app->add_option("--mass", mass, "mass of each body")->capture_default_str();
    app->add_option("--ts", ts, "sampling time")->capture_default_str();
    app->add_option("--horizon", horizon, "horizon T")->capture_default_str();
    app->add_option("--discretization", discretization, "zoh | euler")
        ->check(CLI::IsMember({"zoh", "euler"}))
        ->capture_default_str();
  }
  sr::ChainParams params() const {
    sr::ChainParams p;
    p.k = k;
    p.c = c;
    p.mass = mass;
    p.Ts = ts;
    p.T = horizon;
    p.method = sr::discretization_from_string(discretization);
    return p;
  }
  void validate() const {
    if (masses < 2) throw sr::ValidationError("--masses must be at least 2");
    if (!(ts > 0.0)) throw sr::ValidationError("--ts must be positive");
    if (horizon < 1) throw sr::ValidationError("--horizon must be positive");
    if (!(mass > 0.0)) throw sr::ValidationError("--mass must be positive");
    if (k < 0.0 || c < 0.0) throw sr::ValidationError("--k and --c must be non-negative");
  }
};

struct TolArgs {
  double tol_eq = -1, tol_gap = -1, tol_psd = -1;
  int max_newton = -1;

  void add(CLI::App* app) {
    app->add_option("--tol-eq", tol_eq, "equality residual tolerance (solver default if omitted)");
    app->add_option("--tol-gap", tol_gap, "duality-gap tolerance (solver default if omitted)");
    app->add_option("--tol-psd", tol_psd, "PSD tolerance (solver default if omitted)");
    app->add_option("--max-newton", max_newton, "Newton iteration cap (solver default if omitted)");
  }
  void apply(sr::SynthesisOptions& o) const {
    if (tol_eq > 0) o.tol.eq = tol_eq;
    if (tol_gap > 0) o.tol.gap = tol_gap;
    if (tol_psd > 0) o.tol.psd = tol_psd;
    if (max_newton > 0) o.tol.max_newton = max_newton;
  }
};

sr::SparsityPattern read_pattern(const std::string& spec, const sr::HorizonSystem& sys) {
  const int n = sys.state_dim(), m = sys.input_dim(), T = sys.horizon();
  if (spec == "chain") {
    const int N = sys.meta().masses;
    if (N < 2 || n != 2 * N || m != N)
      throw sr::ValidationError("--pattern chain needs a spring-mass chain model");
    return sr::chain_sparsity(N, T);
  }
  if (spec == "all-ones" || spec == "centralized") return sr::centralized_pattern(m, n, T);
  sr::SparsityPattern p;
  if (spec.size() > 5 && spec.substr(spec.size() - 5) == ".json") {
    p = sr::SparsityPattern::from_json(sr::io::read_json_file(spec));
  } else {
    std::ifstream in(spec);
    if (!in) throw sr::ValidationError("cannot open pattern file '" + spec + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    p = sr::SparsityPattern::from_text(ss.str());
  }
  if (p.rows() != m * T || p.cols() != n * T)
    throw sr::ValidationError("pattern is " + p.shape_string() + ", model needs " +
                              std::to_string(m * T) + "x" + std::to_string(n * T));
  p.set_block_meta({m, n, T});
  return p;
}

sr::Objective objective_from(const std::string& s) {
  if (s == "h2") return sr::Objective::h2;
  if (s == "hinf") return sr::Objective::hinf;
  return sr::Objective::spregret;
}

int run(int argc, char** argv) {
  CLI::App app{"Spatial-regret controller synthesis and evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  // gen-model
  auto* gm = app.add_subcommand("gen-model", "write a spring-mass chain model as JSON");
  PlantArgs gm_plant;
  std::string gm_out;
  gm_plant.add(gm);
  gm->add_option("-o,--out", gm_out, "output model file")->required();

  // gen-pattern
  auto* gp = app.add_subcommand("gen-pattern", "write a controller sparsity pattern");
  std::string gp_model, gp_kind = "chain", gp_out, gp_format = "json";
  gp->add_option("--model", gp_model, "model JSON file")->required();
  gp->add_option("--kind", gp_kind, "chain | all-ones | nearest-qi (of the chain pattern)")
      ->check(CLI::IsMember({"chain", "all-ones", "nearest-qi"}))
      ->capture_default_str();
  gp->add_option("--format", gp_format, "json | text")
      ->check(CLI::IsMember({"json", "text"}))
      ->capture_default_str();
  gp->add_option("-o,--out", gp_out, "output pattern file")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "synthesise one controller");
  std::string sy_model, sy_method = "spregret", sy_oracle = "nearest-qi", sy_oobj = "hinf",
                        sy_pattern = "chain", sy_out, sy_report;
  bool sy_toeplitz = false;
  TolArgs sy_tol;
  sy->add_option("--model", sy_model, "model JSON file")->required();
  sy->add_option("--method", sy_method, "h2 | hinf | spregret")
      ->check(CLI::IsMember({"h2", "hinf", "spregret"}))
      ->capture_default_str();
  sy->add_option("--oracle", sy_oracle, "oracle pattern for spregret: nearest-qi | centralized")
      ->check(CLI::IsMember({"nearest-qi", "centralized"}))
      ->capture_default_str();
  std::string sy_oracle_pattern;
  sy->add_option("--oracle-pattern", sy_oracle_pattern,
                 "custom oracle pattern file (overrides --oracle; must be QI and contain S)");
  sy->add_option("--oracle-objective", sy_oobj, "oracle objective: h2 | hinf")
      ->check(CLI::IsMember({"h2", "hinf"}))
      ->capture_default_str();
  sy->add_flag("--toeplitz", sy_toeplitz, "restrict the parameter to block-Toeplitz (LTI plants)");
  sy->add_option("--pattern", sy_pattern,
                 "controller pattern: chain | all-ones | <file.json> | <text file of 0/1 rows>")
      ->capture_default_str();
  sy->add_option("-o,--out", sy_out, "output controller JSON")->required();
  sy->add_option("--report", sy_report, "output report JSON (default: <out>.report.json)");
  sy_tol.add(sy);

  // experiment
  auto* ex = app.add_subcommand("experiment", "win-percentage experiments");
  ex->require_subcommand(1);
  struct ExArgs {
    PlantArgs plant;
    int draws = 1000, iterations = 100, threads = 0;
    std::uint64_t seed = 42;
    std::vector<double> interval{-0.5, 1.0};
    bool initial_only = false, positions_only = false, unrestricted = false;
    std::string oracle_objective = "hinf";
    std::string out = "experiment";
    TolArgs tol;
  } ea;
  int from = 3, to = 10;
  auto common = [&](CLI::App* s) {
    ea.plant.add(s);
    s->add_option("--draws", ea.draws, "disturbance draws per iteration")->capture_default_str();
    s->add_option("--iterations", ea.iterations, "independent iterations")->capture_default_str();
    s->add_option("--seed", ea.seed, "random seed")->capture_default_str();
    s->add_option("--interval", ea.interval, "uniform disturbance interval: lo hi")
        ->expected(2)
        ->capture_default_str();
    s->add_flag("--initial-only", ea.initial_only, "perturb only the initial state");
    s->add_flag("--positions-only", ea.positions_only, "perturb only mass positions");
    s->add_flag("--unrestricted", ea.unrestricted,
                "synthesise without the block-Toeplitz restriction (slower)");
    s->add_option("--oracle-objective", ea.oracle_objective, "h2 | hinf")
        ->check(CLI::IsMember({"h2", "hinf"}))
        ->capture_default_str();
    s->add_option("--threads", ea.threads,
                  std::string("worker threads (default: $") + kThreadsEnv +
                      " or available parallelism)");
    s->add_option("-o,--out-prefix", ea.out, "writes <prefix>.csv, .json and .svg")
        ->capture_default_str();
    ea.tol.add(s);
  };
  auto* ex_am = ex->add_subcommand("affected-masses",
                                   "sweep the maximum number of perturbed masses 1..N; "
                                   "compares K_RQI, K_RC, K_Hinf, K_H2");
  common(ex_am);
  auto* ex_mc = ex->add_subcommand("mass-count",
                                   "sweep the number of masses; re-synthesises K_RQI, K_Hinf, "
                                   "K_H2 per plant and perturbs every mass");
  common(ex_mc);
  ex_mc->add_option("--from", from, "smallest chain")->capture_default_str();
  ex_mc->add_option("--to", to, "largest chain")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gm->parsed()) {
    gm_plant.validate();
    const auto sys = gm_plant.params().plant(gm_plant.masses);
    sr::io::write_json_file(gm_out, sys.to_json());
    return 0;
  }

  if (gp->parsed()) {
    const auto sys = sr::HorizonSystem::from_json(sr::io::read_json_file(gp_model));
    sr::SparsityPattern p = read_pattern(gp_kind == "all-ones" ? "all-ones" : "chain", sys);
    if (gp_kind == "nearest-qi") p = sr::nearest_qi_superset(p, sr::build_block_lift(sys).Delta);
    if (gp_format == "json")
      sr::io::write_json_file(gp_out, p.to_json());
    else
      sr::io::write_text_file(gp_out, p.to_text());
    return 0;
  }

  if (sy->parsed()) {
    const auto sys = sr::HorizonSystem::from_json(sr::io::read_json_file(sy_model));
    const auto lift = sr::build_block_lift(sys);
    const auto cost = sr::chain_cost(sys);
    const auto S = read_pattern(sy_pattern, sys);
    sr::SynthesisOptions opt;
    opt.restriction = sy_toeplitz ? sr::Restriction::toeplitz : sr::Restriction::none;
    sy_tol.apply(opt);
    sr::io::json report{{"command", "synth"},
                        {"model", sy_model},
                        {"method", sy_method},
                        {"pattern", sy_pattern}};
    sr::Controller ctrl;
    if (sy_method == "spregret") {
      sr::PipelineConfig pc;
      pc.oracle = sy_oracle == "centralized" ? sr::OracleChoice::centralized
                                             : sr::OracleChoice::nearest_qi;
      pc.oracle_objective = objective_from(sy_oobj);
      if (!sy_oracle_pattern.empty()) {
        pc.oracle_pattern = read_pattern(sy_oracle_pattern, sys);
        report["oracle_pattern"] = sy_oracle_pattern;
      }
      pc.options = opt;
      auto res = sr::pipeline(S, lift, cost, pc);
      report["pipeline"] = res.report;
      ctrl = res.controller.controller;
    } else {
      auto res = sy_method == "h2" ? sr::synthesize_h2(lift, cost, S, opt)
                                   : sr::synthesize_hinf(lift, cost, S, opt);
      report["options"] = opt.to_json();
      report["value"] = res.value;
      report["worst_case_cost"] = sr::worst_case_cost(res.phi, cost);
      report["solver"] = res.stats();
      ctrl = res.controller;
    }
    ctrl.provenance["config"] = report;
    sr::io::write_json_file(sy_out, ctrl.to_json());
    sr::io::write_json_file(sy_report.empty() ? sy_out + ".report.json" : sy_report, report);
    return 0;
  }

  // experiment
  ea.plant.validate();
  sr::ExperimentConfig cfg;
  cfg.draws = ea.draws;
  cfg.iterations = ea.iterations;
  cfg.seed = ea.seed;
  cfg.threads = ea.threads;
  cfg.validate();
  sr::DisturbanceModel model;
  model.lo = ea.interval[0];
  model.hi = ea.interval[1];
  if (ea.initial_only) model.extent = sr::DisturbanceModel::Extent::initial_only;
  if (ea.positions_only) model.coords = sr::DisturbanceModel::Coordinates::positions_only;
  sr::ControllerSetOptions so;
  so.oracle_objective = objective_from(ea.oracle_objective);
  so.synthesis.restriction = ea.unrestricted ? sr::Restriction::none : sr::Restriction::toeplitz;
  ea.tol.apply(so.synthesis);
  const auto params = ea.plant.params();

  sr::ExperimentReport rep;
  std::string xlabel;
  if (ex_am->parsed()) {
    const auto sys = params.plant(ea.plant.masses);
    const auto cost = sr::chain_cost(sys);
    const auto layout = sr::MassLayout::for_chain(sys);
    model.validate(layout);
    const auto set =
        sr::synthesize_controller_set(sys, sr::chain_sparsity(ea.plant.masses, params.T), cost, so);
    std::vector<int> points;
    for (int p = 1; p <= ea.plant.masses; ++p) points.push_back(p);
    cfg.sweep_kind = "affected-masses";
    rep = sr::run_win_experiment(set.maps, cost, layout, model, points, cfg);
    rep.config["plant"] = params.to_json();
    rep.config["plant"]["masses"] = ea.plant.masses;
    rep.config["synthesis"] = so.synthesis.to_json();
    rep.config["oracle_objective"] = ea.oracle_objective;
    rep.config["synthesis_values"] = set.report;
    xlabel = "maximum number of affected masses";
  } else {
    rep = sr::run_mass_count_experiment(params, from, to, model,
                                        [&] {
                                          auto o = so;
                                          o.include_centralized = false;
                                          return o;
                                        }(),
                                        cfg);
    xlabel = "number of masses";
  }
  // Thread count does not change results, so it is not part of the echoed config.
  sr::io::write_text_file(ea.out + ".csv", rep.to_csv());
  sr::io::write_json_file(ea.out + ".json", rep.to_json());
  sr::io::write_text_file(ea.out + ".svg", rep.to_svg("Win percentage", xlabel));
  std::printf("wrote %s.csv, %s.json, %s.svg\n", ea.out.c_str(), ea.out.c_str(), ea.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sr::StructureError& e) {
    std::cerr << "error (structure): " << e.what() << "\n";
    return 3;
  } catch (const sr::SolverError& e) {
    std::cerr << "error (solver): " << e.what() << "\n";
    return 4;
  } catch (const sr::InvariantError& e) {
    std::cerr << "error (solver audit): " << e.what() << "\n";
    return 4;
  } catch (const sr::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
