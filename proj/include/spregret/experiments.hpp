#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spregret/evaluation.hpp"
#include "spregret/model.hpp"
#include "spregret/synthesis.hpp"

namespace spregret {

// Plant parameters shared by every configuration of a sweep.
struct ChainParams {
  double k = 0.5, c = 0.5, mass = 1.0, Ts = 0.5;
  int T = 20;
  Discretization method = Discretization::zoh;

  HorizonSystem plant(int N) const { return spring_mass_chain(N, k, c, mass, Ts, T, method); }
  io::json to_json() const {
    return {{"k", k}, {"c", c}, {"mass", mass}, {"Ts", Ts}, {"T", T},
            {"discretization", to_string(method)}};
  }
};

// Which controllers to compare. K_RQI is always first (the baseline).
struct ControllerSetOptions {
  bool include_centralized = true;
  Objective oracle_objective = Objective::hinf;
  SynthesisOptions synthesis;  // restriction and tolerances, shared by all
};

struct ControllerSet {
  std::vector<NamedMap> maps;
  io::json report;  // per-controller synthesis values
};

// K_RQI (nearest-QI oracle), K_RC (centralized oracle), K_Hinf and K_H2, all
// on the same S.
inline ControllerSet synthesize_controller_set(const HorizonSystem& sys, const SparsityPattern& S,
                                               const CostWeights& cost,
                                               const ControllerSetOptions& opt) {
  const BlockLift lift = build_block_lift(sys);
  ControllerSet out;
  PipelineConfig pc;
  pc.oracle_objective = opt.oracle_objective;
  pc.options = opt.synthesis;

  pc.oracle = OracleChoice::nearest_qi;
  const PipelineResult rqi = pipeline(S, lift, cost, pc);
  out.maps.push_back({"K_RQI", rqi.controller.phi});
  out.report["K_RQI"] = {{"lambda_star", rqi.controller.value},
                         {"oracle_value", rqi.oracle.value}};
  if (opt.include_centralized) {
    pc.oracle = OracleChoice::centralized;
    const PipelineResult rc = pipeline(S, lift, cost, pc);
    out.maps.push_back({"K_RC", rc.controller.phi});
    out.report["K_RC"] = {{"lambda_star", rc.controller.value},
                          {"oracle_value", rc.oracle.value}};
  }
  const SynthesisResult hinf = synthesize_hinf(lift, cost, S, opt.synthesis);
  out.maps.push_back({"K_Hinf", hinf.phi});
  out.report["K_Hinf"] = {{"gamma_squared", hinf.value}};
  const SynthesisResult h2 = synthesize_h2(lift, cost, S, opt.synthesis);
  out.maps.push_back({"K_H2", h2.phi});
  out.report["K_H2"] = {{"h2_cost", h2.value}};
  return out;
}

inline CostWeights chain_cost(const HorizonSystem& sys) {
  return CostWeights::identity((sys.state_dim() + sys.input_dim()) * sys.horizon());
}

// Sweep over the number of masses; controllers are re-synthesised for each
// plant and every mass is perturbed.
inline ExperimentReport run_mass_count_experiment(const ChainParams& params, int from, int to,
                                                  const DisturbanceModel& model,
                                                  const ControllerSetOptions& set_opt,
                                                  const ExperimentConfig& cfg) {
  cfg.validate();
  if (from < 2 || to < from) throw ValidationError("mass-count sweep needs 2 <= from <= to");
  ExperimentReport rep;
  rep.config = {{"sweep", "mass-count"},
                {"from", from},
                {"to", to},
                {"draws", cfg.draws},
                {"iterations", cfg.iterations},
                {"seed", cfg.seed},
                {"tie_relative_tolerance", cfg.tie_rel},
                {"baseline", "K_RQI"},
                {"disturbance", model.to_json()},
                {"affected", "all masses"},
                {"plant", params.to_json()},
                {"synthesis", set_opt.synthesis.to_json()},
                {"oracle_objective", to_string(set_opt.oracle_objective)}};
  io::json synth = io::json::object();
  for (int N = from; N <= to; ++N) {
    const HorizonSystem sys = params.plant(N);
    const CostWeights cost = chain_cost(sys);
    const ControllerSet set = synthesize_controller_set(sys, chain_sparsity(N, params.T), cost, set_opt);
    synth[std::to_string(N)] = set.report;
    const MassLayout layout = MassLayout::for_chain(sys);
    DisturbanceModel m = model;
    m.fixed_masses.resize(static_cast<size_t>(N));
    std::iota(m.fixed_masses.begin(), m.fixed_masses.end(), 0);
    ExperimentConfig c = cfg;
    c.baseline = 0;
    rep.sweep.push_back(evaluate_sweep_point(set.maps, cost, layout, m, N, N,
                                             static_cast<std::uint64_t>(N - from), c));
  }
  rep.config["synthesis_values"] = synth;
  return rep;
}

}  // namespace spregret
