#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <string>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "spregret/errors.hpp"
#include "spregret/json_io.hpp"
#include "spregret/model.hpp"
#include "spregret/sls.hpp"

namespace spregret {

// ---------------------------------------------------------------------------
// Costs and regret

namespace detail {

inline void require_delta(const Eigen::VectorXd& delta, const ClosedLoopMap& phi,
                          const CostWeights& cost) {
  if (delta.size() != phi.Phi_x.cols())
    throw ValidationError("disturbance has length " + std::to_string(delta.size()) +
                          ", expected " + std::to_string(phi.Phi_x.cols()));
  if (cost.dim() != phi.Phi_x.rows() + phi.Phi_u.rows())
    throw ValidationError("cost matrix does not match the closed-loop map");
}

}  // namespace detail

// J(delta, K) = delta^T Phi^T C Phi delta.
inline double cost_j(const Eigen::VectorXd& delta, const ClosedLoopMap& phi,
                     const CostWeights& cost) {
  detail::require_delta(delta, phi, cost);
  const Eigen::VectorXd z = phi.stacked() * delta;
  return z.dot(cost.C() * z);
}

// Time-domain simulation of x_{t+1} = A_t x_t + B_t u_t + w_t, u = K x, with
// delta = [x0; w_0; ...; w_{T-2}]. Returns the stacked [x; u] trajectory.
inline Eigen::VectorXd rollout(const HorizonSystem& sys, const Eigen::MatrixXd& K,
                               const Eigen::VectorXd& delta) {
  const int n = sys.state_dim(), m = sys.input_dim(), T = sys.horizon();
  if (K.rows() != m * T || K.cols() != n * T) throw ValidationError("controller shape mismatch");
  if (delta.size() != n * T) throw ValidationError("disturbance length mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n * T), u = Eigen::VectorXd::Zero(m * T);
  x.head(n) = delta.head(n);
  for (int t = 0; t < T; ++t) {
    // u_t only sees x_0..x_t (K is causal).
    u.segment(t * m, m) = K.block(t * m, 0, m, (t + 1) * n) * x.head((t + 1) * n);
    if (t + 1 < T)
      x.segment((t + 1) * n, n) = sys.A(t) * x.segment(t * n, n) +
                                  sys.B(t) * u.segment(t * m, m) + delta.segment((t + 1) * n, n);
  }
  Eigen::VectorXd z(n * T + m * T);
  z << x, u;
  return z;
}

inline double rollout_cost(const HorizonSystem& sys, const Eigen::MatrixXd& K,
                           const Eigen::VectorXd& delta, const CostWeights& cost) {
  const Eigen::VectorXd z = rollout(sys, K, delta);
  return z.dot(cost.C() * z);
}

// e(delta, K, K_hat) = J(delta, K) - J(delta, K_hat).
inline double cost_error(const Eigen::VectorXd& delta, const ClosedLoopMap& phi,
                         const ClosedLoopMap& phi_hat, const CostWeights& cost) {
  return cost_j(delta, phi, cost) - cost_j(delta, phi_hat, cost);
}

struct RegretValue {
  double value = 0.0;
  Eigen::VectorXd witness;  // unit-norm maximiser
};

// max over ||delta|| <= 1 of e(delta): lambda_max of Phi^T C Phi - Phi_hat^T C Phi_hat.
inline RegretValue spregret_value(const ClosedLoopMap& phi, const ClosedLoopMap& phi_hat,
                                  const CostWeights& cost) {
  if (phi.Phi_x.rows() != phi_hat.Phi_x.rows() || phi.Phi_u.rows() != phi_hat.Phi_u.rows() ||
      phi.Phi_x.cols() != phi_hat.Phi_x.cols())
    throw ValidationError("closed-loop maps have different shapes");
  if (cost.dim() != phi.Phi_x.rows() + phi.Phi_u.rows())
    throw ValidationError("cost matrix does not match the closed-loop map");
  const Eigen::MatrixXd P = phi.stacked(), Ph = phi_hat.stacked();
  Eigen::MatrixXd Pi = P.transpose() * cost.C() * P - Ph.transpose() * cost.C() * Ph;
  Pi = 0.5 * (Pi + Pi.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Pi);
  const auto last = Pi.rows() - 1;
  RegretValue r;
  r.value = es.eigenvalues()(last);
  r.witness = es.eigenvectors().col(last);
  // Fix the sign so the witness is reproducible.
  Eigen::Index imax = 0;
  r.witness.cwiseAbs().maxCoeff(&imax);
  if (r.witness(imax) < 0.0) r.witness = -r.witness;
  return r;
}

// ---------------------------------------------------------------------------
// Counter-based random streams

// SplitMix64 finaliser; also used to derive per-draw stream keys.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream keyed by (seed, a, b, c); the i-th output is mix64(key + i * golden),
// so results depend only on the key, never on scheduling.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0)
      : key_(mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c)) {}

  std::uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] without modulo bias.
  int uniform_int(int lo, int hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % range);
    std::uint64_t x;
    do x = next_u64();
    while (x >= limit);
    return lo + static_cast<int>(x % range);
  }

  // Standard normal by Box-Muller (no cached second value: stateless per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Disturbances

// Which delta coordinates belong to which mass: state index i * states_per_mass
// + j of every time block, j = 0 being the position.
struct MassLayout {
  int T = 0;
  int n = 0;
  int masses = 0;
  int states_per_mass = 2;

  static MassLayout for_chain(const HorizonSystem& sys) {
    const int N = sys.meta().masses > 0 ? sys.meta().masses : sys.state_dim() / 2;
    MassLayout l{sys.horizon(), sys.state_dim(), N, 2};
    l.validate();
    return l;
  }
  void validate() const {
    if (T <= 0 || masses <= 0 || states_per_mass <= 0 || masses * states_per_mass != n)
      throw ValidationError("mass layout does not cover the state vector");
  }
};

struct DisturbanceModel {
  enum class Kind { uniform_interval, gaussian, unit_ball };
  enum class Extent { all_steps, initial_only };
  enum class Coordinates { full_state, positions_only };

  Kind kind = Kind::uniform_interval;
  double lo = -0.5, hi = 1.0;  // uniform_interval
  double sigma = 1.0;          // gaussian scale
  Extent extent = Extent::all_steps;
  Coordinates coords = Coordinates::full_state;
  std::vector<int> fixed_masses;  // when non-empty: these masses, no random count

  void validate(const MassLayout& layout) const {
    if (kind == Kind::uniform_interval && !(lo <= hi))
      throw ValidationError("disturbance interval needs lo <= hi");
    if (kind == Kind::gaussian && !(sigma >= 0.0))
      throw ValidationError("gaussian scale must be non-negative");
    for (int i : fixed_masses)
      if (i < 0 || i >= layout.masses)
        throw ValidationError("affected mass index " + std::to_string(i) + " out of range");
  }

  io::json to_json() const {
    io::json j;
    switch (kind) {
      case Kind::uniform_interval: j["kind"] = "uniform_interval"; j["interval"] = {lo, hi}; break;
      case Kind::gaussian: j["kind"] = "gaussian"; j["sigma"] = sigma; break;
      case Kind::unit_ball: j["kind"] = "unit_ball"; break;
    }
    j["extent"] = extent == Extent::all_steps ? "initial_state_and_all_process_steps"
                                              : "initial_state_only";
    j["coordinates"] = coords == Coordinates::full_state ? "full_state" : "positions_only";
    if (!fixed_masses.empty()) j["fixed_masses"] = fixed_masses;
    return j;
  }
};

// Affected masses: the fixed set, or a count ~ U{1..max_affected} and a subset
// drawn without replacement.
inline std::vector<int> draw_affected(const DisturbanceModel& model, const MassLayout& layout,
                                      int max_affected, RandomStream& rng) {
  if (!model.fixed_masses.empty()) return model.fixed_masses;
  if (max_affected < 0 || max_affected > layout.masses)
    throw ValidationError("affected-mass maximum " + std::to_string(max_affected) +
                          " outside [0, " + std::to_string(layout.masses) + "]");
  if (max_affected == 0) return {};
  const int count = rng.uniform_int(1, max_affected);
  std::vector<int> idx(static_cast<size_t>(layout.masses));
  std::iota(idx.begin(), idx.end(), 0);
  for (int k = 0; k < count; ++k) {
    const int j = rng.uniform_int(k, layout.masses - 1);
    std::swap(idx[static_cast<size_t>(k)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Eigen::VectorXd disturbance_for(const DisturbanceModel& model, const MassLayout& layout,
                                       const std::vector<int>& affected, RandomStream& rng) {
  Eigen::VectorXd d = Eigen::VectorXd::Zero(layout.n * layout.T);
  const int steps = model.extent == DisturbanceModel::Extent::all_steps ? layout.T : 1;
  const int per_mass =
      model.coords == DisturbanceModel::Coordinates::full_state ? layout.states_per_mass : 1;
  for (int tau = 0; tau < steps; ++tau)
    for (int i : affected)
      for (int j = 0; j < per_mass; ++j) {
        const int idx = tau * layout.n + i * layout.states_per_mass + j;
        switch (model.kind) {
          case DisturbanceModel::Kind::uniform_interval: d(idx) = rng.uniform(model.lo, model.hi); break;
          case DisturbanceModel::Kind::gaussian: d(idx) = model.sigma * rng.normal(); break;
          case DisturbanceModel::Kind::unit_ball: d(idx) = rng.normal(); break;
        }
      }
  if (model.kind == DisturbanceModel::Kind::unit_ball && d.norm() > 0.0) d /= d.norm();
  return d;
}

inline Eigen::VectorXd sample_disturbance(const DisturbanceModel& model, const MassLayout& layout,
                                          int max_affected, RandomStream& rng) {
  model.validate(layout);
  const auto affected = draw_affected(model, layout, max_affected, rng);
  return disturbance_for(model, layout, affected, rng);
}

// ---------------------------------------------------------------------------
// Win-percentage experiments

struct NamedMap {
  std::string name;
  ClosedLoopMap phi;
};

struct ControllerStats {
  std::string name;
  double win_mean = 0.0, win_sd = 0.0, win_ci_lo = 0.0, win_ci_hi = 0.0;
  double mean_cost = 0.0, cost_ci_lo = 0.0, cost_ci_hi = 0.0;
  double rel_increase = 0.0;  // vs the baseline controller's mean cost
};

struct SweepResult {
  int point = 0;
  std::vector<ControllerStats> controllers;
  int ties = 0;
};

struct ExperimentConfig {
  std::string sweep_kind = "affected-masses";  // or "mass-count"
  int draws = 1000;
  int iterations = 100;
  std::uint64_t seed = 42;
  int threads = 0;  // 0: default
  int baseline = 0;
  double tie_rel = 1e-9;

  void validate() const {
    if (draws <= 0) throw ValidationError("--draws must be positive");
    if (iterations <= 1) throw ValidationError("--iterations must be at least 2");
    if (threads < 0) throw ValidationError("--threads must be non-negative");
  }
};

struct ExperimentReport {
  io::json config;
  std::vector<SweepResult> sweep;

  std::string to_csv() const {
    std::ostringstream os;
    os << "sweep_point,controller,win_mean,win_ci_lo,win_ci_hi,mean_cost\n";
    char buf[256];
    for (const auto& s : sweep)
      for (const auto& c : s.controllers) {
        std::snprintf(buf, sizeof buf, "%d,%s,%.10g,%.10g,%.10g,%.10g\n", s.point, c.name.c_str(),
                      c.win_mean, c.win_ci_lo, c.win_ci_hi, c.mean_cost);
        os << buf;
      }
    return os.str();
  }

  io::json to_json() const {
    io::json pts = io::json::array();
    for (const auto& s : sweep) {
      io::json cs = io::json::array();
      for (const auto& c : s.controllers)
        cs.push_back({{"controller", c.name},
                      {"win_mean", c.win_mean},
                      {"win_sd", c.win_sd},
                      {"win_ci", {c.win_ci_lo, c.win_ci_hi}},
                      {"mean_cost", c.mean_cost},
                      {"cost_ci", {c.cost_ci_lo, c.cost_ci_hi}},
                      {"relative_increase_vs_baseline", c.rel_increase}});
      pts.push_back({{"sweep_point", s.point}, {"ties", s.ties}, {"controllers", cs}});
    }
    return {{"config", config}, {"results", pts}};
  }

  std::string to_svg(const std::string& title, const std::string& xlabel) const;
};

inline int default_threads() {
  if (const char* env = std::getenv("SPREGRET_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace detail {

// mean +- 1.96 sd / sqrt(k) over iteration-level values.
inline void mean_ci(const std::vector<double>& v, double& mean, double& sd, double& lo,
                    double& hi) {
  const double k = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / k;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / (k - 1.0)) : 0.0;
  const double h = 1.96 * sd / std::sqrt(k);
  lo = mean - h;
  hi = mean + h;
}

// Runs fn(i) for i in [0, count) on up to `threads` workers.
template <class Fn>
void parallel_for(int count, int threads, Fn fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex mu;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += threads) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

// One sweep point: `iterations` batches of `draws` disturbances; per batch,
// each controller's fraction of strict wins (ties within tie_rel excluded).
inline SweepResult evaluate_sweep_point(const std::vector<NamedMap>& controllers,
                                        const CostWeights& cost, const MassLayout& layout,
                                        const DisturbanceModel& model, int point,
                                        int max_affected, std::uint64_t sweep_index,
                                        const ExperimentConfig& cfg) {
  cfg.validate();
  model.validate(layout);
  if (controllers.size() < 2) throw ValidationError("need at least two controllers to compare");
  const auto nc = controllers.size();
  std::vector<Eigen::MatrixXd> M;
  for (const auto& c : controllers) {
    if (c.phi.Phi_x.cols() != layout.n * layout.T)
      throw ValidationError("controller '" + c.name + "' does not match the plant");
    if (cost.dim() != c.phi.Phi_x.rows() + c.phi.Phi_u.rows())
      throw ValidationError("controller '" + c.name + "' does not match the cost");
    M.push_back(cost.C_half() * c.phi.stacked());
  }
  std::vector<std::vector<double>> wins(nc, std::vector<double>(static_cast<size_t>(cfg.iterations)));
  std::vector<std::vector<double>> costs = wins;
  std::vector<int> ties(static_cast<size_t>(cfg.iterations), 0);
  const int threads = cfg.threads > 0 ? cfg.threads : default_threads();
  detail::parallel_for(cfg.iterations, threads, [&](int it) {
    std::vector<int> w(nc, 0);
    std::vector<double> csum(nc, 0.0);
    std::vector<double> J(nc);
    for (int d = 0; d < cfg.draws; ++d) {
      RandomStream rng(cfg.seed, sweep_index, static_cast<std::uint64_t>(it),
                       static_cast<std::uint64_t>(d));
      const Eigen::VectorXd delta = sample_disturbance(model, layout, max_affected, rng);
      for (size_t c = 0; c < nc; ++c) {
        J[c] = (M[c] * delta).squaredNorm();
        csum[c] += J[c];
      }
      const auto best = static_cast<size_t>(std::min_element(J.begin(), J.end()) - J.begin());
      bool tie = false;
      for (size_t c = 0; c < nc; ++c)
        if (c != best && J[c] - J[best] <= cfg.tie_rel * std::max(std::abs(J[best]), 1e-300))
          tie = true;
      if (tie)
        ++ties[static_cast<size_t>(it)];
      else
        ++w[best];
    }
    for (size_t c = 0; c < nc; ++c) {
      wins[c][static_cast<size_t>(it)] = static_cast<double>(w[c]) / cfg.draws;
      costs[c][static_cast<size_t>(it)] = csum[c] / cfg.draws;
    }
  });
  SweepResult res;
  res.point = point;
  res.ties = std::accumulate(ties.begin(), ties.end(), 0);
  for (size_t c = 0; c < nc; ++c) {
    ControllerStats s;
    s.name = controllers[c].name;
    detail::mean_ci(wins[c], s.win_mean, s.win_sd, s.win_ci_lo, s.win_ci_hi);
    double sd = 0.0;
    detail::mean_ci(costs[c], s.mean_cost, sd, s.cost_ci_lo, s.cost_ci_hi);
    res.controllers.push_back(s);
  }
  const auto b = static_cast<size_t>(std::clamp(cfg.baseline, 0, static_cast<int>(nc) - 1));
  for (auto& s : res.controllers)
    s.rel_increase = res.controllers[b].mean_cost > 0.0
                         ? s.mean_cost / res.controllers[b].mean_cost - 1.0
                         : 0.0;
  return res;
}

// Sweep over the maximum number of affected masses, points 1..max_point.
inline ExperimentReport run_win_experiment(const std::vector<NamedMap>& controllers,
                                           const CostWeights& cost, const MassLayout& layout,
                                           const DisturbanceModel& model,
                                           const std::vector<int>& points,
                                           const ExperimentConfig& cfg) {
  ExperimentReport rep;
  rep.config = {{"sweep", cfg.sweep_kind},
                {"draws", cfg.draws},
                {"iterations", cfg.iterations},
                {"seed", cfg.seed},
                {"tie_relative_tolerance", cfg.tie_rel},
                {"baseline", controllers.at(static_cast<size_t>(cfg.baseline)).name},
                {"disturbance", model.to_json()},
                {"masses", layout.masses},
                {"T", layout.T}};
  for (size_t s = 0; s < points.size(); ++s)
    rep.sweep.push_back(evaluate_sweep_point(controllers, cost, layout, model, points[s],
                                             points[s], s, cfg));
  return rep;
}

// ---------------------------------------------------------------------------
// SVG line chart of win fractions with CI bands.

inline std::string ExperimentReport::to_svg(const std::string& title,
                                            const std::string& xlabel) const {
  const double W = 640, H = 400, L = 60, R = 150, Tm = 40, B = 50;
  const double pw = W - L - R, ph = H - Tm - B;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream os;
  char buf[512];
  auto fmt = [&](const char* f, auto... a) {
    std::snprintf(buf, sizeof buf, f, a...);
    os << buf;
  };
  fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n", W, H);
  fmt("<rect width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", W, H);
  os << "<text x=\"" << W / 2 - R / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  if (sweep.empty()) {
    os << "</svg>\n";
    return os.str();
  }
  const double x0 = sweep.front().point, x1 = sweep.back().point;
  auto X = [&](double x) { return L + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * pw; };
  auto Y = [&](double y) { return Tm + (1.0 - std::clamp(y, 0.0, 1.0)) * ph; };
  fmt("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
      L, Tm, pw, ph);
  for (int k = 0; k <= 4; ++k) {
    const double y = k / 4.0;
    fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n", L, Y(y), L + pw, Y(y));
    fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.0f%%</text>\n", L - 5, Y(y) + 4, 100 * y);
  }
  for (const auto& s : sweep)
    fmt("<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%d</text>\n", X(s.point), Tm + ph + 18, s.point);
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xlabel
     << "</text>\n";
  const size_t nc = sweep.front().controllers.size();
  for (size_t c = 0; c < nc; ++c) {
    const char* col = colors[c % 6];
    std::ostringstream band, line;
    for (const auto& s : sweep) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", X(s.point), Y(s.controllers[c].win_ci_hi));
      band << buf;
    }
    for (auto it = sweep.rbegin(); it != sweep.rend(); ++it) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", X(it->point), Y(it->controllers[c].win_ci_lo));
      band << buf;
    }
    for (const auto& s : sweep) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", X(s.point), Y(s.controllers[c].win_mean));
      line << buf;
    }
    os << "<polygon points=\"" << band.str() << "\" fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    os << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << col
       << "\" stroke-width=\"2\" stroke-dasharray=\"4,2\"/>\n";
    fmt("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>\n",
        L + pw + 15, Tm + 15 + 20.0 * c, L + pw + 35, Tm + 15 + 20.0 * c, col);
    os << "<text x=\"" << L + pw + 40 << "\" y=\"" << Tm + 19 + 20.0 * c << "\">"
       << sweep.front().controllers[c].name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace spregret
