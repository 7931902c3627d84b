#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "mpq/error.hpp"
#include "mpq/formats.hpp"
#include "mpq/graph.hpp"
#include "mpq/perfmodel.hpp"
#include "mpq/rng.hpp"
#include "mpq/sensitivity.hpp"

namespace mpq {

// One multiple-choice knapsack instance: per group, gain and cost per config
// index; pick exactly one config per group maximizing total gain with total
// cost <= budget.
struct GroupOptions {
  std::vector<double> gain;
  std::vector<double> cost;
};

struct MckpInstance {
  std::vector<GroupOptions> groups;
  double budget = 0.0;
  double tau = 0.0;  // recorded for reporting only

  void validate() const {
    if (budget < 0.0) fail(Errc::Infeasible, "negative budget");
    for (const auto& g : groups) {
      if (g.gain.empty() || g.gain.size() != g.cost.size())
        fail(Errc::LengthMismatch, "group gain/cost vectors");
      for (double d : g.cost)
        if (d < 0.0) fail(Errc::Infeasible, "negative cost entry");
    }
  }
};

enum class Optimality { Exact, Heuristic };

struct Solution {
  std::vector<uint64_t> choice;
  double total_gain = 0.0;
  double total_cost = 0.0;
  Optimality optimality = Optimality::Exact;
  std::string solver;
};

namespace detail {

// Canonical totals: ascending group order, one running sum. Every solver and
// every feasibility comparison uses these exact f64 values, so budget checks
// need no epsilon.
inline std::pair<double, double> totals(const MckpInstance& inst,
                                        const std::vector<uint64_t>& choice) {
  double gain = 0.0, cost = 0.0;
  for (size_t j = 0; j < inst.groups.size(); ++j) {
    gain += inst.groups[j].gain[choice[j]];
    cost += inst.groups[j].cost[choice[j]];
  }
  return {gain, cost};
}

// shared tie-break: higher gain, then lower cost, then lexicographically
// smallest choice vector
inline bool better(double gain_a, double cost_a, const std::vector<uint64_t>& choice_a,
                   double gain_b, double cost_b, const std::vector<uint64_t>& choice_b) {
  if (gain_a != gain_b) return gain_a > gain_b;
  if (cost_a != cost_b) return cost_a < cost_b;
  return choice_a < choice_b;
}

}  // namespace detail

// ----- exhaustive oracle -----

inline Solution solve_brute(const MckpInstance& inst) {
  inst.validate();
  double combos = 1.0;
  for (const auto& g : inst.groups) combos *= static_cast<double>(g.gain.size());
  if (combos > 1e7) fail(Errc::TooLarge, "instance too large for brute force");

  const size_t nj = inst.groups.size();
  std::vector<uint64_t> cur(nj, 0);
  Solution best;
  bool found = false;

  while (true) {
    auto [gain, cost] = detail::totals(inst, cur);
    if (cost <= inst.budget &&
        (!found || detail::better(gain, cost, cur, best.total_gain, best.total_cost, best.choice))) {
      best.choice = cur;
      best.total_gain = gain;
      best.total_cost = cost;
      found = true;
    }
    // odometer
    size_t j = 0;
    while (j < nj && ++cur[j] == inst.groups[j].gain.size()) cur[j++] = 0;
    if (j == nj) break;
  }
  if (!found) fail(Errc::Infeasible, "no configuration fits the budget");
  best.optimality = Optimality::Exact;
  best.solver = "brute";
  return best;
}

// ----- branch and bound -----

namespace detail {

struct BBOption {
  uint64_t p;
  double gain, cost;
};

struct BBIncrement {
  size_t group;
  double dgain, dcost, ratio;
};

struct BBPrep {
  std::vector<std::vector<BBOption>> opts;   // Pareto-filtered, cost & gain ascending
  std::vector<double> base_gain_suffix;      // sums of per-group min-cost options
  std::vector<double> base_cost_suffix;
  std::vector<BBIncrement> increments;       // convex-hull upgrades, ratio descending
};

// Pareto filter. Among equal (cost, gain) pairs the smallest config index is
// kept, so the filtered set still contains the canonical tie-break winner.
inline std::vector<BBOption> pareto_filter(const GroupOptions& g) {
  std::vector<BBOption> all(g.gain.size());
  for (size_t p = 0; p < g.gain.size(); ++p) all[p] = {static_cast<uint64_t>(p), g.gain[p], g.cost[p]};
  std::sort(all.begin(), all.end(), [](const BBOption& a, const BBOption& b) {
    if (a.cost != b.cost) return a.cost < b.cost;
    if (a.gain != b.gain) return a.gain > b.gain;
    return a.p < b.p;
  });
  std::vector<BBOption> kept;
  for (const auto& o : all)
    if (kept.empty() || o.gain > kept.back().gain) kept.push_back(o);
  return kept;
}

inline BBPrep prepare(const MckpInstance& inst) {
  BBPrep prep;
  const size_t nj = inst.groups.size();
  prep.opts.resize(nj);
  for (size_t j = 0; j < nj; ++j) prep.opts[j] = pareto_filter(inst.groups[j]);

  prep.base_gain_suffix.assign(nj + 1, 0.0);
  prep.base_cost_suffix.assign(nj + 1, 0.0);
  for (size_t j = nj; j-- > 0;) {
    prep.base_gain_suffix[j] = prep.base_gain_suffix[j + 1] + prep.opts[j].front().gain;
    prep.base_cost_suffix[j] = prep.base_cost_suffix[j + 1] + prep.opts[j].front().cost;
  }

  // per-group upper convex hull of (cost, gain); its increments carry
  // decreasing gain/cost ratios, which is what the LP relaxation consumes
  for (size_t j = 0; j < nj; ++j) {
    const auto& opts = prep.opts[j];
    std::vector<size_t> hull;
    for (size_t k = 0; k < opts.size(); ++k) {
      while (hull.size() >= 2) {
        const BBOption& a = opts[hull[hull.size() - 2]];
        const BBOption& b = opts[hull.back()];
        const BBOption& c = opts[k];
        // drop b when slope(a,b) <= slope(b,c)
        if ((b.gain - a.gain) * (c.cost - b.cost) <= (c.gain - b.gain) * (b.cost - a.cost))
          hull.pop_back();
        else
          break;
      }
      hull.push_back(k);
    }
    for (size_t h = 1; h < hull.size(); ++h) {
      const BBOption& a = opts[hull[h - 1]];
      const BBOption& b = opts[hull[h]];
      const double dc = b.cost - a.cost;
      const double dg = b.gain - a.gain;
      if (dg <= 0.0) continue;
      prep.increments.push_back({j, dg, dc, dc > 0.0 ? dg / dc : std::numeric_limits<double>::infinity()});
    }
  }
  std::sort(prep.increments.begin(), prep.increments.end(),
            [](const BBIncrement& a, const BBIncrement& b) { return a.ratio > b.ratio; });
  return prep;
}

}  // namespace detail

// Depth-first branch and bound over groups; the upper bound fills the LP
// relaxation greedily over convex-hull increments of the remaining groups.
// Matches solve_brute's objective and choice under the shared tie-break.
inline Solution solve_bb(const MckpInstance& inst) {
  inst.validate();
  const size_t nj = inst.groups.size();
  const detail::BBPrep prep = detail::prepare(inst);

  if (prep.base_cost_suffix[0] > inst.budget)
    fail(Errc::Infeasible, "even the cheapest configuration exceeds the budget");

  Solution best;
  bool found = false;
  std::vector<uint64_t> cur(nj, 0);

  // prune margin: absorbs f64 summation noise so equal-gain branches that
  // could win the tie-break are never cut
  auto bound_from = [&](size_t j, double fixed_gain, double fixed_cost) {
    double b = fixed_gain + prep.base_gain_suffix[j];
    double room = inst.budget - fixed_cost - prep.base_cost_suffix[j];
    for (const auto& inc : prep.increments) {
      if (inc.group < j) continue;
      if (room <= 0.0) break;
      if (inc.dcost <= room) {
        b += inc.dgain;
        room -= inc.dcost;
      } else {
        b += inc.dgain * (room / inc.dcost);
        room = 0.0;
      }
    }
    return b;
  };

  auto dfs = [&](auto&& self, size_t j, double gain, double cost) -> void {
    if (cost + prep.base_cost_suffix[j] > inst.budget) return;  // cannot complete
    if (j == nj) {
      if (!found ||
          detail::better(gain, cost, cur, best.total_gain, best.total_cost, best.choice)) {
        best.choice = cur;
        best.total_gain = gain;
        best.total_cost = cost;
        found = true;
      }
      return;
    }
    if (found) {
      const double ub = bound_from(j, gain, cost);
      if (ub + 1e-9 * std::max(1.0, std::abs(ub)) < best.total_gain) return;
    }
    // high-gain options first to tighten the incumbent early
    const auto& opts = prep.opts[j];
    for (size_t k = opts.size(); k-- > 0;) {
      cur[j] = opts[k].p;
      self(self, j + 1, gain + opts[k].gain, cost + opts[k].cost);
    }
    cur[j] = 0;
  };
  dfs(dfs, 0, 0.0, 0.0);

  if (!found) fail(Errc::Infeasible, "no configuration fits the budget");
  // canonical totals (identical accumulation order to solve_brute)
  auto [g, c] = detail::totals(inst, best.choice);
  best.total_gain = g;
  best.total_cost = c;
  best.optimality = Optimality::Exact;
  best.solver = "bb";
  return best;
}

// ----- budget-discretized dynamic program -----

// Costs are rounded up to multiples of budget/grid, so a grid-feasible
// solution never violates the true budget; rounding loses optimality unless
// every cost already sits on the lattice.
inline Solution solve_dp(const MckpInstance& inst, int grid) {
  inst.validate();
  if (grid < 1) fail(Errc::IndexOutOfRange, "grid must be >= 1");
  const size_t nj = inst.groups.size();

  bool lossless = true;
  auto quantize = [&](double d) -> int64_t {
    if (d == 0.0) return 0;
    if (d > inst.budget) return grid + 1;  // excluded
    if (inst.budget == 0.0) return grid + 1;
    const double x = d * static_cast<double>(grid) / inst.budget;
    const double c = std::ceil(x);
    if (c != x) lossless = false;
    return static_cast<int64_t>(std::min(c, static_cast<double>(grid) + 1.0));
  };

  std::vector<std::vector<int64_t>> qcost(nj);
  for (size_t j = 0; j < nj; ++j) {
    qcost[j].resize(inst.groups[j].cost.size());
    for (size_t p = 0; p < inst.groups[j].cost.size(); ++p)
      qcost[j][p] = quantize(inst.groups[j].cost[p]);
  }

  struct Cell {
    double gain = -std::numeric_limits<double>::infinity();
    double cost = 0.0;
  };

  for (int capacity = grid; capacity >= 0; --capacity) {
    // suffix DP: dp[j][w] = best (gain, -cost) over groups j..J-1 within w quanta
    std::vector<std::vector<Cell>> dp(nj + 1, std::vector<Cell>(static_cast<size_t>(capacity) + 1));
    for (int w = 0; w <= capacity; ++w) dp[nj][static_cast<size_t>(w)] = {0.0, 0.0};

    for (size_t j = nj; j-- > 0;) {
      for (int w = 0; w <= capacity; ++w) {
        Cell best;
        for (size_t p = 0; p < inst.groups[j].gain.size(); ++p) {
          const int64_t q = qcost[j][p];
          if (q > w) continue;
          const Cell& next = dp[j + 1][static_cast<size_t>(w - q)];
          if (next.gain == -std::numeric_limits<double>::infinity()) continue;
          const double g = inst.groups[j].gain[p] + next.gain;
          const double c = inst.groups[j].cost[p] + next.cost;
          if (g > best.gain || (g == best.gain && c < best.cost)) best = {g, c};
        }
        dp[j][static_cast<size_t>(w)] = best;
      }
    }

    if (dp[0][static_cast<size_t>(capacity)].gain == -std::numeric_limits<double>::infinity())
      fail(Errc::Infeasible, "no configuration fits the budget");

    // reconstruct lexicographically smallest optimal choice
    std::vector<uint64_t> choice(nj, 0);
    int w = capacity;
    bool ok = true;
    for (size_t j = 0; j < nj && ok; ++j) {
      ok = false;
      for (size_t p = 0; p < inst.groups[j].gain.size(); ++p) {
        const int64_t q = qcost[j][p];
        if (q > w) continue;
        const Cell& next = dp[j + 1][static_cast<size_t>(w - q)];
        if (next.gain == -std::numeric_limits<double>::infinity()) continue;
        const double g = inst.groups[j].gain[p] + next.gain;
        const double c = inst.groups[j].cost[p] + next.cost;
        if (g == dp[j][static_cast<size_t>(w)].gain && c == dp[j][static_cast<size_t>(w)].cost) {
          choice[j] = static_cast<uint64_t>(p);
          w -= static_cast<int>(q);
          ok = true;
          break;
        }
      }
    }
    if (!ok) continue;

    auto [gain, cost] = detail::totals(inst, choice);
    if (cost > inst.budget) continue;  // ulp-level rounding slip; tighten and retry

    Solution sol;
    sol.choice = std::move(choice);
    sol.total_gain = gain;
    sol.total_cost = cost;
    sol.optimality = lossless ? Optimality::Exact : Optimality::Heuristic;
    sol.solver = "dp";
    return sol;
  }
  fail(Errc::Infeasible, "no configuration fits the budget");
}

// ----- layer-granularity baselines -----

// Context shared by the Prefix/Random strategies: the group structure, the
// instance whose cost/gain vectors score candidate layer sets, and the
// execution order of the quantizable layers. Baselines are defined for F = 2.
struct BaselineContext {
  std::vector<Group> groups;
  MckpInstance inst;
  std::vector<int> layer_order;
};

namespace detail {

inline void check_two_formats(const BaselineContext& ctx) {
  for (const auto& g : ctx.groups) {
    const uint64_t want = group_config_count(g.layers.size(), 2);
    if (ctx.inst.groups.size() <= static_cast<size_t>(g.index) ||
        ctx.inst.groups[static_cast<size_t>(g.index)].gain.size() != want)
      fail(Errc::MultiFormatUnsupported, "baseline strategies require F = 2");
  }
}

// choice vector for "these layers quantized, everything else baseline"
inline std::vector<uint64_t> choice_for_layers(const BaselineContext& ctx,
                                               const std::vector<int>& layers) {
  std::vector<uint64_t> choice(ctx.groups.size(), 0);
  for (int layer : layers) {
    bool placed = false;
    for (const auto& g : ctx.groups) {
      for (size_t l = 0; l < g.layers.size(); ++l)
        if (g.layers[l] == layer) {
          choice[static_cast<size_t>(g.index)] += 1ULL << l;
          placed = true;
          break;
        }
      if (placed) break;
    }
    if (!placed) fail(Errc::MissingEntry, "layer " + std::to_string(layer) + " not in any group");
  }
  return choice;
}

inline Solution finish(const BaselineContext& ctx, std::vector<uint64_t> choice,
                       const std::string& tag) {
  auto [gain, cost] = totals(ctx.inst, choice);
  Solution s;
  s.choice = std::move(choice);
  s.total_gain = gain;
  s.total_cost = cost;
  s.optimality = Optimality::Heuristic;
  s.solver = tag;
  return s;
}

}  // namespace detail

// Quantize the longest prefix of the execution order that still fits the
// budget.
inline Solution baseline_prefix(const BaselineContext& ctx) {
  detail::check_two_formats(ctx);
  size_t best_k = 0;
  std::vector<uint64_t> best_choice(ctx.groups.size(), 0);
  for (size_t k = 0; k <= ctx.layer_order.size(); ++k) {
    std::vector<int> prefix(ctx.layer_order.begin(), ctx.layer_order.begin() + k);
    auto choice = detail::choice_for_layers(ctx, prefix);
    auto [gain, cost] = detail::totals(ctx.inst, choice);
    (void)gain;
    if (cost <= ctx.inst.budget) {
      best_k = k;
      best_choice = std::move(choice);
    }
  }
  (void)best_k;
  return detail::finish(ctx, std::move(best_choice), "prefix");
}

// Permutation-greedy: walk a seed-derived random permutation of the layers,
// adding each one whose inclusion still fits the budget. With several
// attempts, the best outcome under the shared tie-break wins.
inline Solution baseline_random(const BaselineContext& ctx, uint64_t seed, int attempts = 1) {
  detail::check_two_formats(ctx);
  if (attempts < 1) fail(Errc::IndexOutOfRange, "attempts must be >= 1");

  Solution best;
  bool found = false;
  for (int a = 0; a < attempts; ++a) {
    std::vector<int> perm = ctx.layer_order;
    std::mt19937_64 rng = make_rng(seed, static_cast<uint64_t>(a));
    for (size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[std::uniform_int_distribution<size_t>(0, i - 1)(rng)]);

    std::vector<int> chosen;
    for (int layer : perm) {
      chosen.push_back(layer);
      auto choice = detail::choice_for_layers(ctx, chosen);
      auto [gain, cost] = detail::totals(ctx.inst, choice);
      (void)gain;
      if (cost > ctx.inst.budget) chosen.pop_back();
    }
    Solution s = detail::finish(ctx, detail::choice_for_layers(ctx, chosen), "random");
    if (!found || detail::better(s.total_gain, s.total_cost, s.choice, best.total_gain,
                                 best.total_cost, best.choice)) {
      best = std::move(s);
      found = true;
    }
  }
  return best;
}

// ----- instance building and tau sweeps -----

inline MckpInstance make_instance(const std::vector<Group>& groups,
                                  const std::vector<PerfVector>& gains,
                                  const SensitivityReport& rep, const FormatRegistry& fmts,
                                  double tau) {
  if (gains.size() != groups.size()) fail(Errc::LengthMismatch, "gain vectors vs groups");
  MckpInstance inst;
  inst.tau = tau;
  inst.budget = tau * tau * rep.mean_sq_loss;
  for (size_t j = 0; j < groups.size(); ++j) {
    const uint64_t total = group_config_count(groups[j].layers.size(), fmts.size());
    if (gains[j].values.size() != total)
      fail(Errc::LengthMismatch, "gain vector length for group " + std::to_string(groups[j].index));
    GroupOptions go;
    go.gain = gains[j].values;
    go.cost.resize(total);
    for (uint64_t p = 0; p < total; ++p)
      go.cost[p] = predict_group_mse(groups[j], p, rep, fmts);
    inst.groups.push_back(std::move(go));
  }
  return inst;
}

struct SweepPoint {
  double tau = 0.0;
  double budget = 0.0;
  Solution solution;
  std::string strategy;  // "ip", "prefix", "random", "all_quantized"
};

struct SweepOptions {
  bool include_all_quantized = false;
  bool include_prefix = false;
  int random_attempts = 0;  // per tau; 0 disables
  uint64_t seed = 0;
};

inline std::vector<SweepPoint> sweep_tau(const std::vector<Group>& groups,
                                         const std::vector<PerfVector>& gains,
                                         const SensitivityReport& rep, const FormatRegistry& fmts,
                                         const std::vector<double>& taus,
                                         const SweepOptions& opts = {}) {
  for (size_t i = 1; i < taus.size(); ++i)
    if (taus[i] < taus[i - 1]) fail(Errc::IndexOutOfRange, "taus must be ascending");

  std::vector<int> layer_order;
  for (const auto& g : groups) layer_order.insert(layer_order.end(), g.layers.begin(), g.layers.end());

  std::vector<SweepPoint> out;
  for (double tau : taus) {
    MckpInstance inst = make_instance(groups, gains, rep, fmts, tau);
    SweepPoint pt;
    pt.tau = tau;
    pt.budget = inst.budget;
    pt.solution = solve_bb(inst);
    pt.strategy = "ip";
    out.push_back(pt);

    if (opts.include_prefix || opts.random_attempts > 0) {
      BaselineContext ctx{groups, inst, layer_order};
      if (opts.include_prefix) {
        SweepPoint bp = pt;
        bp.solution = baseline_prefix(ctx);
        bp.strategy = "prefix";
        out.push_back(std::move(bp));
      }
      for (int a = 0; a < opts.random_attempts; ++a) {
        SweepPoint rp = pt;
        rp.solution = baseline_random(ctx, derive_seed(opts.seed, static_cast<uint64_t>(a)), 1);
        rp.strategy = "random";
        out.push_back(std::move(rp));
      }
    }
  }

  if (opts.include_all_quantized && !groups.empty()) {
    MckpInstance inst = make_instance(groups, gains, rep, fmts, taus.empty() ? 0.0 : taus.back());
    std::vector<uint64_t> all(groups.size());
    for (size_t j = 0; j < groups.size(); ++j) {
      if (fmts.size() != 2) fail(Errc::MultiFormatUnsupported, "all-quantized point needs F = 2");
      all[j] = group_config_count(groups[j].layers.size(), 2) - 1;
    }
    auto [gain, cost] = detail::totals(inst, all);
    SweepPoint pt;
    pt.tau = std::numeric_limits<double>::quiet_NaN();
    pt.budget = std::numeric_limits<double>::quiet_NaN();
    pt.solution.choice = std::move(all);
    pt.solution.total_gain = gain;
    pt.solution.total_cost = cost;
    pt.solution.optimality = Optimality::Heuristic;
    pt.solution.solver = "fixed";
    pt.strategy = "all_quantized";
    out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace mpq
