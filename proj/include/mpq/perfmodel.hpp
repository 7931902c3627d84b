#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpq/formats.hpp"
#include "mpq/graph.hpp"
#include "mpq/rng.hpp"

namespace mpq {

// Per-format gain coefficients: delta_t is the time gained by one MAC in
// format f relative to baseline, delta_m the bytes saved per stored element.
// Baseline entries are zero by definition.
struct CostParams {
  std::map<int, double> delta_t;
  std::map<int, double> delta_m;
  int64_t n_samples = 1;
};

inline CostParams default_cost_params(const FormatRegistry& fmts, int64_t n_samples,
                                      double mac_time_gain = 1.0) {
  if (n_samples < 1) fail(Errc::IndexOutOfRange, "n_samples must be >= 1");
  CostParams p;
  p.n_samples = n_samples;
  const int base_bytes = fmts.at(fmts.baseline_index()).byte_width;
  for (int f = 0; f < fmts.size(); ++f) {
    const FormatSpec& spec = fmts.at(f);
    p.delta_t[f] = spec.is_baseline ? 0.0 : mac_time_gain;
    p.delta_m[f] = spec.is_baseline ? 0.0 : static_cast<double>(base_bytes - spec.byte_width);
  }
  return p;
}

// MAC-count time gain: N*C*K per linear, N*C^2 per bgemm.
inline double theoretical_layer_gain(const VertexKind& kind, int f, const CostParams& params) {
  auto it = params.delta_t.find(f);
  if (it == params.delta_t.end()) fail(Errc::MissingEntry, "no delta_t for format " + std::to_string(f));
  const double n = static_cast<double>(params.n_samples);
  if (const auto* lin = std::get_if<LinearKind>(&kind))
    return n * static_cast<double>(lin->in_features) * static_cast<double>(lin->out_features) *
           it->second;
  if (const auto* bg = std::get_if<BgemmKind>(&kind))
    return n * static_cast<double>(bg->dim) * static_cast<double>(bg->dim) * it->second;
  fail(Errc::OpaqueLayer, "opaque layers have no MAC gain");
}

// Memory gain: C*K*delta_m bytes for linear weights; bgemm layers hold no
// persistent parameters, so quantizing them frees nothing.
inline double memory_layer_gain(const VertexKind& kind, int f, const CostParams& params) {
  auto it = params.delta_m.find(f);
  if (it == params.delta_m.end()) fail(Errc::MissingEntry, "no delta_m for format " + std::to_string(f));
  if (const auto* lin = std::get_if<LinearKind>(&kind))
    return static_cast<double>(lin->in_features) * static_cast<double>(lin->out_features) *
           it->second;
  if (std::holds_alternative<BgemmKind>(kind)) return 0.0;
  fail(Errc::OpaqueLayer, "opaque layers have no memory gain");
}

enum class Metric { EmpiricalTime, TheoreticalTime, Memory };

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::EmpiricalTime: return "ET";
    case Metric::TheoreticalTime: return "TT";
    case Metric::Memory: return "M";
  }
  return "?";
}

struct PerfVector {
  int group = 0;
  Metric metric = Metric::TheoreticalTime;
  std::vector<double> values;  // indexed by config p
};

namespace detail {

template <typename LayerGain>
PerfVector sum_layer_gains(const Group& group, const CompGraph& graph, int format_count,
                           Metric metric, LayerGain&& layer_gain) {
  const uint64_t total = group_config_count(group.layers.size(), format_count);
  PerfVector out;
  out.group = group.index;
  out.metric = metric;
  out.values.resize(total, 0.0);
  for (uint64_t p = 0; p < total; ++p) {
    double acc = 0.0;
    for (size_t l = 0; l < group.layers.size(); ++l) {
      const int f = config_format(group, p, l, format_count);
      acc += layer_gain(graph.vertex(group.layers[l]).kind, f);
    }
    out.values[p] = acc;
  }
  return out;
}

}  // namespace detail

inline PerfVector group_perf_vector_tt(const Group& group, const CompGraph& graph,
                                       const CostParams& params, int format_count) {
  return detail::sum_layer_gains(group, graph, format_count, Metric::TheoreticalTime,
                                 [&](const VertexKind& k, int f) {
                                   return theoretical_layer_gain(k, f, params);
                                 });
}

inline PerfVector group_perf_vector_m(const Group& group, const CompGraph& graph,
                                      const CostParams& params, int format_count) {
  return detail::sum_layer_gains(group, graph, format_count, Metric::Memory,
                                 [&](const VertexKind& k, int f) {
                                   return memory_layer_gain(k, f, params);
                                 });
}

// ----- measured timing tables -----

// End-to-end TTFT measurements with group j at config p and everything else at
// baseline. The all-baseline entry (p = 0) may be omitted; when present it
// should match baseline_ttft_ms up to measurement noise.
struct TimingTable {
  double baseline_ttft_ms = 0.0;
  int repeats = 1;
  std::map<std::pair<int, uint64_t>, std::vector<double>> entries;
};

// c_ET(j,p) = baseline - measured(j,p). The p = 0 value is pinned to zero:
// the all-baseline configuration is the reference run itself.
inline std::vector<PerfVector> empirical_gains(const TimingTable& table,
                                               const std::vector<Group>& groups, int format_count,
                                               bool min_of_repeats = false,
                                               std::vector<std::string>* warnings = nullptr) {
  std::vector<PerfVector> out;
  for (const auto& g : groups) {
    const uint64_t total = group_config_count(g.layers.size(), format_count);
    PerfVector pv;
    pv.group = g.index;
    pv.metric = Metric::EmpiricalTime;
    pv.values.resize(total, 0.0);
    for (uint64_t p = 0; p < total; ++p) {
      auto it = table.entries.find({g.index, p});
      if (it == table.entries.end()) {
        if (p == 0) continue;  // optional; gain is zero by definition
        fail(Errc::MissingEntry,
             "timing table lacks group " + std::to_string(g.index) + " config " + std::to_string(p));
      }
      const auto& reps = it->second;
      if (reps.empty())
        fail(Errc::MissingEntry, "empty repeat list for group " + std::to_string(g.index));
      double value;
      if (min_of_repeats) {
        value = reps[0];
        for (double v : reps) value = std::min(value, v);
      } else {
        value = 0.0;
        for (double v : reps) value += v;
        value /= static_cast<double>(reps.size());
      }
      if (p == 0) {
        // keep the definitional zero, but surface suspicious baselines
        if (warnings) {
          double sd = 0.0, mean = 0.0;
          for (double v : reps) mean += v;
          mean /= static_cast<double>(reps.size());
          for (double v : reps) sd += (v - mean) * (v - mean);
          sd = reps.size() > 1 ? std::sqrt(sd / static_cast<double>(reps.size() - 1)) : 0.0;
          const double tol = reps.size() > 1
                                 ? 3.0 * sd / std::sqrt(static_cast<double>(reps.size()))
                                 : 1e-9 * table.baseline_ttft_ms;
          if (std::abs(mean - table.baseline_ttft_ms) > tol)
            warnings->push_back("group " + std::to_string(g.index) +
                                " all-baseline entry deviates from baseline_ttft_ms");
        }
        continue;
      }
      pv.values[p] = table.baseline_ttft_ms - value;
    }
    out.push_back(std::move(pv));
  }
  return out;
}

// ----- synthetic timing fixture -----

// Emulates measured tables whose per-group gains are NOT the sum of per-layer
// gains: the true gain of (j, p) is the additive MAC-based gain plus a fixed
// seed-derived intra-group interaction offset (zero for single-layer groups
// and for the all-baseline config), and each repeat adds Gaussian jitter.
struct SynthTimingSpec {
  double baseline_ttft_ms = 1000.0;
  double interaction_strength = 0.0;
  double jitter_sigma = 0.0;
  int repeats = 1;
};

namespace detail {

inline double synth_true_gain(const Group& group, const CompGraph& graph, const CostParams& params,
                              int format_count, uint64_t seed, double interaction_strength,
                              uint64_t p) {
  double gain = 0.0;
  for (size_t l = 0; l < group.layers.size(); ++l) {
    const int f = config_format(group, p, l, format_count);
    gain += theoretical_layer_gain(graph.vertex(group.layers[l]).kind, f, params);
  }
  if (group.layers.size() > 1 && p != 0) {
    // offset on a 2^-20 lattice so baseline +/- gain round-trips are exact in
    // f64 and table-derived gains can be compared to the generator bit-for-bit
    const double u = std::round(unit_hash(seed, static_cast<uint64_t>(group.index), p) *
                                1048576.0) /
                     1048576.0;
    gain += interaction_strength * u;
  }
  return gain;
}

}  // namespace detail

inline TimingTable synth_timing(const std::vector<Group>& groups, const CompGraph& graph,
                                const CostParams& params, int format_count, uint64_t seed,
                                const SynthTimingSpec& spec) {
  if (spec.interaction_strength < 0) fail(Errc::IndexOutOfRange, "interaction_strength >= 0");
  if (spec.repeats < 1) fail(Errc::IndexOutOfRange, "repeats >= 1");
  TimingTable table;
  table.baseline_ttft_ms = spec.baseline_ttft_ms;
  table.repeats = spec.repeats;
  for (const auto& g : groups) {
    const uint64_t total = group_config_count(g.layers.size(), format_count);
    for (uint64_t p = 0; p < total; ++p) {
      const double gain = detail::synth_true_gain(g, graph, params, format_count, seed,
                                                  spec.interaction_strength, p);
      std::mt19937_64 rng = make_rng(seed, derive_seed(0x7a11, static_cast<uint64_t>(g.index), p));
      std::normal_distribution<double> jitter(0.0, spec.jitter_sigma);
      std::vector<double> reps(static_cast<size_t>(spec.repeats));
      for (auto& v : reps)
        v = spec.baseline_ttft_ms - gain + (spec.jitter_sigma > 0 ? jitter(rng) : 0.0);
      table.entries[{g.index, p}] = std::move(reps);
    }
  }
  return table;
}

// The fixture's own answer for a whole-model configuration: the jitter-free
// sum of per-group true gains. Group-wise ET predictions are validated
// against this exactly.
inline double synth_full_model_gain(const std::vector<Group>& groups, const CompGraph& graph,
                                    const CostParams& params, int format_count, uint64_t seed,
                                    double interaction_strength,
                                    const std::vector<uint64_t>& choice) {
  if (choice.size() != groups.size()) fail(Errc::LengthMismatch, "choice vs groups");
  double total = 0.0;
  for (size_t j = 0; j < groups.size(); ++j)
    total += detail::synth_true_gain(groups[j], graph, params, format_count, seed,
                                     interaction_strength, choice[j]);
  return total;
}

}  // namespace mpq
