#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <thread>
#include <vector>

#include "mpq/autodiff.hpp"
#include "mpq/formats.hpp"
#include "mpq/graph.hpp"
#include "mpq/model.hpp"

namespace mpq {

struct SensitivityReport {
  std::map<int, double> s;   // layer id -> averaged sensitivity
  double mean_sq_loss = 0.0;
  int64_t sample_count = 0;
};

// Per-layer numerical format choice; group config indices and the flat
// layer map are interconvertible through config_format.
struct MPAssignment {
  std::map<int, int> layer_format;  // layer id -> format index
};

inline MPAssignment assignment_from_choice(const std::vector<Group>& groups,
                                           const std::vector<uint64_t>& choice, int format_count) {
  if (choice.size() != groups.size()) fail(Errc::LengthMismatch, "choice vs groups");
  MPAssignment a;
  for (size_t j = 0; j < groups.size(); ++j)
    for (size_t l = 0; l < groups[j].layers.size(); ++l)
      a.layer_format[groups[j].layers[l]] = config_format(groups[j], choice[j], l, format_count);
  return a;
}

inline std::vector<uint64_t> choice_from_assignment(const std::vector<Group>& groups,
                                                    const MPAssignment& a, int format_count) {
  std::vector<uint64_t> choice(groups.size(), 0);
  for (size_t j = 0; j < groups.size(); ++j) {
    uint64_t p = 0, base = 1;
    for (size_t l = 0; l < groups[j].layers.size(); ++l) {
      auto it = a.layer_format.find(groups[j].layers[l]);
      if (it == a.layer_format.end())
        fail(Errc::MissingEntry, "layer " + std::to_string(groups[j].layers[l]) + " unassigned");
      p += static_cast<uint64_t>(it->second) * base;
      base *= static_cast<uint64_t>(format_count);
    }
    choice[j] = p;
  }
  return choice;
}

// s_l^r = || z ⊙ ż ||^2
inline double layer_sensitivity(const ExtendedInputRecord& rec) {
  if (rec.z.size() != rec.zdot.size()) fail(Errc::LengthMismatch, "z vs zdot");
  double acc = 0.0;
  for (size_t i = 0; i < rec.z.size(); ++i) {
    const double t = rec.z[i] * rec.zdot[i];
    acc += t * t;
  }
  return acc;
}

// One forward+backward per calibration sample; sensitivities and the
// mean-square loss are averaged over samples.
inline SensitivityReport calibrate(const ToyModel& model, const CalibBatch& batch) {
  const int64_t n = batch.sample_count();
  if (n < 1) fail(Errc::ShapeMismatch, "empty calibration batch");

  SensitivityReport rep;
  rep.sample_count = n;
  for (int id : model.graph.quantizable_ids()) rep.s[id] = 0.0;

  for (int64_t r = 0; r < n; ++r) {
    Tape tape;
    const double g = forward_loss_sample(model, batch, r, &tape);
    rep.mean_sq_loss += g * g;
    for (const auto& [layer, rec] : backward_extended(model, tape))
      rep.s.at(layer) += layer_sensitivity(rec);
  }
  const double inv = 1.0 / static_cast<double>(n);
  rep.mean_sq_loss *= inv;
  for (auto& [id, v] : rep.s) v *= inv;
  return rep;
}

// d_{j,p} = sum over group positions of s_layer * alpha(format digit)
inline double predict_group_mse(const Group& group, uint64_t p, const SensitivityReport& rep,
                                const FormatRegistry& fmts) {
  double d = 0.0;
  for (size_t l = 0; l < group.layers.size(); ++l) {
    auto it = rep.s.find(group.layers[l]);
    if (it == rep.s.end())
      fail(Errc::MissingSensitivity, "layer " + std::to_string(group.layers[l]));
    d += it->second * alpha(fmts.at(config_format(group, p, l, fmts.size())));
  }
  return d;
}

// Whole-configuration prediction; the group decomposition is a reindexing of
// the flat per-layer sum.
inline double predict_config_mse(const MPAssignment& a, const SensitivityReport& rep,
                                 const FormatRegistry& fmts) {
  double d = 0.0;
  for (const auto& [layer, f] : a.layer_format) {
    auto it = rep.s.find(layer);
    if (it == rep.s.end()) fail(Errc::MissingSensitivity, "layer " + std::to_string(layer));
    d += it->second * alpha(fmts.at(f));
  }
  return d;
}

struct LossMseEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int64_t trials = 0;
};

// Monte-Carlo oracle for E[(g_hat - g)^2]: per trial and sample, draw fresh
// quantization noise for every element of every quantized layer's extended
// input (scaled by the clean values), rerun the forward pass, and record the
// squared loss deviation. Trials parallelize; stream (seed, trial) keeps the
// result independent of the thread count.
inline LossMseEstimate mc_loss_mse(const ToyModel& model, const MPAssignment& a,
                                   const CalibBatch& batch, const FormatRegistry& fmts,
                                   int64_t trials, uint64_t seed, int threads = 1) {
  if (trials < 1) fail(Errc::IndexOutOfRange, "trials must be >= 1");
  const int64_t n = batch.sample_count();
  if (n < 1) fail(Errc::ShapeMismatch, "empty batch");

  // quantized layers in ascending id order; baseline layers draw no noise
  std::vector<std::pair<int, int>> noisy;  // (layer id, format index)
  for (const auto& [layer, f] : a.layer_format) {
    if (!model.graph.has_vertex(layer))
      fail(Errc::MissingEntry, "assigned layer " + std::to_string(layer) + " not in graph");
    if (!fmts.at(f).is_baseline) noisy.push_back({layer, f});
  }

  LossMseEstimate est;
  est.trials = trials;
  if (noisy.empty()) return est;  // zero noise, exactly zero deviation

  // clean losses and consumed operand values, once per sample
  struct CleanSample {
    double loss;
    std::map<int, std::vector<Tensor>> operands;  // per noisy layer
  };
  std::vector<CleanSample> clean(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    Tape tape;
    clean[static_cast<size_t>(r)].loss = forward_loss_sample(model, batch, r, &tape);
    for (const auto& [layer, f] : noisy)
      clean[static_cast<size_t>(r)].operands[layer] = tape.entries[tape.entry_of.at(layer)].operands;
  }

  auto run_trial = [&](int64_t t) {
    std::mt19937_64 rng = make_rng(seed, static_cast<uint64_t>(t));
    double acc = 0.0;
    for (int64_t r = 0; r < n; ++r) {
      const CleanSample& cs = clean[static_cast<size_t>(r)];
      Perturbation pert;
      for (const auto& [layer, f] : noisy) {
        const FormatSpec& spec = fmts.at(f);
        LayerPerturbation lp;
        for (const Tensor& op : cs.operands.at(layer)) {
          Tensor d = Tensor::zeros(op.shape);
          for (size_t i = 0; i < op.data.size(); ++i)
            d.data[i] = quant_noise_sample(op.data[i], spec, rng);
          lp.operand_delta.push_back(std::move(d));
        }
        if (std::holds_alternative<LinearKind>(model.graph.vertex(layer).kind)) {
          const Tensor& w = model.params.at(layer).weight;
          Tensor d = Tensor::zeros(w.shape);
          for (size_t i = 0; i < w.data.size(); ++i)
            d.data[i] = quant_noise_sample(w.data[i], spec, rng);
          lp.weight_delta = std::move(d);
        }
        pert[layer] = std::move(lp);
      }
      const double g_hat = forward_loss_sample(model, batch, r, nullptr, &pert);
      const double dev = g_hat - cs.loss;
      acc += dev * dev;
    }
    return acc / static_cast<double>(n);
  };

  std::vector<double> trial_means(static_cast<size_t>(trials));
  const int workers = std::max(1, threads);
  if (workers == 1) {
    for (int64_t t = 0; t < trials; ++t) trial_means[static_cast<size_t>(t)] = run_trial(t);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int64_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int64_t t = next.fetch_add(1); t < trials; t = next.fetch_add(1))
          trial_means[static_cast<size_t>(t)] = run_trial(t);
      });
    for (auto& th : pool) th.join();
  }

  double mean = 0.0;
  for (double m : trial_means) mean += m;
  mean /= static_cast<double>(trials);
  double var = 0.0;
  for (double m : trial_means) var += (m - mean) * (m - mean);
  est.mean = mean;
  est.std_error = trials > 1
                      ? std::sqrt(var / static_cast<double>(trials - 1) / static_cast<double>(trials))
                      : 0.0;
  return est;
}

}  // namespace mpq
