// mpq: mixed-precision quantization planner.
//
// Pipeline stages exchange files so that externally measured timing tables can
// replace the synthetic fixture without code changes:
//   partition -> calibrate -> (synth-timing | real table) -> plan -> validate
//                                                         -> sweep

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpq/autodiff.hpp"
#include "mpq/io.hpp"
#include "mpq/perfmodel.hpp"
#include "mpq/sensitivity.hpp"
#include "mpq/solver.hpp"

namespace fs = std::filesystem;
using namespace mpq;

namespace {

int log_level() {
  static int level = [] {
    const char* env = std::getenv("MPQ_LOG");
    if (!env) return 2;
    const std::string s(env);
    if (s == "error") return 0;
    if (s == "warn") return 1;
    if (s == "info") return 2;
    if (s == "debug") return 3;
    return 2;
  }();
  return level;
}

template <typename... Args>
void log_at(int lvl, const char* tag, const char* fmt, Args... args) {
  if (log_level() < lvl) return;
  std::fprintf(stderr, "[%s] ", tag);
  std::fprintf(stderr, fmt, args...);
  std::fprintf(stderr, "\n");
}

#define LOG_WARN(...) log_at(1, "warn", __VA_ARGS__)
#define LOG_INFO(...) log_at(2, "info", __VA_ARGS__)
#define LOG_DEBUG(...) log_at(3, "debug", __VA_ARGS__)

void ensure_outdir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(Errc::MissingInput, "cannot create output directory " + out);
}

// primary outputs stay byte-identical across reruns; volatile details go here
void write_run_meta(const std::string& out, const std::string& command) {
  json meta;
  meta["command"] = command;
  meta["unix_time"] = static_cast<int64_t>(std::time(nullptr));
  write_file((fs::path(out) / "run_meta.json").string(), meta.dump(2) + "\n");
}

Metric parse_metric(const std::string& m) {
  if (m == "et") return Metric::EmpiricalTime;
  if (m == "tt") return Metric::TheoreticalTime;
  if (m == "m") return Metric::Memory;
  fail(Errc::ParseError, "metric must be one of et|tt|m");
}

// "--delta-t 0.5" applies to every non-baseline format; "--delta-t a=1,b=2"
// sets them by name.
void apply_delta_override(const std::string& text, const FormatRegistry& fmts,
                          std::map<int, double>& target) {
  if (text.empty()) return;
  if (text.find('=') == std::string::npos) {
    const double v = std::stod(text);
    for (int f = 0; f < fmts.size(); ++f)
      if (!fmts.at(f).is_baseline) target[f] = v;
    return;
  }
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) fail(Errc::ParseError, "bad delta override '" + item + "'");
    target[fmts.index_of(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
  }
}

std::vector<PerfVector> gains_for_metric(Metric metric, const std::vector<Group>& groups,
                                         const CompGraph& graph, const FormatRegistry& fmts,
                                         const std::string& timing_path, int64_t samples,
                                         const std::string& delta_t, const std::string& delta_m) {
  if (metric == Metric::EmpiricalTime) {
    if (timing_path.empty()) fail(Errc::MissingInput, "--timing is required for --metric et");
    const TimingTable table = timing_from_json(load_json_file(timing_path));
    std::vector<std::string> warnings;
    auto gains = empirical_gains(table, groups, fmts.size(), false, &warnings);
    for (const auto& w : warnings) LOG_WARN("%s", w.c_str());
    return gains;
  }
  CostParams params = default_cost_params(fmts, samples);
  apply_delta_override(delta_t, fmts, params.delta_t);
  apply_delta_override(delta_m, fmts, params.delta_m);
  std::vector<PerfVector> gains;
  for (const auto& g : groups)
    gains.push_back(metric == Metric::TheoreticalTime
                        ? group_perf_vector_tt(g, graph, params, fmts.size())
                        : group_perf_vector_m(g, graph, params, fmts.size()));
  return gains;
}

std::map<int, std::string> layer_names(const CompGraph& g) {
  std::map<int, std::string> names;
  for (const auto& v : g.vertices()) names[v.id] = v.name;
  return names;
}

// ----- subcommand bodies -----

int cmd_partition(const std::string& graph_path, const std::string& out, bool emit_dot,
                  int max_group_size) {
  const CompGraph graph = load_graph(graph_path);
  const PartitionResult part = partition_sequential(graph, max_group_size);

  ensure_outdir(out);
  write_file((fs::path(out) / "groups.json").string(), groups_to_json(part.groups).dump(2) + "\n");
  if (emit_dot) write_file((fs::path(out) / "graph.dot").string(), to_dot(graph));
  write_run_meta(out, "partition");

  std::map<size_t, int> histogram;
  for (const auto& g : part.groups) histogram[g.layers.size()]++;
  std::printf("partitioned %zu vertices into %zu groups\n", graph.vertices().size(),
              part.groups.size());
  for (const auto& [size, count] : histogram)
    std::printf("  %d group(s) of %zu layer(s)\n", count, size);
  int dropped = 0;
  for (const auto& r : part.regions) dropped += static_cast<int>(r.removed.size());
  LOG_DEBUG("dropped %d opaque vertices across %zu regions", dropped, part.regions.size());
  return 0;
}

int cmd_calibrate(const std::string& graph_path, const std::string& model_path,
                  const std::string& calib_path, const std::string& out) {
  const CompGraph graph = load_graph(graph_path);
  const ToyModel model = toy_model_from_json(graph, load_json_file(model_path));
  const CalibBatch batch = calib_from_json(load_json_file(calib_path));

  const SensitivityReport rep = calibrate(model, batch);

  ensure_outdir(out);
  write_file((fs::path(out) / "sensitivity.csv").string(),
             sensitivity_to_csv(rep, layer_names(graph)));
  write_run_meta(out, "calibrate");

  std::printf("calibrated %zu layers over %lld samples, E[g^2]=%s\n", rep.s.size(),
              static_cast<long long>(rep.sample_count), fmt_double(rep.mean_sq_loss).c_str());
  const auto names = layer_names(graph);
  for (const auto& [id, s] : rep.s)
    std::printf("  %4d  %-16s s=%s\n", id, names.at(id).c_str(), fmt_double(s).c_str());
  return 0;
}

int cmd_synth_timing(const std::string& graph_path, const std::string& groups_path,
                     const std::string& formats_path, uint64_t seed, const std::string& out,
                     double baseline_ttft, double interaction, double jitter, int repeats,
                     int64_t samples, const std::string& delta_t) {
  const CompGraph graph = load_graph(graph_path);
  const auto groups = groups_from_json(load_json_file(groups_path));
  const FormatRegistry fmts = load_formats(formats_path);

  CostParams params = default_cost_params(fmts, samples);
  apply_delta_override(delta_t, fmts, params.delta_t);

  SynthTimingSpec spec;
  spec.baseline_ttft_ms = baseline_ttft;
  spec.interaction_strength = interaction;
  spec.jitter_sigma = jitter;
  spec.repeats = repeats;
  const TimingTable table = synth_timing(groups, graph, params, fmts.size(), seed, spec);

  ensure_outdir(out);
  write_file((fs::path(out) / "timing.json").string(), timing_to_json(table).dump(2) + "\n");
  write_run_meta(out, "synth-timing");
  std::printf("synthesized %zu timing entries (baseline %s ms, %d repeats)\n",
              table.entries.size(), fmt_double(baseline_ttft).c_str(), repeats);
  return 0;
}

int cmd_plan(const std::string& graph_path, const std::string& groups_path,
             const std::string& sens_path, const std::string& formats_path,
             const std::string& metric_s, const std::string& timing_path, double tau,
             const std::string& out, const std::string& solver, int grid, int64_t samples,
             const std::string& delta_t, const std::string& delta_m) {
  const CompGraph graph = load_graph(graph_path);
  const auto groups = groups_from_json(load_json_file(groups_path));
  const SensitivityReport rep = sensitivity_from_csv(read_file(sens_path));
  const FormatRegistry fmts = load_formats(formats_path);
  const Metric metric = parse_metric(metric_s);

  const auto gains =
      gains_for_metric(metric, groups, graph, fmts, timing_path, samples, delta_t, delta_m);
  const MckpInstance inst = make_instance(groups, gains, rep, fmts, tau);

  Solution sol;
  if (solver == "bb")
    sol = solve_bb(inst);
  else if (solver == "brute")
    sol = solve_brute(inst);
  else if (solver == "dp")
    sol = solve_dp(inst, grid);
  else
    fail(Errc::ParseError, "solver must be bb|brute|dp");

  if (metric == Metric::Memory && sol.total_gain == 0.0)
    LOG_WARN("%s", "memory gain is zero; the budget admits no linear-layer quantization");

  ensure_outdir(out);
  write_file((fs::path(out) / "plan.json").string(),
             plan_to_json(sol, groups, fmts, tau, inst.budget, sol.total_cost, metric).dump(2) +
                 "\n");
  write_run_meta(out, "plan");

  std::printf("plan: tau=%s budget=%s gain=%s cost=%s solver=%s\n", fmt_double(tau).c_str(),
              fmt_double(inst.budget).c_str(), fmt_double(sol.total_gain).c_str(),
              fmt_double(sol.total_cost).c_str(), sol.solver.c_str());
  return 0;
}

int cmd_validate(const std::string& graph_path, const std::string& model_path,
                 const std::string& calib_path, const std::string& formats_path,
                 const std::string& groups_path, const std::string& plan_path, int64_t trials,
                 uint64_t seed, int threads, const std::string& out) {
  const CompGraph graph = load_graph(graph_path);
  const ToyModel model = toy_model_from_json(graph, load_json_file(model_path));
  const CalibBatch batch = calib_from_json(load_json_file(calib_path));
  const FormatRegistry fmts = load_formats(formats_path);
  const auto groups = groups_from_json(load_json_file(groups_path));
  const auto [choice, tau] = plan_choice_from_json(load_json_file(plan_path));
  if (choice.size() != groups.size()) fail(Errc::LengthMismatch, "plan does not match groups");

  const SensitivityReport rep = calibrate(model, batch);
  const MPAssignment full = assignment_from_choice(groups, choice, fmts.size());
  const int baseline = fmts.baseline_index();

  struct Row {
    std::string scope;
    double predicted, mc_mean, mc_se;
    bool pass;
  };
  std::vector<Row> rows;

  const double pred_full = predict_config_mse(full, rep, fmts);
  const LossMseEstimate mc_full = mc_loss_mse(model, full, batch, fmts, trials, seed, threads);
  rows.push_back({"all", pred_full, mc_full.mean, mc_full.std_error,
                  std::abs(pred_full - mc_full.mean) <= 3.0 * mc_full.std_error});

  double parts_sum = 0.0, parts_var = 0.0;
  for (size_t j = 0; j < groups.size(); ++j) {
    bool noisy = false;
    for (size_t l = 0; l < groups[j].layers.size(); ++l)
      noisy |= config_format(groups[j], choice[j], l, fmts.size()) != baseline;
    if (!noisy) continue;
    std::vector<uint64_t> sub(groups.size(), 0);
    sub[j] = choice[j];
    const MPAssignment a = assignment_from_choice(groups, sub, fmts.size());
    const double pred = predict_config_mse(a, rep, fmts);
    const LossMseEstimate mc =
        mc_loss_mse(model, a, batch, fmts, trials, derive_seed(seed, j + 1), threads);
    parts_sum += mc.mean;
    parts_var += mc.std_error * mc.std_error;
    rows.push_back({"group_" + std::to_string(groups[j].index), pred, mc.mean, mc.std_error,
                    std::abs(pred - mc.mean) <= 3.0 * mc.std_error});
  }

  const double add_se =
      std::sqrt(parts_var + mc_full.std_error * mc_full.std_error);
  rows.push_back({"additivity", parts_sum, mc_full.mean, add_se,
                  std::abs(parts_sum - mc_full.mean) <= 3.0 * add_se});

  std::ostringstream csv;
  csv << "scope,predicted,mc_mean,mc_stderr,pass\n";
  bool all_pass = true;
  for (const auto& r : rows) {
    csv << r.scope << "," << fmt_double(r.predicted) << "," << fmt_double(r.mc_mean) << ","
        << fmt_double(r.mc_se) << "," << (r.pass ? "true" : "false") << "\n";
    std::printf("%-12s predicted=%-22s mc=%-22s se=%-12s %s\n", r.scope.c_str(),
                fmt_double(r.predicted).c_str(), fmt_double(r.mc_mean).c_str(),
                fmt_double(r.mc_se).c_str(), r.pass ? "PASS" : "FAIL");
    all_pass &= r.pass;
  }
  ensure_outdir(out);
  write_file((fs::path(out) / "validation.csv").string(), csv.str());
  write_run_meta(out, "validate");
  return all_pass ? 0 : 2;
}

int cmd_sweep(const std::string& graph_path, const std::string& groups_path,
              const std::string& sens_path, const std::string& formats_path,
              const std::string& metric_s, const std::string& timing_path,
              const std::vector<double>& taus, const std::string& out, bool baselines,
              int random_seeds, uint64_t seed, bool all_quantized, int64_t samples,
              const std::string& delta_t, const std::string& delta_m) {
  const CompGraph graph = load_graph(graph_path);
  const auto groups = groups_from_json(load_json_file(groups_path));
  const SensitivityReport rep = sensitivity_from_csv(read_file(sens_path));
  const FormatRegistry fmts = load_formats(formats_path);
  const Metric metric = parse_metric(metric_s);

  const auto gains =
      gains_for_metric(metric, groups, graph, fmts, timing_path, samples, delta_t, delta_m);

  SweepOptions opts;
  opts.include_all_quantized = all_quantized;
  opts.include_prefix = baselines;
  opts.random_attempts = baselines ? random_seeds : 0;
  opts.seed = seed;
  const auto points = sweep_tau(groups, gains, rep, fmts, taus, opts);

  ensure_outdir(out);
  write_file((fs::path(out) / "sweep.csv").string(),
             sweep_to_csv(points, groups, fmts.size(), fmts.baseline_index()));
  int plan_idx = 0;
  for (const auto& pt : points) {
    if (pt.strategy != "ip") continue;
    char name[32];
    std::snprintf(name, sizeof(name), "plan_%03d.json", plan_idx++);
    write_file((fs::path(out) / name).string(),
               plan_to_json(pt.solution, groups, fmts, pt.tau, pt.budget, pt.solution.total_cost,
                            metric)
                       .dump(2) +
                   "\n");
  }
  write_run_meta(out, "sweep");
  std::printf("swept %zu tau points (%zu rows)\n", taus.size(), points.size());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-precision quantization planner"};
  app.require_subcommand(1);

  std::string graph_path, model_path, calib_path, formats_path, groups_path, sens_path;
  std::string timing_path, plan_path, out = ".", solver = "bb", metric = "tt";
  std::string delta_t, delta_m;
  double tau = 0.0, baseline_ttft = 1000.0, interaction = 0.0, jitter = 0.0;
  std::vector<double> taus;
  uint64_t seed = 0;
  bool have_seed = false, emit_dot = false, baselines = false, all_quantized = false;
  int threads = 1, repeats = 5, grid = 10000, max_group = 12, random_seeds = 3;
  int64_t trials = 10000, samples = 1;

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<uint64_t>(
           "--seed",
           [&](const uint64_t& v) {
             seed = v;
             have_seed = true;
           },
           "rng seed (required; randomized runs never pick one implicitly)")
        ->required();
  };

  auto* p_part = app.add_subcommand("partition", "split a graph into sequential groups");
  p_part->add_option("--graph", graph_path)->required();
  p_part->add_option("--out", out);
  p_part->add_option("--max-group-size", max_group);
  p_part->add_flag("--dot", emit_dot, "also emit graphviz");

  auto* p_cal = app.add_subcommand("calibrate", "measure per-layer sensitivities");
  p_cal->add_option("--graph", graph_path)->required();
  p_cal->add_option("--model", model_path)->required();
  p_cal->add_option("--calib", calib_path)->required();
  p_cal->add_option("--out", out);

  auto* p_syn = app.add_subcommand("synth-timing", "generate a synthetic timing table");
  p_syn->add_option("--graph", graph_path)->required();
  p_syn->add_option("--groups", groups_path)->required();
  p_syn->add_option("--formats", formats_path)->required();
  p_syn->add_option("--out", out);
  p_syn->add_option("--baseline-ttft", baseline_ttft);
  p_syn->add_option("--interaction", interaction);
  p_syn->add_option("--jitter", jitter);
  p_syn->add_option("--repeats", repeats);
  p_syn->add_option("--samples", samples, "token count for MAC-based nominal gains");
  p_syn->add_option("--delta-t", delta_t);
  add_seed(p_syn);

  auto* p_plan = app.add_subcommand("plan", "solve the selection problem for one tau");
  p_plan->add_option("--graph", graph_path)->required();
  p_plan->add_option("--groups", groups_path)->required();
  p_plan->add_option("--sens", sens_path)->required();
  p_plan->add_option("--formats", formats_path)->required();
  p_plan->add_option("--metric", metric, "et|tt|m");
  p_plan->add_option("--timing", timing_path);
  p_plan->add_option("--tau", tau)->required();
  p_plan->add_option("--solver", solver, "bb|brute|dp");
  p_plan->add_option("--grid", grid);
  p_plan->add_option("--samples", samples);
  p_plan->add_option("--delta-t", delta_t);
  p_plan->add_option("--delta-m", delta_m);
  p_plan->add_option("--out", out);

  auto* p_val = app.add_subcommand("validate", "Monte-Carlo check of a plan's predictions");
  p_val->add_option("--graph", graph_path)->required();
  p_val->add_option("--model", model_path)->required();
  p_val->add_option("--calib", calib_path)->required();
  p_val->add_option("--formats", formats_path)->required();
  p_val->add_option("--groups", groups_path)->required();
  p_val->add_option("--plan", plan_path)->required();
  p_val->add_option("--trials", trials);
  p_val->add_option("--threads", threads);
  p_val->add_option("--out", out);
  add_seed(p_val);

  auto* p_sw = app.add_subcommand("sweep", "plan across a list of taus");
  p_sw->add_option("--graph", graph_path)->required();
  p_sw->add_option("--groups", groups_path)->required();
  p_sw->add_option("--sens", sens_path)->required();
  p_sw->add_option("--formats", formats_path)->required();
  p_sw->add_option("--metric", metric, "et|tt|m");
  p_sw->add_option("--timing", timing_path);
  p_sw->add_option("--taus", taus)->required()->delimiter(',');
  p_sw->add_flag("--baselines", baselines, "also emit prefix/random rows");
  p_sw->add_option("--random-seeds", random_seeds, "random-baseline curves per tau");
  p_sw->add_option("--seed", seed)->each([&](const std::string&) { have_seed = true; });
  p_sw->add_flag("--all-quantized", all_quantized);
  p_sw->add_option("--samples", samples);
  p_sw->add_option("--delta-t", delta_t);
  p_sw->add_option("--delta-m", delta_m);
  p_sw->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (p_part->parsed()) return cmd_partition(graph_path, out, emit_dot, max_group);
    if (p_cal->parsed()) return cmd_calibrate(graph_path, model_path, calib_path, out);
    if (p_syn->parsed())
      return cmd_synth_timing(graph_path, groups_path, formats_path, seed, out, baseline_ttft,
                              interaction, jitter, repeats, samples, delta_t);
    if (p_plan->parsed())
      return cmd_plan(graph_path, groups_path, sens_path, formats_path, metric, timing_path, tau,
                      out, solver, grid, samples, delta_t, delta_m);
    if (p_val->parsed())
      return cmd_validate(graph_path, model_path, calib_path, formats_path, groups_path, plan_path,
                          trials, seed, threads, out);
    if (p_sw->parsed()) {
      if (baselines && !have_seed)
        fail(Errc::MissingInput, "--baselines randomizes; pass an explicit --seed");
      return cmd_sweep(graph_path, groups_path, sens_path, formats_path, metric, timing_path, taus,
                       out, baselines, random_seeds, seed, all_quantized, samples, delta_t,
                       delta_m);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.code()) {
      case Errc::Infeasible:
      case Errc::TooLarge:
      case Errc::GroupTooLarge:
      case Errc::NonConvergingFrontier:
        return 2;
      default:
        return 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
