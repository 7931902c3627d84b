#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpq/formats.hpp"
#include "mpq/graph.hpp"
#include "mpq/model.hpp"
#include "mpq/perfmodel.hpp"
#include "mpq/rng.hpp"
#include "mpq/sensitivity.hpp"
#include "mpq/solver.hpp"

namespace mpq {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// round-trip-exact, deterministic float formatting for CSV outputs
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingInput, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail(Errc::ParseError, path + ": " + e.what());
  }
  return j;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::MissingInput, "cannot write " + path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingInput, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Version field is mandatory in artifacts this tool emits; external files
// (graphs, registries, hardware timing tables) may omit it.
inline void check_schema(const json& j, const std::string& what, bool required) {
  if (!j.contains("schema_version")) {
    if (required) fail(Errc::SchemaVersionMismatch, what + " lacks schema_version");
    return;
  }
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    fail(Errc::SchemaVersionMismatch,
         what + " has schema_version " + j["schema_version"].dump() + ", expected " +
             std::to_string(kSchemaVersion));
}

// ----- graph -----

inline GraphSpec graph_spec_from_json(const json& j) {
  check_schema(j, "graph", false);
  GraphSpec spec;
  if (!j.contains("vertices") || !j["vertices"].is_array())
    fail(Errc::ParseError, "graph: missing vertices array");
  for (const auto& v : j["vertices"]) {
    Vertex vx;
    vx.id = v.at("id").get<int>();
    vx.name = v.value("name", "v" + std::to_string(vx.id));
    const std::string kind = v.at("kind").get<std::string>();
    if (kind == "linear") {
      LinearKind k;
      k.in_features = v.at("in_features").get<int64_t>();
      k.out_features = v.at("out_features").get<int64_t>();
      k.has_bias = v.value("has_bias", false);
      vx.kind = k;
    } else if (kind == "bgemm") {
      vx.kind = BgemmKind{v.at("dim").get<int64_t>()};
    } else if (kind == "opaque") {
      vx.kind = OpaqueKind{v.value("tag", vx.name)};
    } else {
      fail(Errc::ParseError, "graph: unknown vertex kind '" + kind + "'");
    }
    spec.vertices.push_back(std::move(vx));
  }
  for (const auto& e : j.value("edges", json::array())) {
    if (!e.is_array() || e.size() != 2) fail(Errc::ParseError, "graph: edge must be [src,dst]");
    spec.edges.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  return spec;
}

inline CompGraph load_graph(const std::string& path) {
  return build_graph(graph_spec_from_json(load_json_file(path)));
}

// ----- groups -----

inline json groups_to_json(const std::vector<Group>& groups) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["groups"] = json::array();
  for (const auto& g : groups) j["groups"].push_back({{"j", g.index}, {"layers", g.layers}});
  return j;
}

inline std::vector<Group> groups_from_json(const json& j) {
  check_schema(j, "groups file", true);
  std::vector<Group> out;
  for (const auto& g : j.at("groups")) {
    Group grp;
    grp.index = g.at("j").get<int>();
    for (const auto& l : g.at("layers")) grp.layers.push_back(l.get<int>());
    out.push_back(std::move(grp));
  }
  return out;
}

// ----- formats -----

inline FormatRegistry formats_from_json(const json& j) {
  const json& arr = j.is_array() ? j : j.at("formats");
  std::vector<FormatSpec> specs;
  for (const auto& f : arr) {
    FormatSpec s;
    s.name = f.at("name").get<std::string>();
    s.mantissa_bits = f.at("mantissa_bits").get<int>();
    s.byte_width = f.at("byte_width").get<int>();
    s.is_baseline = f.value("baseline", false);
    specs.push_back(std::move(s));
  }
  return FormatRegistry(std::move(specs));
}

inline FormatRegistry load_formats(const std::string& path) {
  return formats_from_json(load_json_file(path));
}

// ----- sensitivity report -----

inline std::string sensitivity_to_csv(const SensitivityReport& rep,
                                      const std::map<int, std::string>& names) {
  std::ostringstream os;
  os << "# mean_sq_loss=" << fmt_double(rep.mean_sq_loss) << " samples=" << rep.sample_count
     << "\n";
  os << "layer_id,layer_name,sensitivity\n";
  for (const auto& [id, s] : rep.s) {
    auto it = names.find(id);
    os << id << "," << (it == names.end() ? "" : it->second) << "," << fmt_double(s) << "\n";
  }
  return os.str();
}

inline SensitivityReport sensitivity_from_csv(const std::string& text) {
  SensitivityReport rep;
  std::istringstream is(text);
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto mpos = line.find("mean_sq_loss=");
      const auto spos = line.find("samples=");
      if (mpos == std::string::npos || spos == std::string::npos)
        fail(Errc::ParseError, "sensitivity csv: bad header comment");
      rep.mean_sq_loss = std::stod(line.substr(mpos + 13));
      rep.sample_count = std::stoll(line.substr(spos + 8));
      have_header = true;
      continue;
    }
    if (line.rfind("layer_id", 0) == 0) continue;
    std::istringstream ls(line);
    std::string id_s, name_s, val_s;
    if (!std::getline(ls, id_s, ',') || !std::getline(ls, name_s, ',') || !std::getline(ls, val_s))
      fail(Errc::ParseError, "sensitivity csv: bad row '" + line + "'");
    rep.s[std::stoi(id_s)] = std::stod(val_s);
  }
  if (!have_header) fail(Errc::ParseError, "sensitivity csv: missing mean_sq_loss header");
  return rep;
}

// ----- toy model -----

inline Tensor tensor_from_json(const json& j) {
  std::vector<int64_t> shape;
  for (const auto& d : j.at("shape")) shape.push_back(d.get<int64_t>());
  std::vector<double> data;
  for (const auto& v : j.at("data")) data.push_back(v.get<double>());
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor gaussian_tensor(std::vector<int64_t> shape, double std_dev, uint64_t seed) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, std_dev);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

// Model file: loss kind, a default weight-init spec, optional per-layer
// overrides (init spec or inline tensors), and op bindings for opaque
// vertices. Opaque vertices whose graph tag already names a builtin need no
// explicit binding.
inline ToyModel toy_model_from_json(const CompGraph& graph, const json& j) {
  check_schema(j, "model file", false);
  ToyModel model;
  model.graph = graph;

  const std::string loss = j.value("loss", "mse");
  if (loss == "cross_entropy" || loss == "ce")
    model.loss = LossKind::CrossEntropy;
  else if (loss == "mse" || loss == "mean_squared_error")
    model.loss = LossKind::MeanSquaredError;
  else
    fail(Errc::ParseError, "model: unknown loss '" + loss + "'");

  const json default_init = j.value("init", json({{"kind", "gaussian"}, {"std", 0.1}, {"seed", 0}}));

  auto init_tensor = [&](const json& spec, std::vector<int64_t> shape, int layer_id,
                         uint64_t salt) -> Tensor {
    const std::string kind = spec.value("kind", "gaussian");
    if (kind != "gaussian") fail(Errc::ParseError, "model: unknown init kind '" + kind + "'");
    const double sd = spec.value("std", 0.1);
    const uint64_t seed = spec.value("seed", 0ULL);
    return gaussian_tensor(std::move(shape), sd,
                           derive_seed(seed, static_cast<uint64_t>(layer_id), salt));
  };

  const json params = j.value("params", json::object());
  for (const auto& v : graph.vertices()) {
    if (const auto* lin = std::get_if<LinearKind>(&v.kind)) {
      const std::string key = std::to_string(v.id);
      json spec = params.contains(key) ? params.at(key) : json::object();
      LinearParams p;
      if (spec.contains("weight")) {
        p.weight = tensor_from_json(spec.at("weight"));
        if (lin->has_bias) p.bias = tensor_from_json(spec.at("bias"));
      } else {
        const json init = spec.value("init", default_init);
        p.weight = init_tensor(init, {lin->out_features, lin->in_features}, v.id, 0);
        if (lin->has_bias) p.bias = init_tensor(init, {lin->out_features}, v.id, 1);
      }
      model.params[v.id] = std::move(p);
    } else if (const auto* op = std::get_if<OpaqueKind>(&v.kind)) {
      OpaqueOp bound;
      const json ops = j.value("ops", json::object());
      const json op_params = j.value("op_params", json::object());
      const std::string key = std::to_string(v.id);
      std::string tag = op->tag;
      if (ops.contains(key)) tag = ops.at(key).get<std::string>();
      auto kind = parse_op_tag(tag);
      if (!kind)
        fail(Errc::MissingBinding,
             "opaque vertex " + std::to_string(v.id) + " ('" + tag + "') has no builtin op");
      bound.kind = *kind;
      if (op_params.contains(key)) bound.factor = op_params.at(key).value("factor", 1.0);
      model.opaque_ops[v.id] = bound;
    }
  }
  model.validate();
  return model;
}

inline CalibBatch calib_from_json(const json& j) {
  check_schema(j, "calibration file", false);
  CalibBatch b;
  b.inputs = tensor_from_json(j.at("inputs"));
  const json& t = j.at("targets");
  if (t.contains("classes")) {
    std::vector<int> cls;
    for (const auto& c : t.at("classes")) cls.push_back(c.get<int>());
    if (static_cast<int64_t>(cls.size()) != b.inputs.rows())
      fail(Errc::ShapeMismatch, "calibration: classes length vs inputs rows");
    b.targets = std::move(cls);
  } else {
    Tensor tt = tensor_from_json(t);
    if (tt.rows() != b.inputs.rows())
      fail(Errc::ShapeMismatch, "calibration: target rows vs input rows");
    b.targets = std::move(tt);
  }
  return b;
}

// ----- timing table -----

inline json timing_to_json(const TimingTable& t) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["baseline_ttft_ms"] = t.baseline_ttft_ms;
  j["repeats"] = t.repeats;
  j["entries"] = json::array();
  for (const auto& [key, reps] : t.entries)
    j["entries"].push_back({{"group", key.first}, {"config", key.second}, {"ttft_ms", reps}});
  return j;
}

inline TimingTable timing_from_json(const json& j) {
  check_schema(j, "timing table", false);
  TimingTable t;
  t.baseline_ttft_ms = j.at("baseline_ttft_ms").get<double>();
  t.repeats = j.value("repeats", 1);
  for (const auto& e : j.at("entries")) {
    std::vector<double> reps;
    for (const auto& v : e.at("ttft_ms")) reps.push_back(v.get<double>());
    t.entries[{e.at("group").get<int>(), e.at("config").get<uint64_t>()}] = std::move(reps);
  }
  return t;
}

// ----- plan -----

inline json plan_to_json(const Solution& sol, const std::vector<Group>& groups,
                         const FormatRegistry& fmts, double tau, double budget,
                         double predicted_loss_mse, Metric metric) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["tau"] = tau;
  j["budget"] = budget;
  j["metric"] = metric_name(metric);
  j["solver"] = sol.solver;
  j["predicted_loss_mse"] = predicted_loss_mse;
  j["total_gain"] = sol.total_gain;
  j["choice"] = json::array();
  for (size_t jg = 0; jg < groups.size(); ++jg) {
    json layers = json::array();
    for (size_t l = 0; l < groups[jg].layers.size(); ++l) {
      const int f = config_format(groups[jg], sol.choice[jg], l, fmts.size());
      layers.push_back({{"id", groups[jg].layers[l]}, {"format", fmts.at(f).name}});
    }
    j["choice"].push_back(
        {{"group", groups[jg].index}, {"config", sol.choice[jg]}, {"layers", layers}});
  }
  return j;
}

inline std::pair<std::vector<uint64_t>, double> plan_choice_from_json(const json& j) {
  check_schema(j, "plan file", true);
  std::map<int, uint64_t> by_group;
  for (const auto& c : j.at("choice"))
    by_group[c.at("group").get<int>()] = c.at("config").get<uint64_t>();
  std::vector<uint64_t> choice;
  for (const auto& [g, p] : by_group) choice.push_back(p);
  return {choice, j.value("tau", 0.0)};
}

// ----- csv emitters -----

inline std::string perf_vectors_to_csv(const std::vector<PerfVector>& vecs) {
  std::ostringstream os;
  os << "group,config,metric,value\n";
  for (const auto& v : vecs)
    for (size_t p = 0; p < v.values.size(); ++p)
      os << v.group << "," << p << "," << metric_name(v.metric) << "," << fmt_double(v.values[p])
         << "\n";
  return os.str();
}

inline std::string sweep_to_csv(const std::vector<SweepPoint>& points,
                                const std::vector<Group>& groups, int format_count,
                                int baseline_format) {
  std::ostringstream os;
  os << "tau,budget,total_cost,total_gain,n_quantized_layers,strategy\n";
  for (const auto& pt : points) {
    int n_q = 0;
    for (size_t j = 0; j < groups.size(); ++j)
      for (size_t l = 0; l < groups[j].layers.size(); ++l)
        if (config_format(groups[j], pt.solution.choice[j], l, format_count) != baseline_format)
          ++n_q;
    os << fmt_double(pt.tau) << "," << fmt_double(pt.budget) << ","
       << fmt_double(pt.solution.total_cost) << "," << fmt_double(pt.solution.total_gain) << ","
       << n_q << "," << pt.strategy << "\n";
  }
  return os.str();
}

}  // namespace mpq
