#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <algorithm>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mpq/graph.hpp"
#include "mpq/model.hpp"
#include "mpq/rng.hpp"
#include "mpq/solver.hpp"
#include "mpq/tensor.hpp"

namespace mpq::test {

// ----- llama-style block fixture (graph only) -----
//
// The attention/MLP spine of a transformer block: q/k/v fan out of the input
// norm, qk_matmul joins q and k, av_matmul joins softmax(qk) and v, then
// o_proj; the MLP half runs gate/up in parallel into an activation-multiply
// and down_proj. Residual bypass edges are omitted, matching how the
// measured sub-graphs are delimited.
inline GraphSpec llama_block_spec(int n_blocks, int64_t width = 8) {
  GraphSpec spec;
  int next = 0;
  int prev = -1;  // output vertex of the previous block

  auto add = [&](const std::string& name, VertexKind kind) {
    spec.vertices.push_back({next, name, std::move(kind)});
    return next++;
  };
  auto edge = [&](int s, int d) { spec.edges.push_back({s, d}); };

  for (int b = 0; b < n_blocks; ++b) {
    const std::string suffix = "_" + std::to_string(b);
    const int ln1 = add("input_layernorm" + suffix, OpaqueKind{"layernorm"});
    if (prev >= 0) edge(prev, ln1);
    const int q = add("q_proj" + suffix, LinearKind{width, width, false});
    const int k = add("k_proj" + suffix, LinearKind{width, width, false});
    const int v = add("v_proj" + suffix, LinearKind{width, width, false});
    edge(ln1, q);
    edge(ln1, k);
    edge(ln1, v);
    const int qk = add("qk_matmul" + suffix, BgemmKind{width});
    edge(q, qk);
    edge(k, qk);
    const int sm = add("softmax" + suffix, OpaqueKind{"softmax"});
    edge(qk, sm);
    const int av = add("av_matmul" + suffix, BgemmKind{width});
    edge(sm, av);
    edge(v, av);
    const int o = add("o_proj" + suffix, LinearKind{width, width, false});
    edge(av, o);
    const int ln2 = add("post_attn_layernorm" + suffix, OpaqueKind{"layernorm"});
    edge(o, ln2);
    const int gate = add("gate_proj" + suffix, LinearKind{width, width, false});
    const int up = add("up_proj" + suffix, LinearKind{width, width, false});
    edge(ln2, gate);
    edge(ln2, up);
    const int act = add("act" + suffix, OpaqueKind{"gelu"});
    edge(gate, act);
    const int mul = add("act_mul" + suffix, OpaqueKind{"mul"});
    edge(act, mul);
    edge(up, mul);
    const int down = add("down_proj" + suffix, LinearKind{width, width, false});
    edge(mul, down);
    prev = down;
  }
  const int fin = add("final_layernorm", OpaqueKind{"layernorm"});
  edge(prev, fin);
  const int head = add("lm_head", LinearKind{width, width * 2, false});
  edge(fin, head);
  return spec;
}

// ----- executable toy transformer -----

struct ToyNet {
  ToyModel model;
  CalibBatch batch;
  std::vector<int> linear_ids;
  std::vector<int> bgemm_ids;
};

struct ToyNetConfig {
  int blocks = 2;
  int64_t width = 8;
  int64_t classes = 4;       // CE head width (MSE uses the same width)
  int64_t samples = 4;
  LossKind loss = LossKind::CrossEntropy;
  double weight_std = 0.45;
  bool softmax_mixer = false;  // insert a width-wise softmax in one block
};

// Attention scores flow through a bgemm into a broadcast multiply with the
// value stream; the score nonlinearity is smooth so finite differences stay
// clean everywhere.
inline ToyNet make_toy_net(uint64_t seed, const ToyNetConfig& cfg = {}) {
  GraphSpec spec;
  ToyNet net;
  int next = 0;
  int prev = -1;

  std::map<int, OpaqueOp> ops;

  auto add = [&](const std::string& name, VertexKind kind) {
    spec.vertices.push_back({next, name, std::move(kind)});
    return next++;
  };
  auto op = [&](const std::string& name, OpKind kind, double factor = 1.0) {
    const int id = add(name, OpaqueKind{"op"});
    ops[id] = {kind, factor};
    return id;
  };
  auto edge = [&](int s, int d) { spec.edges.push_back({s, d}); };
  auto lin = [&](const std::string& name, int64_t cin, int64_t cout, bool bias) {
    const int id = add(name, LinearKind{cin, cout, bias});
    net.linear_ids.push_back(id);
    return id;
  };

  const int64_t w = cfg.width;
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string s = "_" + std::to_string(b);
    const int ln1 = op("ln1" + s, OpKind::LayerNorm);
    if (prev >= 0) edge(prev, ln1);
    const int q = lin("q" + s, w, w, b == 0);
    const int k = lin("k" + s, w, w, false);
    const int v = lin("v" + s, w, w, false);
    edge(ln1, q);
    edge(ln1, k);
    edge(ln1, v);
    const int qk = add("qk" + s, BgemmKind{w});
    net.bgemm_ids.push_back(qk);
    edge(q, qk);
    edge(k, qk);
    const int sc = op("scale" + s, OpKind::Scale, 1.0 / std::sqrt(static_cast<double>(w)));
    edge(qk, sc);
    const int act = op("score_act" + s, OpKind::Gelu);
    edge(sc, act);
    const int wv = op("weighted_v" + s, OpKind::Mul);
    edge(act, wv);
    edge(v, wv);
    const int o = lin("o" + s, w, w, b == 0);
    edge(wv, o);
    const int ln2 = op("ln2" + s, OpKind::LayerNorm);
    edge(o, ln2);
    int mlp_in = ln2;
    if (cfg.softmax_mixer && b == cfg.blocks - 1) {
      mlp_in = op("mixer" + s, OpKind::Softmax);
      edge(ln2, mlp_in);
    }
    const int gate = lin("gate" + s, w, w, false);
    const int up = lin("up" + s, w, w, false);
    edge(mlp_in, gate);
    edge(mlp_in, up);
    const int ga = op("gate_act" + s, OpKind::Gelu);
    edge(gate, ga);
    const int hm = op("mlp_mul" + s, OpKind::Mul);
    edge(ga, hm);
    edge(up, hm);
    const int down = lin("down" + s, w, w, false);
    edge(hm, down);
    prev = down;
  }
  const int head = lin("head", w, cfg.classes, false);
  edge(prev, head);

  net.model.graph = build_graph(spec);
  net.model.loss = cfg.loss;
  net.model.opaque_ops = std::move(ops);

  std::mt19937_64 rng = make_rng(seed, 1);
  std::normal_distribution<double> dist(0.0, cfg.weight_std);
  for (const auto& vx : net.model.graph.vertices()) {
    if (const auto* l = std::get_if<LinearKind>(&vx.kind)) {
      LinearParams p;
      p.weight = Tensor::zeros({l->out_features, l->in_features});
      for (auto& x : p.weight.data) x = dist(rng);
      if (l->has_bias) {
        p.bias = Tensor::zeros({l->out_features});
        for (auto& x : p.bias->data) x = dist(rng);
      }
      net.model.params[vx.id] = std::move(p);
    }
  }
  net.model.validate();

  net.batch.inputs = Tensor::zeros({cfg.samples, w});
  for (auto& x : net.batch.inputs.data) x = dist(rng);
  if (cfg.loss == LossKind::CrossEntropy) {
    std::vector<int> cls(static_cast<size_t>(cfg.samples));
    std::uniform_int_distribution<int> cd(0, static_cast<int>(cfg.classes) - 1);
    for (auto& c : cls) c = cd(rng);
    net.batch.targets = std::move(cls);
  } else {
    Tensor t = Tensor::zeros({cfg.samples, cfg.classes});
    for (auto& x : t.data) x = dist(rng);
    net.batch.targets = std::move(t);
  }
  return net;
}

inline ToyNet random_toy_net(uint64_t seed) {
  std::mt19937_64 rng = make_rng(seed, 99);
  ToyNetConfig cfg;
  cfg.blocks = 1 + static_cast<int>(rng() % 3);
  cfg.width = 3 + static_cast<int64_t>(rng() % 10);  // <= 12
  cfg.classes = 2 + static_cast<int64_t>(rng() % 4);
  cfg.samples = 2 + static_cast<int64_t>(rng() % 2);
  cfg.loss = (rng() % 2) ? LossKind::CrossEntropy : LossKind::MeanSquaredError;
  cfg.softmax_mixer = (rng() % 3) == 0;
  cfg.weight_std = 0.3 + 0.3 * (static_cast<double>(rng() % 1000) / 1000.0);
  return make_toy_net(seed, cfg);
}

// ----- random MCKP instances -----

struct RandomInstance {
  MckpInstance inst;
  std::vector<Group> groups;
  std::vector<int> layer_order;
};

inline RandomInstance random_mckp_instance(uint64_t seed, int max_groups = 12,
                                           int max_layers = 3) {
  std::mt19937_64 rng = make_rng(seed, 7);
  std::uniform_real_distribution<double> gain_d(-2.0, 10.0);
  std::uniform_real_distribution<double> cost_d(0.0, 5.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  RandomInstance out;
  const int nj = 1 + static_cast<int>(rng() % static_cast<uint64_t>(max_groups));
  int layer_id = 0;
  double min_cost_sum = 0.0, max_cost_sum = 0.0;
  for (int j = 0; j < nj; ++j) {
    const int lj = 1 + static_cast<int>(rng() % static_cast<uint64_t>(max_layers));
    Group g;
    g.index = j;
    for (int l = 0; l < lj; ++l) g.layers.push_back(layer_id++);
    out.groups.push_back(g);

    GroupOptions go;
    const uint64_t total = group_config_count(static_cast<size_t>(lj), 2);
    go.gain.resize(total);
    go.cost.resize(total);
    go.gain[0] = 0.0;
    go.cost[0] = 0.0;
    for (uint64_t p = 1; p < total; ++p) {
      go.gain[p] = gain_d(rng);
      go.cost[p] = cost_d(rng);
    }
    double mn = go.cost[0], mx = go.cost[0];
    for (double c : go.cost) {
      mn = std::min(mn, c);
      mx = std::max(mx, c);
    }
    min_cost_sum += mn;
    max_cost_sum += mx;
    out.inst.groups.push_back(std::move(go));
  }
  out.inst.budget = min_cost_sum + u01(rng) * (max_cost_sum - min_cost_sum);
  for (const auto& g : out.groups)
    out.layer_order.insert(out.layer_order.end(), g.layers.begin(), g.layers.end());
  return out;
}

// ----- small-graph oracles -----

// All topological orders of a graph (bounded); brute-force oracle for the
// partition sequentiality property.
inline std::vector<std::vector<int>> enumerate_topo_orders(const CompGraph& g,
                                                           size_t limit = 20000) {
  std::vector<std::vector<int>> all;
  std::map<int, int> indeg;
  for (const auto& v : g.vertices()) indeg[v.id] = static_cast<int>(g.predecessors(v.id).size());
  std::vector<int> cur;

  std::function<void()> rec = [&]() {
    if (all.size() >= limit) return;
    bool any = false;
    for (auto& [id, d] : indeg) {
      if (d != -1 && d == 0) {
        any = true;
        d = -1;
        cur.push_back(id);
        for (int s : g.successors(id)) indeg[s]--;
        rec();
        for (int s : g.successors(id)) indeg[s]++;
        cur.pop_back();
        d = 0;
      }
    }
    if (!any && cur.size() == g.vertices().size()) all.push_back(cur);
  };
  rec();
  return all;
}

inline bool reaches(const CompGraph& g, int from, int to) {
  std::set<int> seen{from};
  std::vector<int> stack{from};
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    if (u == to) return true;
    for (int s : g.successors(u))
      if (seen.insert(s).second) stack.push_back(s);
  }
  return false;
}

}  // namespace mpq::test
