#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "mpq/model.hpp"

namespace mpq {

// ----- layer primitives -----

// Y = X W^T (+ broadcast bias); X is N x C, W is K x C.
inline Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* b = nullptr) {
  if (x.rank() != 2 || w.rank() != 2 || x.shape[1] != w.shape[1])
    fail(Errc::ShapeMismatch, "linear: x " + shape_str(x) + " vs w " + shape_str(w));
  const int64_t n = x.shape[0], c = x.shape[1], k = w.shape[0];
  if (b && (b->rank() != 1 || b->shape[0] != k)) fail(Errc::ShapeMismatch, "linear: bias");
  Tensor y = Tensor::zeros({n, k});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j) {
      double acc = b ? b->data[static_cast<size_t>(j)] : 0.0;
      for (int64_t l = 0; l < c; ++l) acc += x.at(i, l) * w.at(j, l);
      y.at(i, j) = acc;
    }
  return y;
}

// Row-wise dot products: y_n = <x0 row n, x1 row n>; output N x 1.
inline Tensor bgemm_forward(const Tensor& x0, const Tensor& x1) {
  if (x0.rank() != 2 || !x0.same_shape(x1))
    fail(Errc::ShapeMismatch, "bgemm: " + shape_str(x0) + " vs " + shape_str(x1));
  const int64_t n = x0.shape[0], c = x0.shape[1];
  Tensor y = Tensor::zeros({n, 1});
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int64_t l = 0; l < c; ++l) acc += x0.at(i, l) * x1.at(i, l);
    y.at(i, 0) = acc;
  }
  return y;
}

// ----- perturbations (quantization-noise injection and finite differences) -----

// Additive deltas applied to a quantizable layer's consumed operands and, for
// linear layers, its weight. Deltas apply at the consumption edge only: a
// producer feeding two layers is perturbed independently per consumer, which
// matches how each layer quantizes its own operand view.
struct LayerPerturbation {
  std::vector<Tensor> operand_delta;     // aligned with operand order; may be empty
  std::optional<Tensor> weight_delta;    // K x C, linear only
};

using Perturbation = std::map<int, LayerPerturbation>;

// ----- tape -----

struct TapeEntry {
  int vertex = -1;
  std::vector<Tensor> operands;  // values as consumed (post-perturbation)
  Tensor output;
};

struct Tape {
  double loss = 0.0;
  std::vector<TapeEntry> entries;       // in execution (topo) order
  std::map<int, size_t> entry_of;       // vertex id -> entries index
  Tensor loss_grad;                     // d loss / d sink output, 1 x W
};

namespace detail {

inline Tensor op_forward(const OpaqueOp& op, const std::vector<Tensor>& in) {
  switch (op.kind) {
    case OpKind::Softmax: {
      const Tensor& x = in[0];
      Tensor y = Tensor::zeros(x.shape);
      for (int64_t r = 0; r < x.rows(); ++r) {
        double mx = x.at(r, 0);
        for (int64_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
        double z = 0.0;
        for (int64_t c = 0; c < x.cols(); ++c) z += std::exp(x.at(r, c) - mx);
        for (int64_t c = 0; c < x.cols(); ++c) y.at(r, c) = std::exp(x.at(r, c) - mx) / z;
      }
      return y;
    }
    case OpKind::Gelu: {
      const Tensor& x = in[0];
      Tensor y = Tensor::zeros(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        y.data[i] = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
      }
      return y;
    }
    case OpKind::Relu: {
      const Tensor& x = in[0];
      Tensor y = Tensor::zeros(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::max(0.0, x.data[i]);
      return y;
    }
    case OpKind::LayerNorm: {
      constexpr double kEps = 1e-8;
      const Tensor& x = in[0];
      Tensor y = Tensor::zeros(x.shape);
      const int64_t w = x.cols();
      for (int64_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (int64_t c = 0; c < w; ++c) mean += x.at(r, c);
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (int64_t c = 0; c < w; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + kEps);
        for (int64_t c = 0; c < w; ++c) y.at(r, c) = (x.at(r, c) - mean) * inv;
      }
      return y;
    }
    case OpKind::Add:
    case OpKind::Mul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      // width-1 rows broadcast against width-W rows
      const bool a1 = a.cols() == 1, b1 = b.cols() == 1;
      if (a.rows() != b.rows() || (a.cols() != b.cols() && !a1 && !b1))
        fail(Errc::ShapeMismatch, "add/mul: " + shape_str(a) + " vs " + shape_str(b));
      const int64_t w = std::max(a.cols(), b.cols());
      Tensor y = Tensor::zeros({a.rows(), w});
      for (int64_t r = 0; r < a.rows(); ++r)
        for (int64_t c = 0; c < w; ++c) {
          const double av = a.at(r, a1 ? 0 : c);
          const double bv = b.at(r, b1 ? 0 : c);
          y.at(r, c) = op.kind == OpKind::Add ? av + bv : av * bv;
        }
      return y;
    }
    case OpKind::Scale: {
      const Tensor& x = in[0];
      Tensor y = Tensor::zeros(x.shape);
      for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = op.factor * x.data[i];
      return y;
    }
  }
  fail(Errc::MissingBinding, "unhandled op");
}

// Gradients w.r.t. each consumed operand given the output gradient.
inline std::vector<Tensor> op_backward(const OpaqueOp& op, const std::vector<Tensor>& in,
                                       const Tensor& out, const Tensor& gy) {
  switch (op.kind) {
    case OpKind::Softmax: {
      Tensor gx = Tensor::zeros(in[0].shape);
      for (int64_t r = 0; r < out.rows(); ++r) {
        double dot = 0.0;
        for (int64_t c = 0; c < out.cols(); ++c) dot += gy.at(r, c) * out.at(r, c);
        for (int64_t c = 0; c < out.cols(); ++c)
          gx.at(r, c) = out.at(r, c) * (gy.at(r, c) - dot);
      }
      return {gx};
    }
    case OpKind::Gelu: {
      Tensor gx = Tensor::zeros(in[0].shape);
      for (size_t i = 0; i < in[0].data.size(); ++i) {
        const double v = in[0].data[i];
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
        gx.data[i] = gy.data[i] * (cdf + v * pdf);
      }
      return {gx};
    }
    case OpKind::Relu: {
      Tensor gx = Tensor::zeros(in[0].shape);
      for (size_t i = 0; i < in[0].data.size(); ++i)
        gx.data[i] = in[0].data[i] > 0.0 ? gy.data[i] : 0.0;
      return {gx};
    }
    case OpKind::LayerNorm: {
      constexpr double kEps = 1e-8;
      const Tensor& x = in[0];
      Tensor gx = Tensor::zeros(x.shape);
      const int64_t w = x.cols();
      for (int64_t r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (int64_t c = 0; c < w; ++c) mean += x.at(r, c);
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (int64_t c = 0; c < w; ++c) var += (x.at(r, c) - mean) * (x.at(r, c) - mean);
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + kEps);
        double gmean = 0.0, gdot = 0.0;
        for (int64_t c = 0; c < w; ++c) {
          gmean += gy.at(r, c);
          gdot += gy.at(r, c) * out.at(r, c);
        }
        gmean /= static_cast<double>(w);
        gdot /= static_cast<double>(w);
        for (int64_t c = 0; c < w; ++c)
          gx.at(r, c) = inv * (gy.at(r, c) - gmean - out.at(r, c) * gdot);
      }
      return {gx};
    }
    case OpKind::Add:
    case OpKind::Mul: {
      const Tensor& a = in[0];
      const Tensor& b = in[1];
      const bool a1 = a.cols() == 1, b1 = b.cols() == 1;
      Tensor ga = Tensor::zeros(a.shape);
      Tensor gb = Tensor::zeros(b.shape);
      for (int64_t r = 0; r < gy.rows(); ++r)
        for (int64_t c = 0; c < gy.cols(); ++c) {
          const double g = gy.at(r, c);
          const double av = a.at(r, a1 ? 0 : c);
          const double bv = b.at(r, b1 ? 0 : c);
          if (op.kind == OpKind::Add) {
            ga.at(r, a1 ? 0 : c) += g;
            gb.at(r, b1 ? 0 : c) += g;
          } else {
            ga.at(r, a1 ? 0 : c) += g * bv;
            gb.at(r, b1 ? 0 : c) += g * av;
          }
        }
      return {ga, gb};
    }
    case OpKind::Scale: {
      Tensor gx = Tensor::zeros(in[0].shape);
      for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] = op.factor * gy.data[i];
      return {gx};
    }
  }
  fail(Errc::MissingBinding, "unhandled op");
}

inline double loss_value(LossKind kind, const Tensor& y, const Tensor* target_row, int target_class,
                         Tensor* grad_out) {
  const int64_t w = y.cols();
  if (kind == LossKind::MeanSquaredError) {
    if (!target_row || !y.same_shape(*target_row))
      fail(Errc::ShapeMismatch, "mse target shape");
    double g = 0.0;
    Tensor gy = Tensor::zeros(y.shape);
    for (int64_t c = 0; c < w; ++c) {
      const double d = y.at(0, c) - target_row->at(0, c);
      g += d * d;
      gy.at(0, c) = 2.0 * d / static_cast<double>(w);
    }
    g /= static_cast<double>(w);
    if (grad_out) *grad_out = std::move(gy);
    return g;
  }
  // cross-entropy over logits with log-sum-exp stabilization
  if (target_class < 0 || target_class >= w)
    fail(Errc::IndexOutOfRange, "target class " + std::to_string(target_class));
  double mx = y.at(0, 0);
  for (int64_t c = 1; c < w; ++c) mx = std::max(mx, y.at(0, c));
  double z = 0.0;
  for (int64_t c = 0; c < w; ++c) z += std::exp(y.at(0, c) - mx);
  const double lse = mx + std::log(z);
  const double g = lse - y.at(0, target_class);
  if (grad_out) {
    Tensor gy = Tensor::zeros(y.shape);
    for (int64_t c = 0; c < w; ++c)
      gy.at(0, c) = std::exp(y.at(0, c) - mx) / z - (c == target_class ? 1.0 : 0.0);
    *grad_out = std::move(gy);
  }
  return g;
}

}  // namespace detail

// ----- forward -----

// Runs one sample (1 x C row) through the graph to its scalar loss. When a
// perturbation is given, deltas are added to the named layers' consumed
// operands and weights. Fills a tape when requested.
inline double forward_loss_sample(const ToyModel& model, const Tensor& input_row,
                                  const Tensor* target_row, int target_class,
                                  Tape* tape = nullptr, const Perturbation* pert = nullptr) {
  std::map<int, Tensor> outputs;
  if (tape) {
    tape->entries.clear();
    tape->entry_of.clear();
  }

  for (int id : model.graph.topo_order()) {
    const Vertex& v = model.graph.vertex(id);
    const auto& preds = model.graph.predecessors(id);

    std::vector<Tensor> ops;
    if (preds.empty())
      ops.push_back(input_row);
    else
      for (int p : preds) ops.push_back(outputs.at(p));

    const LayerPerturbation* lp = nullptr;
    if (pert) {
      auto it = pert->find(id);
      if (it != pert->end()) lp = &it->second;
    }
    if (lp)
      for (size_t k = 0; k < lp->operand_delta.size() && k < ops.size(); ++k) {
        const Tensor& d = lp->operand_delta[k];
        if (d.size() == 0) continue;
        if (!d.same_shape(ops[k])) fail(Errc::ShapeMismatch, "operand delta shape");
        for (size_t i = 0; i < ops[k].data.size(); ++i) ops[k].data[i] += d.data[i];
      }

    Tensor out;
    if (const auto* lin = std::get_if<LinearKind>(&v.kind)) {
      (void)lin;
      const LinearParams& p = model.params.at(id);
      if (lp && lp->weight_delta) {
        Tensor w = p.weight;
        if (!w.same_shape(*lp->weight_delta)) fail(Errc::ShapeMismatch, "weight delta shape");
        for (size_t i = 0; i < w.data.size(); ++i) w.data[i] += lp->weight_delta->data[i];
        out = linear_forward(ops[0], w, p.bias ? &*p.bias : nullptr);
      } else {
        out = linear_forward(ops[0], p.weight, p.bias ? &*p.bias : nullptr);
      }
    } else if (std::holds_alternative<BgemmKind>(v.kind)) {
      out = bgemm_forward(ops[0], ops[1]);
    } else {
      out = detail::op_forward(model.opaque_ops.at(id), ops);
    }
    if (!out.all_finite())
      fail(Errc::NumericOverflow, "non-finite output at vertex " + std::to_string(id));

    if (tape) {
      tape->entry_of[id] = tape->entries.size();
      tape->entries.push_back({id, std::move(ops), out});
    }
    outputs[id] = std::move(out);
  }

  const Tensor& y = outputs.at(model.graph.sink());
  Tensor gy;
  const double g =
      detail::loss_value(model.loss, y, target_row, target_class, tape ? &gy : nullptr);
  if (!std::isfinite(g)) fail(Errc::NumericOverflow, "non-finite loss");
  if (tape) {
    tape->loss = g;
    tape->loss_grad = std::move(gy);
  }
  return g;
}

inline double forward_loss_sample(const ToyModel& model, const CalibBatch& batch, int64_t r,
                                  Tape* tape = nullptr, const Perturbation* pert = nullptr) {
  const Tensor row = batch.inputs.extract_row(r);
  if (const auto* t = std::get_if<Tensor>(&batch.targets)) {
    const Tensor trow = t->extract_row(r);
    return forward_loss_sample(model, row, &trow, -1, tape, pert);
  }
  const auto& cls = std::get<std::vector<int>>(batch.targets);
  if (r >= static_cast<int64_t>(cls.size())) fail(Errc::IndexOutOfRange, "target row");
  return forward_loss_sample(model, row, nullptr, cls[static_cast<size_t>(r)], tape, pert);
}

// Per-sample losses over a batch; one tape per sample when requested.
inline std::vector<double> forward_loss(const ToyModel& model, const CalibBatch& batch,
                                        std::vector<Tape>* tapes = nullptr) {
  const int64_t n = batch.sample_count();
  if (n < 1) fail(Errc::ShapeMismatch, "empty batch");
  std::vector<double> losses(static_cast<size_t>(n));
  if (tapes) tapes->assign(static_cast<size_t>(n), {});
  for (int64_t r = 0; r < n; ++r)
    losses[static_cast<size_t>(r)] =
        forward_loss_sample(model, batch, r, tapes ? &(*tapes)[static_cast<size_t>(r)] : nullptr);
  return losses;
}

// ----- backward -----

// Extended input of one quantizable layer for one sample: z = [x; vec(W)] for
// linear, [x0; x1] for bgemm, with the matching loss gradient. The activation
// gradient is the message flowing through this layer's consumption edge, not
// the accumulated producer gradient, so fan-out producers contribute one
// record slot per consumer.
struct ExtendedInputRecord {
  int layer = -1;
  std::vector<double> z;
  std::vector<double> zdot;
};

inline std::map<int, ExtendedInputRecord> backward_extended(const ToyModel& model,
                                                            const Tape& tape) {
  std::map<int, Tensor> out_grad;
  for (const auto& e : tape.entries) out_grad[e.vertex] = Tensor::zeros(e.output.shape);
  out_grad[model.graph.sink()] = tape.loss_grad;

  std::map<int, ExtendedInputRecord> records;

  for (auto it = tape.entries.rbegin(); it != tape.entries.rend(); ++it) {
    const TapeEntry& e = *it;
    const Vertex& v = model.graph.vertex(e.vertex);
    const auto& preds = model.graph.predecessors(e.vertex);
    const Tensor& gy = out_grad.at(e.vertex);

    std::vector<Tensor> messages;
    std::optional<Tensor> weight_grad;

    if (std::holds_alternative<LinearKind>(v.kind)) {
      const LinearParams& p = model.params.at(e.vertex);
      const Tensor& x = e.operands[0];
      const int64_t c = x.cols(), k = p.weight.shape[0];
      Tensor gx = Tensor::zeros(x.shape);
      Tensor gw = Tensor::zeros(p.weight.shape);
      for (int64_t r = 0; r < x.rows(); ++r)
        for (int64_t j = 0; j < k; ++j) {
          const double g = gy.at(r, j);
          for (int64_t l = 0; l < c; ++l) {
            gx.at(r, l) += g * p.weight.at(j, l);
            gw.at(j, l) += g * x.at(r, l);
          }
        }
      messages.push_back(std::move(gx));
      weight_grad = std::move(gw);
    } else if (std::holds_alternative<BgemmKind>(v.kind)) {
      const Tensor& x0 = e.operands[0];
      const Tensor& x1 = e.operands[1];
      Tensor g0 = Tensor::zeros(x0.shape);
      Tensor g1 = Tensor::zeros(x1.shape);
      for (int64_t r = 0; r < x0.rows(); ++r) {
        const double g = gy.at(r, 0);
        for (int64_t l = 0; l < x0.cols(); ++l) {
          g0.at(r, l) = g * x1.at(r, l);
          g1.at(r, l) = g * x0.at(r, l);
        }
      }
      messages.push_back(std::move(g0));
      messages.push_back(std::move(g1));
    } else {
      messages = detail::op_backward(model.opaque_ops.at(e.vertex), e.operands, e.output, gy);
    }

    // accumulate messages into producers
    for (size_t k = 0; k < preds.size(); ++k) {
      Tensor& acc = out_grad.at(preds[k]);
      for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += messages[k].data[i];
    }

    if (is_quantizable(v.kind)) {
      ExtendedInputRecord rec;
      rec.layer = e.vertex;
      for (const Tensor& op : e.operands)
        rec.z.insert(rec.z.end(), op.data.begin(), op.data.end());
      if (weight_grad) {
        const Tensor& w = model.params.at(e.vertex).weight;
        rec.z.insert(rec.z.end(), w.data.begin(), w.data.end());
      }
      for (const Tensor& m : messages)
        rec.zdot.insert(rec.zdot.end(), m.data.begin(), m.data.end());
      if (weight_grad)
        rec.zdot.insert(rec.zdot.end(), weight_grad->data.begin(), weight_grad->data.end());
      records[e.vertex] = std::move(rec);
    }
  }
  return records;
}

// ----- finite-difference oracle -----

// Central-difference check of every extended-input coordinate. Pure test
// oracle: independent of the backward pass. Returns the max of
// |analytic - fd| / (|analytic| + eps_floor).
inline double finite_diff_check(const ToyModel& model, const CalibBatch& batch, double h = 1e-5,
                                double eps_floor = 1e-3) {
  int64_t coords = 0;
  for (const auto& v : model.graph.vertices()) {
    if (const auto* lin = std::get_if<LinearKind>(&v.kind))
      coords += lin->in_features * (1 + lin->out_features);
    else if (const auto* bg = std::get_if<BgemmKind>(&v.kind))
      coords += 2 * bg->dim;
  }
  if (coords * batch.sample_count() > 200000)
    fail(Errc::TooLarge, "model too large for the finite-difference oracle");

  double worst = 0.0;
  for (int64_t r = 0; r < batch.sample_count(); ++r) {
    Tape tape;
    forward_loss_sample(model, batch, r, &tape);
    const auto records = backward_extended(model, tape);

    for (const auto& [layer, rec] : records) {
      const Vertex& v = model.graph.vertex(layer);
      const auto& entry = tape.entries[tape.entry_of.at(layer)];

      // operand slot sizes in z order, then the weight block for linear layers
      std::vector<int64_t> slot_sizes;
      for (const Tensor& op : entry.operands) slot_sizes.push_back(op.size());
      const bool has_w = std::holds_alternative<LinearKind>(v.kind);
      if (has_w) slot_sizes.push_back(model.params.at(layer).weight.size());

      size_t zi = 0;
      for (size_t slot = 0; slot < slot_sizes.size(); ++slot) {
        for (int64_t i = 0; i < slot_sizes[slot]; ++i, ++zi) {
          auto eval = [&](double delta) {
            Perturbation pert;
            LayerPerturbation lp;
            lp.operand_delta.resize(entry.operands.size());
            const bool weight_slot = has_w && slot + 1 == slot_sizes.size();
            if (weight_slot) {
              Tensor d = Tensor::zeros(model.params.at(layer).weight.shape);
              d.data[static_cast<size_t>(i)] = delta;
              lp.weight_delta = std::move(d);
            } else {
              Tensor d = Tensor::zeros(entry.operands[slot].shape);
              d.data[static_cast<size_t>(i)] = delta;
              lp.operand_delta[slot] = std::move(d);
            }
            pert[layer] = std::move(lp);
            return forward_loss_sample(model, batch, r, nullptr, &pert);
          };
          const double fd = (eval(h) - eval(-h)) / (2.0 * h);
          const double an = rec.zdot[zi];
          worst = std::max(worst, std::abs(an - fd) / (std::abs(an) + eps_floor));
        }
      }
    }
  }
  return worst;
}

}  // namespace mpq
