#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mpq/graph.hpp"
#include "mpq/tensor.hpp"

namespace mpq {

// Builtin opaque ops; enough to express transformer-shaped toys.
enum class OpKind { Softmax, Gelu, Relu, LayerNorm, Add, Mul, Scale };

struct OpaqueOp {
  OpKind kind = OpKind::Scale;
  double factor = 1.0;  // Scale only
};

inline std::optional<OpKind> parse_op_tag(const std::string& tag) {
  if (tag == "softmax") return OpKind::Softmax;
  if (tag == "gelu") return OpKind::Gelu;
  if (tag == "relu") return OpKind::Relu;
  if (tag == "layernorm") return OpKind::LayerNorm;
  if (tag == "add") return OpKind::Add;
  if (tag == "mul") return OpKind::Mul;
  if (tag == "scale") return OpKind::Scale;
  return std::nullopt;
}

inline int op_arity(OpKind k) {
  return (k == OpKind::Add || k == OpKind::Mul) ? 2 : 1;
}

enum class LossKind { CrossEntropy, MeanSquaredError };

struct LinearParams {
  Tensor weight;                // K x C
  std::optional<Tensor> bias;   // K
};

// Executable toy network: a CompGraph plus parameters for linear vertices and
// op bindings for opaque ones. The single source vertex consumes the batch
// input; the sink output feeds the loss.
struct ToyModel {
  CompGraph graph;
  std::map<int, LinearParams> params;
  std::map<int, OpaqueOp> opaque_ops;
  LossKind loss = LossKind::MeanSquaredError;

  void validate() const;
};

struct CalibBatch {
  Tensor inputs;                                    // N x C_in
  std::variant<Tensor, std::vector<int>> targets;   // N x W values, or N class ids

  int64_t sample_count() const { return inputs.rows(); }
};

inline void ToyModel::validate() const {
  if (graph.sources().size() != 1)
    fail(Errc::InvalidVertex, "executable model needs exactly one source vertex");
  for (const auto& v : graph.vertices()) {
    const int preds = static_cast<int>(graph.predecessors(v.id).size());
    const bool is_source = preds == 0;
    if (const auto* lin = std::get_if<LinearKind>(&v.kind)) {
      if (!is_source && preds != 1)
        fail(Errc::InvalidVertex, "linear vertex " + std::to_string(v.id) + " needs one input");
      auto it = params.find(v.id);
      if (it == params.end())
        fail(Errc::MissingBinding, "no parameters for linear vertex " + std::to_string(v.id));
      const auto& p = it->second;
      if (p.weight.rank() != 2 || p.weight.shape[0] != lin->out_features ||
          p.weight.shape[1] != lin->in_features)
        fail(Errc::ShapeMismatch, "weight of vertex " + std::to_string(v.id) + " is " +
                                      shape_str(p.weight) + ", expected [" +
                                      std::to_string(lin->out_features) + "x" +
                                      std::to_string(lin->in_features) + "]");
      if (lin->has_bias != p.bias.has_value())
        fail(Errc::ShapeMismatch, "bias presence mismatch at vertex " + std::to_string(v.id));
      if (p.bias && (p.bias->rank() != 1 || p.bias->shape[0] != lin->out_features))
        fail(Errc::ShapeMismatch, "bias of vertex " + std::to_string(v.id));
    } else if (std::holds_alternative<BgemmKind>(v.kind)) {
      if (preds != 2)
        fail(Errc::InvalidVertex, "bgemm vertex " + std::to_string(v.id) + " needs two inputs");
    } else {
      auto it = opaque_ops.find(v.id);
      if (it == opaque_ops.end())
        fail(Errc::MissingBinding, "no op binding for opaque vertex " + std::to_string(v.id));
      const int want = op_arity(it->second.kind);
      if (is_source && want == 1)
        continue;  // unary source consumes the batch input
      if (preds != want)
        fail(Errc::InvalidVertex, "opaque vertex " + std::to_string(v.id) + " expects " +
                                      std::to_string(want) + " inputs, has " + std::to_string(preds));
    }
  }
}

}  // namespace mpq
