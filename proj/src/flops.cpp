#include "sudormrf/flops.hpp"

namespace sudormrf {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kConvTranspose1d: return "conv_transpose1d";
    case OpKind::kRelu: return "relu";
    case OpKind::kPRelu: return "prelu";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kGlobalLayerNorm: return "global_layer_norm";
    case OpKind::kInterp: return "nearest_interp";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kGroupAttention: return "group_attention";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSelect: return "select";
    case OpKind::kStack: return "stack";
    case OpKind::kLoss: return "loss";
    case OpKind::kCount: break;
  }
  return "unknown";
}

FlopRecorder& FlopRecorder::operator+=(const FlopRecorder& other) {
  for (std::size_t i = 0; i < tallies_.size(); ++i) {
    tallies_[i].calls += other.tallies_[i].calls;
    tallies_[i].macs += other.tallies_[i].macs;
    tallies_[i].elementwise += other.tallies_[i].elementwise;
  }
  macs_ += other.macs_;
  elementwise_ += other.elementwise_;
  return *this;
}

}  // namespace sudormrf
