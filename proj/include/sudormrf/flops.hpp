#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace sudormrf {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConv1d,
  kConvTranspose1d,
  kRelu,
  kPRelu,
  kLayerNorm,
  kGlobalLayerNorm,
  kInterp,
  kAdd,
  kMul,
  kSoftmax,
  kGroupAttention,
  kTranspose,
  kReshape,
  kSelect,
  kStack,
  kLoss,
  kCount
};

std::string_view op_name(OpKind kind);

// How multiply-accumulates convert to FLOPs. The default (one MAC = one FLOP)
// is the convention the published efficiency tables follow; 2 gives the
// textbook multiply+add count.
struct FlopConvention {
  std::uint64_t flops_per_mac = 1;
};

struct OpTally {
  std::uint64_t calls = 0;
  std::uint64_t macs = 0;
  std::uint64_t elementwise = 0;
};

// Caller-owned accumulator that kernels report into. Never shared implicitly:
// a kernel only records when handed a recorder.
class FlopRecorder {
 public:
  void record(OpKind kind, std::uint64_t macs, std::uint64_t elementwise) {
    auto& t = tallies_[static_cast<std::size_t>(kind)];
    ++t.calls;
    t.macs += macs;
    t.elementwise += elementwise;
    macs_ += macs;
    elementwise_ += elementwise;
  }

  std::uint64_t macs() const noexcept { return macs_; }
  std::uint64_t elementwise() const noexcept { return elementwise_; }
  std::uint64_t flops(FlopConvention c = {}) const noexcept { return c.flops_per_mac * macs_ + elementwise_; }
  const OpTally& tally(OpKind kind) const { return tallies_[static_cast<std::size_t>(kind)]; }

  void reset() { *this = FlopRecorder{}; }
  FlopRecorder& operator+=(const FlopRecorder& other);

 private:
  std::array<OpTally, static_cast<std::size_t>(OpKind::kCount)> tallies_{};
  std::uint64_t macs_ = 0;
  std::uint64_t elementwise_ = 0;
};

inline void record(FlopRecorder* rec, OpKind kind, std::uint64_t macs, std::uint64_t elementwise) {
  if (rec) rec->record(kind, macs, elementwise);
}

// Elementwise op weights shared by the kernels and the analytic cost model.
namespace op_cost {
inline constexpr std::uint64_t kBias = 1;
inline constexpr std::uint64_t kRelu = 1;
inline constexpr std::uint64_t kPRelu = 1;
inline constexpr std::uint64_t kNorm = 4;  // two moment passes, scale, shift
inline constexpr std::uint64_t kAdd = 1;
inline constexpr std::uint64_t kMul = 1;
inline constexpr std::uint64_t kSoftmax = 3;  // exp, sum, divide per output
}  // namespace op_cost

}  // namespace sudormrf
