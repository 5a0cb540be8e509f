#pragma once

#include <span>
#include <vector>

#include "semlink/codec.hpp"
#include "semlink/ofdm.hpp"

namespace semlink {

// Descending-energy ordering of the data subchannels. ranks[r] is the data
// bin index holding rank r; ties break by ascending index. This is the only
// channel information fed back to the transmitter.
struct SubchannelOrder {
  std::vector<int> ranks;

  std::vector<int> rank_of_bin() const;  // inverse permutation
};

SubchannelOrder order_subchannels(const CsiReport& csi, const OfdmConfig& cfg);
SubchannelOrder order_subchannels(std::span<const cplx> data_bin_response);

enum class AllocatorMode { uniform, matched, learned };

// Transmit gain per rank with (1/K) * sum g^2 = 1 (total power conserved).
// The matched reference sets g^2 proportional to the ranked |h|; learned
// gains come from gradient training and are kept non-increasing in rank.
struct PowerAllocator {
  AllocatorMode mode = AllocatorMode::uniform;
  std::vector<double> gains_by_rank;

  static PowerAllocator uniform(int k);
  static PowerAllocator matched(std::span<const cplx> data_bin_response);

  void normalize_power();
  double power_sum() const;  // (1/K) sum g^2

  AllocatorSection to_section() const;
  static PowerAllocator from_section(const AllocatorSection& s);
};

// Scales the symbol on each data bin by the gain of that bin's rank; x is a
// stream laid onto consecutive OFDM symbols (K symbols each). The receiver
// inverts with the shared (order, gains) table only.
SymbolBlock allocate(std::span<const cplx> x, const SubchannelOrder& order,
                     const PowerAllocator& alloc);
SymbolBlock invert_allocate(std::span<const cplx> y, const SubchannelOrder& order,
                            const PowerAllocator& alloc);

// Significance placement: within each block of K stream symbols, symbols are
// assigned to data bins so that lower within-patch latent indices (coarser
// features) land on better-ranked subchannels. Returns, for each OFDM symbol
// block, the stream index carried by each slot. Stream indices at or beyond
// n_real (zero padding) always take the worst-ranked slots of their block.
std::vector<int> build_placement(int n_stream, int k_data, int q_reals_per_patch,
                                 const SubchannelOrder& order, int n_real = -1);

// Identity placement (slot j carries stream symbol j of its block), used
// when every subchannel has the same energy and priorities are vacuous.
std::vector<int> natural_placement(int n_stream);

// True when the response is flat to within a relative tolerance, i.e.
// ordering by energy carries no information.
bool flat_response(std::span<const cplx> data_bin_response, double rel_tol = 1e-9);
SymbolBlock place_stream(std::span<const cplx> x, std::span<const int> placement);
SymbolBlock unplace_stream(std::span<const cplx> y, std::span<const int> placement);

struct AllocatorTrainConfig {
  int steps = 400;
  int batch = 8;
  double lr = 1e-3;  // normalized-direction step, decayed as 1/sqrt(1+t/50)
  std::uint64_t seed = 7;
};

// Trains gains-by-rank by gradient descent on the unmasked-MSE loss through
// the frozen codec and the channel. After every step the gains are projected
// back onto the constraint set: power renormalization plus a non-increasing
// isotonic projection (pool adjacent violators), matching the invariant that
// learned gains never increase with rank.
PowerAllocator train_allocator(const CodecModel& model, const ChannelSpec& spec,
                               const std::vector<ImageTensor>& corpus,
                               const AllocatorTrainConfig& cfg);

}  // namespace semlink
