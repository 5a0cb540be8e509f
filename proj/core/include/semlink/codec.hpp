#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semlink/channel.hpp"
#include "semlink/image.hpp"
#include "semlink/preprocess.hpp"

namespace semlink {

// Dense row-major matrix used by the codec internals.
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

struct CodecDims {
  int patch_size = 16;
  int channels = 3;
  int patch_rows = 14;
  int patch_cols = 14;
  int d = 192;  // embedding width
  int q = 96;   // latent reals per patch

  int n_patches() const { return patch_rows * patch_cols; }
  int patch_dim() const { return patch_size * patch_size * channels; }
  int latent_count() const { return n_patches() * q; }
  int image_height() const { return patch_rows * patch_size; }
  int image_width() const { return patch_cols * patch_size; }

  // Dims for an image at bandwidth compression ratio 1/16: q = patch_dim/8
  // reals per patch (half that many complex symbols), d = 2q.
  static CodecDims for_image(int height, int width, int channels, int patch_size = 16);
};

// Patch autoencoder: per-patch embedding, per-patch compression to q reals,
// a parameterless mask operation that fills masked patches' slots with
// copies of kept patches' features (the redundancy that protects them), and
// one trainable cross-patch mixing map playing the channel-coding role; a
// sigmoid closes the encoder. The decoder mirrors each map. All maps are
// affine; the only nonlinearities are the sigmoid and its logit inverse.
struct CodecModel {
  CodecDims dims;

  Tensor enc_embed_w, enc_embed_b;  // d x P, 1 x d
  Tensor enc_mix_w, enc_mix_b;      // N x N, 1 x N
  Tensor enc_comp_w, enc_comp_b;    // q x d, 1 x q
  Tensor dec_comp_w, dec_comp_b;    // d x q, 1 x d
  Tensor dec_mix_w, dec_mix_b;      // N x N, 1 x N
  Tensor dec_embed_w, dec_embed_b;  // P x d, 1 x P

  // Adam state, one (m, v) pair per parameter tensor, plus the step count.
  std::vector<Tensor> adam_m, adam_v;
  long adam_step = 0;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  void reset_optimizer();

  // Identity construction: d = q = patch_dim, every map an identity, zero
  // biases. decode(encode(p)) is exact up to 8-bit rounding.
  static CodecModel identity(int patch_size, int channels, int patch_rows, int patch_cols);

  // Frequency-ordered orthonormal basis (zigzag 2D DCT x channel DCT) for
  // the embedding, truncation for the compression. When a corpus is given
  // the latent scales are standardized to its per-component statistics so
  // the sigmoid range is used evenly; init_gain scales that standardization.
  static CodecModel init_dct(const CodecDims& dims,
                             const std::vector<ImageTensor>* corpus = nullptr,
                             double init_gain = 1.0);

  static CodecModel init_random(const CodecDims& dims, std::uint64_t seed, double scale = 0.05);
};

struct LatentBlock {
  int n_patches = 0, q = 0;
  std::vector<double> values;  // patch-major, each in [0,1]
};

struct QuantizedBlock {
  int n_patches = 0, q = 0;
  std::vector<std::int8_t> levels;  // each in {-3,-1,1,3}
};

// Encoder: normalize to [0,1], embed, compress, mask operation (masked
// patches' feature slots carry copies of kept patches' features), mix across
// patches, sigmoid.
LatentBlock encode(const ImageTensor& p_masked, const MaskMatrix& m, const CodecModel& model);

// Deterministic redundancy assignment: the c-th masked patch copies the
// (c mod N_U)-th kept patch. Returns the source patch per masked patch,
// -1 for kept ones. Shared by transmitter and receiver.
std::vector<int> redundancy_partner(const MaskMatrix& m);

// Receiver-side combining of redundant slots: logit-domain inverse-variance
// average of each kept patch's own slot and its copies; masked patches'
// latents collapse to the neutral 0.5. per_real_noise_var (one entry per
// latent real, optional) supplies the weights; without it the average is
// unweighted.
LatentBlock combine_redundant(const LatentBlock& rx, const MaskMatrix& m,
                              std::span<const double> per_real_noise_var = {});

// Uniform quarter bins of [0,1]: [0,.25) -> -3, [.25,.5) -> -1,
// [.5,.75) -> 1, [.75,1] -> 3. Values outside [0,1] are rejected.
QuantizedBlock quantize(const LatentBlock& l);

// Bin centers: -3 -> .125, -1 -> .375, 1 -> .625, 3 -> .875.
LatentBlock dequantize(const QuantizedBlock& q);

// Receiver-side dequantization of impaired level-axis reals: the affine
// extension of the bin-center table, clamp((r+4)/8, 0, 1). Coincides with
// dequantize() on exact levels and degrades gracefully under noise.
double dequantize_soft(double level_axis_value);

// Decoder: logit, mirror maps, clamp to [0,1], scale to 8 bit.
ImageTensor decode(const LatentBlock& l, const CodecModel& model);

// Consecutive reals pair into complex symbols (even index in-phase), scaled
// by 1/sqrt(10) for unit mean energy on the 16-QAM level set.
SymbolBlock pair_symbols(std::span<const double> level_reals);
std::vector<double> unpair_symbols(std::span<const cplx> symbols);  // times sqrt(10)

// Mean of squared differences over H*W*C, pixels normalized to [0,1].
double loss_mse(const ImageTensor& a, const ImageTensor& b);

// Unmasked-patch MSE: mean of (p_i - phat_i * m_i)^2 scaled by N_T/N_U.
// Rejects masks with no kept patch.
double loss_mse_unmasked(const ImageTensor& p, const ImageTensor& phat, const MaskMatrix& m,
                         const PatchGrid& grid);

// ---------------------------------------------------------------------------
// Differentiable training core. The quantizer's slicing step backpropagates
// as identity (straight-through); everything else uses its real Jacobian, so
// a forward run in bypass mode is exactly the function the analytic
// gradients differentiate.

enum class QuantMode {
  off,     // stage 1: latent passes to the decoder untouched
  hard,    // slice to the level set (deployment path)
  bypass,  // keep the affine level-axis value (gradient-check path)
};

enum class LossKind { mse, mse_unmasked };

// One frozen draw of channel randomness for a differentiable pass.
// effective_noise[s] is z/(h*g) for complex symbol s in stream order;
// rank_of_symbol is only populated when allocator gains are being trained.
struct ChannelSample {
  std::vector<cplx> effective_noise;
  std::vector<int> rank_of_symbol;
};

struct CodecGrads {
  std::vector<Tensor> g;  // same order as CodecModel::params()
};

// Forward (and optionally backward) pass of the full differentiable chain:
// encode -> quantize chain -> noise -> soft dequantize -> decode -> loss.
// p_masked must already be pixel-masked by m. When grads is non-null the
// analytic parameter gradients are written there; when dgains is non-null
// the per-rank allocator gradient is accumulated (requires rank_of_symbol
// and gains).
double codec_pass(const CodecModel& model, const ImageTensor& p_masked, const MaskMatrix& m,
                  QuantMode qm, LossKind lk, const ChannelSample& ch, CodecGrads* grads,
                  std::span<const double> gains = {}, std::vector<double>* dgains = nullptr);

// Which parameter tensors each stage trains.
enum class TrainStage { stage1, stage2, stage3 };
std::vector<int> trainable_param_indices(TrainStage stage);

enum class InitKind {
  corpus_dct,  // frequency-ordered basis with corpus-standardized scales
  random,      // small random weights, the from-scratch state
};

struct TrainConfig {
  int stage1_steps = 300;
  int stage2_steps = 300;
  int stage3_steps = 200;
  int batch = 8;
  double lr = 2e-4;           // Adam, stages 1-2
  double lr_finetune = 2e-5;  // stage 3
  bool random_snr = false;    // SNR ~ U[-5,15] dB instead of the spec value
  InitKind init = InitKind::corpus_dct;
  double init_gain = 1.0;
  double init_scale = 0.05;  // random-init weight scale (fan-in normalized)
  std::uint64_t seed = 1;
};

struct TrainReport {
  double eq7_before = 0.0;  // unmasked-MSE eval at the initial parameters
  double eq7_after = 0.0;
  std::vector<double> stage_final_loss;  // one entry per executed stage
};

// Three-stage schedule: (1) encoder/decoder on plain MSE, clean and
// unmasked; (2) mixing maps only, random masks, quantization, channel;
// (3) everything at the fine-tune rate. Aborts on non-finite loss.
CodecModel train_staged(const std::vector<ImageTensor>& corpus, const ChannelSpec& channel,
                        const TrainConfig& cfg, TrainReport* report = nullptr);

// Mean Eq.(7) loss over the corpus with random masks (MR ~ U[0, 0.7]) and
// the hard quantization chain through the given channel.
double eval_unmasked_loss(const CodecModel& model, const std::vector<ImageTensor>& corpus,
                          const ChannelSpec& channel, std::uint64_t seed, int rounds = 2);

// Adam update for the selected parameter tensors (beta1 0.9, beta2 0.999,
// eps 1e-8); gradients are consumed as-is.
void adam_update(CodecModel& model, const CodecGrads& grads, const std::vector<int>& which,
                 double lr);

// ---------------------------------------------------------------------------
// Checkpoint: magic "SJCC", u32 version, dims, parameter tensors in
// declaration order as little-endian f64, then an optional trailing
// allocator section (magic "PALC").

struct AllocatorSection {
  std::uint8_t mode = 0;  // 0 uniform, 1 matched, 2 learned
  std::vector<double> gains;
};

void save_checkpoint(const CodecModel& model, const std::string& path,
                     const AllocatorSection* alloc = nullptr);
CodecModel load_checkpoint(const std::string& path,
                           std::optional<AllocatorSection>* alloc = nullptr);

}  // namespace semlink
