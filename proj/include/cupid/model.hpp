#pragma once

// Patch embedding, random masking, ViT encoder, and the decoder in its two
// variants: mtae reconstructs from self-attention alone; cupid feeds the
// unmasked spectrogram as the attention Key from the second decoder block on.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cupid/dataset.hpp"
#include "cupid/rng.hpp"
#include "cupid/spectrogram.hpp"
#include "cupid/tensor.hpp"

namespace cupid {

enum class Variant { cupid, mtae };

std::string variant_name(Variant v);
Variant variant_from(const std::string& name);

struct ModelConfig {
    int window_samples = 1000;
    int patch_size = 20;
    int d_model = 128;
    int enc_blocks = 4;
    int enc_heads = 4;
    int dec_blocks = 2;
    int dec_heads = 4;
    double mask_ratio = 0.4;
    Variant variant = Variant::cupid;
    int spec_bins = 255;
    SpecScale spec_scale = SpecScale::magnitude;
    bool spec_pos_enc = true;

    int n_patches() const { return window_samples / patch_size; }
    int mask_count() const {
        return static_cast<int>(std::llround(mask_ratio * n_patches()));
    }
    int mlp_hidden() const { return 4 * d_model; }
    void validate() const;
    SpectrogramConfig spectrogram_config() const { return {patch_size, spec_bins, spec_scale}; }
};

// ----------------------------- masking -----------------------------

struct MaskSpec {
    std::vector<uint8_t> masked;       // one flag per patch
    std::vector<int32_t> masked_idx;   // ascending
    std::vector<int32_t> visible_idx;  // ascending
    int count() const { return static_cast<int>(masked_idx.size()); }
    int n() const { return static_cast<int>(masked.size()); }
};

// Exactly round(ratio * n) positions, uniform without replacement.
MaskSpec random_mask(int n_patches, double mask_ratio, Rng& rng);

// ----------------------------- parameters -----------------------------

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockParams {
    Tensor ln1_g, ln1_b;
    AttentionParams attn;
    Tensor ln2_g, ln2_b;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ModelParams {
    ModelConfig config;
    Tensor patch_w, patch_b;  // (p, d), (d)
    Tensor pos_enc, pos_dec;  // (N, d) learned tables, separate per side
    Tensor mask_token;        // (d)
    std::vector<BlockParams> encoder, decoder;
    Tensor spec_w, spec_b;  // (F, d), (d)
    Tensor head_w, head_b;  // (d, p), (p)

    static ModelParams init(const ModelConfig& cfg, Rng& rng);
    ModelParams clone() const;  // deep copy of all tensors

    // stable name -> tensor order shared by the optimizer and checkpoints
    std::vector<std::pair<std::string, Tensor>> named() const;
    void set_requires_grad(bool v);
    void zero_grads();
    int64_t param_count() const;
};

// ----------------------------- data plumbing -----------------------------

Tensor patchify(const std::vector<real>& samples, int patch_size);  // (N, p)
std::vector<real> unpatchify(const Tensor& patches);

struct Batch {
    Tensor patches;               // (B, N, p), constant
    std::vector<MaskSpec> masks;  // size B, equal counts
    Tensor spec_frames;           // (B, N, F), constant; unset for mtae

    int64_t size() const { return patches.extent(0); }
    int64_t n_patches() const { return patches.extent(1); }
    int visible_count() const { return masks[0].n() - masks[0].count(); }
    std::vector<int32_t> visible_flat() const;
    std::vector<int32_t> masked_flat() const;
};

Batch make_batch(const std::vector<const EcgWindow*>& windows, const ModelConfig& cfg,
                 const SpectrogramTransform* spec, std::vector<MaskSpec> masks);

// ----------------------------- forward pieces -----------------------------

// Attention(Q, K, V) = softmax(Q K^T / sqrt(d_k)) V per head, fused over
// batch x heads. q/k/v sources are (B, T, d) token streams.
Tensor multi_head_attention(const AttentionParams& p, const Tensor& q_src, const Tensor& k_src,
                            const Tensor& v_src, int heads);

Tensor embed_visible(const ModelParams& p, const Batch& batch);            // (B, V, d)
Tensor run_encoder(const ModelParams& p, Tensor tokens);                   // (B, V, d)
// Encoder outputs return to their original positions; mask token plus decoder
// positional encoding fills the masked slots.
Tensor assemble_decoder_input(const ModelParams& p, const Tensor& enc_out, const Batch& batch);
Tensor project_frames(const ModelParams& p, const Tensor& frames);         // (B, N, d)
// s_proj participates from block 1 (the second block) on; pass an invalid
// tensor for mtae or single-block decoders.
Tensor decode(const ModelParams& p, Tensor h, const Tensor& s_proj);       // (B, N, p)

// (1/|M|) sum_i mean_abs_err(patch i) over masked patches, averaged over the batch.
Tensor masked_l1(const Tensor& targets, const Tensor& recon, const Batch& batch);

struct ForwardResult {
    Tensor recon;  // (B, N, p)
    Tensor loss;   // scalar
};
ForwardResult forward_loss(const ModelParams& p, const Batch& batch);

// Frozen-encoder representation: all patches visible, mean-pooled tokens.
std::vector<real> represent(const ModelParams& p, const EcgWindow& window);
Tensor represent_batch(const ModelParams& p, const std::vector<const EcgWindow*>& windows);

// ----------------------------- checkpoints -----------------------------
// "CPCK", u32 version, length-prefixed JSON config block, then named f32
// arrays (u16 name length, name, u32 rank, u32 extents, f32 data), all LE.

struct TrainState {
    int64_t step = 0;
    std::array<uint64_t, 4> rng_state{};
    bool has_opt = false;
};

struct OptMoments {
    std::vector<std::vector<real>> m, v;  // aligned with ModelParams::named()
};

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptMoments* moments, const TrainState& state);

struct Checkpoint {
    ModelParams params;
    OptMoments moments;
    TrainState state;
};

Checkpoint load_checkpoint(const std::string& path);

// Snaps every parameter (and moment) to its f32-representable value, so a run
// that wrote a checkpoint continues in exactly the state a resume would load.
void quantize_to_f32(ModelParams& params, OptMoments* moments);

}  // namespace cupid
