#include "cupid/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cupid/util.hpp"
#include "json.hpp"

namespace cupid {

std::string variant_name(Variant v) { return v == Variant::cupid ? "cupid" : "mtae"; }

Variant variant_from(const std::string& name) {
    if (name == "cupid") return Variant::cupid;
    if (name == "mtae") return Variant::mtae;
    throw config_error("unknown variant '" + name + "' (expected cupid or mtae)");
}

void ModelConfig::validate() const {
    if (window_samples <= 0 || patch_size <= 0)
        throw config_error("model: window and patch sizes must be positive");
    if (window_samples % patch_size != 0)
        throw config_error("model: window length " + std::to_string(window_samples) +
                           " is not divisible by patch size " + std::to_string(patch_size));
    if (d_model <= 0 || enc_blocks <= 0 || dec_blocks <= 0)
        throw config_error("model: dimensions and block counts must be positive");
    if (enc_heads <= 0 || d_model % enc_heads != 0)
        throw config_error("model: d_model " + std::to_string(d_model) +
                           " is not divisible by encoder heads " + std::to_string(enc_heads));
    if (dec_heads <= 0 || d_model % dec_heads != 0)
        throw config_error("model: d_model " + std::to_string(d_model) +
                           " is not divisible by decoder heads " + std::to_string(dec_heads));
    if (!(mask_ratio >= 0.0) || mask_ratio >= 1.0)
        throw config_error("model: mask ratio must lie in [0, 1)");
    if (spec_bins < 2) throw config_error("model: spectrogram bins must be >= 2");
}

// ----------------------------- masking -----------------------------

MaskSpec random_mask(int n_patches, double mask_ratio, Rng& rng) {
    if (n_patches <= 0) throw config_error("random_mask: need at least one patch");
    if (!(mask_ratio >= 0.0) || mask_ratio >= 1.0)
        throw config_error("random_mask: ratio must lie in [0, 1)");
    const int count = static_cast<int>(std::llround(mask_ratio * n_patches));

    std::vector<int32_t> perm(static_cast<size_t>(n_patches));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 0; i < count; ++i) {
        const int j = i + static_cast<int>(rng.bounded(static_cast<uint64_t>(n_patches - i)));
        std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
    }

    MaskSpec spec;
    spec.masked.assign(static_cast<size_t>(n_patches), 0);
    spec.masked_idx.assign(perm.begin(), perm.begin() + count);
    std::sort(spec.masked_idx.begin(), spec.masked_idx.end());
    for (int32_t i : spec.masked_idx) spec.masked[static_cast<size_t>(i)] = 1;
    for (int32_t i = 0; i < n_patches; ++i)
        if (!spec.masked[static_cast<size_t>(i)]) spec.visible_idx.push_back(i);
    return spec;
}

// ----------------------------- parameters -----------------------------

namespace {

Tensor init_trunc_normal(Shape shape, Rng& rng, double sigma = 0.02) {
    Tensor t = make_tensor(std::move(shape));
    for (auto& v : t.values()) v = static_cast<real>(rng.truncated_gaussian(sigma));
    t.set_requires_grad();
    return t;
}

Tensor init_zeros(Shape shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.set_requires_grad();
    return t;
}

Tensor init_ones(Shape shape) {
    Tensor t = Tensor::full(std::move(shape), real(1));
    t.set_requires_grad();
    return t;
}

BlockParams init_block(int d, int hidden, Rng& rng) {
    BlockParams b;
    b.ln1_g = init_ones({d});
    b.ln1_b = init_zeros({d});
    b.attn.wq = init_trunc_normal({d, d}, rng);
    b.attn.bq = init_zeros({d});
    b.attn.wk = init_trunc_normal({d, d}, rng);
    b.attn.bk = init_zeros({d});
    b.attn.wv = init_trunc_normal({d, d}, rng);
    b.attn.bv = init_zeros({d});
    b.attn.wo = init_trunc_normal({d, d}, rng);
    b.attn.bo = init_zeros({d});
    b.ln2_g = init_ones({d});
    b.ln2_b = init_zeros({d});
    b.mlp_w1 = init_trunc_normal({d, hidden}, rng);
    b.mlp_b1 = init_zeros({hidden});
    b.mlp_w2 = init_trunc_normal({hidden, d}, rng);
    b.mlp_b2 = init_zeros({d});
    return b;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    const int d = cfg.d_model;
    const int n = cfg.n_patches();
    p.patch_w = init_trunc_normal({cfg.patch_size, d}, rng);
    p.patch_b = init_zeros({d});
    p.pos_enc = init_trunc_normal({n, d}, rng);
    p.pos_dec = init_trunc_normal({n, d}, rng);
    p.mask_token = init_trunc_normal({d}, rng);
    for (int i = 0; i < cfg.enc_blocks; ++i)
        p.encoder.push_back(init_block(d, cfg.mlp_hidden(), rng));
    for (int i = 0; i < cfg.dec_blocks; ++i)
        p.decoder.push_back(init_block(d, cfg.mlp_hidden(), rng));
    p.spec_w = init_trunc_normal({cfg.spec_bins, d}, rng);
    p.spec_b = init_zeros({d});
    p.head_w = init_trunc_normal({d, cfg.patch_size}, rng);
    p.head_b = init_zeros({cfg.patch_size});
    return p;
}

ModelParams ModelParams::clone() const {
    Rng scratch(0);
    ModelParams copy = ModelParams::init(config, scratch);
    auto src = named();
    auto dst = copy.named();
    for (size_t i = 0; i < src.size(); ++i) dst[i].second.values() = src[i].second.values();
    return copy;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("patch_embed.w", patch_w);
    out.emplace_back("patch_embed.b", patch_b);
    out.emplace_back("pos.enc", pos_enc);
    out.emplace_back("pos.dec", pos_dec);
    out.emplace_back("mask_token", mask_token);
    auto add_block = [&out](const std::string& prefix, const BlockParams& b) {
        out.emplace_back(prefix + ".ln1.g", b.ln1_g);
        out.emplace_back(prefix + ".ln1.b", b.ln1_b);
        out.emplace_back(prefix + ".attn.wq", b.attn.wq);
        out.emplace_back(prefix + ".attn.bq", b.attn.bq);
        out.emplace_back(prefix + ".attn.wk", b.attn.wk);
        out.emplace_back(prefix + ".attn.bk", b.attn.bk);
        out.emplace_back(prefix + ".attn.wv", b.attn.wv);
        out.emplace_back(prefix + ".attn.bv", b.attn.bv);
        out.emplace_back(prefix + ".attn.wo", b.attn.wo);
        out.emplace_back(prefix + ".attn.bo", b.attn.bo);
        out.emplace_back(prefix + ".ln2.g", b.ln2_g);
        out.emplace_back(prefix + ".ln2.b", b.ln2_b);
        out.emplace_back(prefix + ".mlp.w1", b.mlp_w1);
        out.emplace_back(prefix + ".mlp.b1", b.mlp_b1);
        out.emplace_back(prefix + ".mlp.w2", b.mlp_w2);
        out.emplace_back(prefix + ".mlp.b2", b.mlp_b2);
    };
    for (size_t i = 0; i < encoder.size(); ++i) add_block("enc." + std::to_string(i), encoder[i]);
    for (size_t i = 0; i < decoder.size(); ++i) add_block("dec." + std::to_string(i), decoder[i]);
    out.emplace_back("spec_proj.w", spec_w);
    out.emplace_back("spec_proj.b", spec_b);
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
}

void ModelParams::set_requires_grad(bool v) {
    for (auto&& [name, t] : named()) t.set_requires_grad(v);
}

void ModelParams::zero_grads() {
    for (auto&& [name, t] : named()) t.zero_grad();
}

int64_t ModelParams::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : named()) n += t.numel();
    return n;
}

// ----------------------------- data plumbing -----------------------------

Tensor patchify(const std::vector<real>& samples, int patch_size) {
    const int64_t n = static_cast<int64_t>(samples.size());
    if (patch_size <= 0 || n % patch_size != 0)
        throw config_error("patchify: length " + std::to_string(n) +
                           " is not divisible by patch size " + std::to_string(patch_size));
    return Tensor::from({n / patch_size, patch_size}, samples);
}

std::vector<real> unpatchify(const Tensor& patches) {
    if (patches.rank() != 2)
        throw shape_error("unpatchify: expected rank 2, got " + shape_str(patches.shape()));
    return patches.values();
}

std::vector<int32_t> Batch::visible_flat() const {
    std::vector<int32_t> out;
    out.reserve(masks.size() * masks[0].visible_idx.size());
    for (const auto& m : masks) out.insert(out.end(), m.visible_idx.begin(), m.visible_idx.end());
    return out;
}

std::vector<int32_t> Batch::masked_flat() const {
    std::vector<int32_t> out;
    out.reserve(masks.size() * masks[0].masked_idx.size());
    for (const auto& m : masks) out.insert(out.end(), m.masked_idx.begin(), m.masked_idx.end());
    return out;
}

Batch make_batch(const std::vector<const EcgWindow*>& windows, const ModelConfig& cfg,
                 const SpectrogramTransform* spec, std::vector<MaskSpec> masks) {
    if (windows.empty()) throw config_error("make_batch: empty batch");
    if (masks.size() != windows.size())
        throw config_error("make_batch: mask count does not match batch size");
    const int64_t b = static_cast<int64_t>(windows.size());
    const int64_t n = cfg.n_patches();
    const int64_t p = cfg.patch_size;

    Batch batch;
    batch.patches = make_tensor({b, n, p});
    real* dst = batch.patches.data();
    for (int64_t s = 0; s < b; ++s) {
        const auto& samples = windows[static_cast<size_t>(s)]->samples;
        if (static_cast<int64_t>(samples.size()) != cfg.window_samples)
            throw config_error("make_batch: window has " + std::to_string(samples.size()) +
                               " samples, config expects " + std::to_string(cfg.window_samples));
        std::copy(samples.begin(), samples.end(), dst + s * n * p);
    }
    batch.masks = std::move(masks);
    for (const auto& m : batch.masks)
        if (m.n() != n || m.count() != batch.masks[0].count())
            throw config_error("make_batch: inconsistent mask spec");

    if (spec) {
        batch.spec_frames = make_tensor({b, n, spec->config().n_bins});
        real* sf = batch.spec_frames.data();
        for (int64_t s = 0; s < b; ++s) {
            const auto frames = spec->compute(windows[static_cast<size_t>(s)]->samples);
            if (frames.n_frames != n)
                throw shape_error("make_batch: spectrogram produced " +
                                  std::to_string(frames.n_frames) + " frames for " +
                                  std::to_string(n) + " patches");
            std::copy(frames.values.begin(), frames.values.end(), sf + s * n * frames.n_bins);
        }
    }
    return batch;
}

// ----------------------------- forward pieces -----------------------------

namespace {

// x (..., d_in) * w (d_in, d_out) + b; matmul folds the leading dims
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, w), b);
}

Tensor affine_norm(const Tensor& x, const Tensor& g, const Tensor& b) {
    return add(mul(layer_norm(x), g), b);
}

}  // namespace

Tensor multi_head_attention(const AttentionParams& p, const Tensor& q_src, const Tensor& k_src,
                            const Tensor& v_src, int heads) {
    const int64_t d = q_src.extent(2);
    if (d % heads != 0)
        throw shape_error("attention: d_model " + std::to_string(d) +
                          " not divisible by heads " + std::to_string(heads));
    if (k_src.extent(1) != v_src.extent(1))
        throw shape_error("attention: key and value lengths differ, " +
                          shape_str(k_src.shape()) + " vs " + shape_str(v_src.shape()));
    const int64_t dh = d / heads;
    // scaling q up front is algebraically the score scaling, on a smaller buffer
    Tensor q = split_heads(mul_scalar(linear(q_src, p.wq, p.bq), real(1.0 / std::sqrt(double(dh)))),
                           heads);
    Tensor k = split_heads(linear(k_src, p.wk, p.bk), heads);
    Tensor v = split_heads(linear(v_src, p.wv, p.bv), heads);
    Tensor scores = matmul(q, transpose(k));
    Tensor probs = softmax(scores, 2);
    Tensor mixed = matmul(probs, v);
    return linear(merge_heads(mixed, heads), p.wo, p.bo);
}

namespace {

// Pre-norm transformer block. For self-attention pass an invalid k_override;
// a valid one becomes the Key source as-is (no layer norm, no residual mix).
Tensor transformer_block(const BlockParams& bp, Tensor x, const Tensor& k_override, int heads) {
    Tensor h = affine_norm(x, bp.ln1_g, bp.ln1_b);
    const Tensor& k_src = k_override.valid() ? k_override : h;
    x = add(x, multi_head_attention(bp.attn, h, k_src, h, heads));
    Tensor h2 = affine_norm(x, bp.ln2_g, bp.ln2_b);
    Tensor mlp = linear(h2, bp.mlp_w1, bp.mlp_b1);
    mlp = gelu(mlp);
    mlp = linear(mlp, bp.mlp_w2, bp.mlp_b2);
    return add(x, mlp);
}

}  // namespace

Tensor embed_visible(const ModelParams& p, const Batch& batch) {
    const int64_t b = batch.size();
    const int v = batch.visible_count();
    if (v == 0) throw contract_error("embed_visible: no visible patches");
    const auto vis = batch.visible_flat();
    Tensor xv = gather_rows_batched(batch.patches, vis, v);  // (B, V, p)
    Tensor tok = linear(xv, p.patch_w, p.patch_b);           // (B, V, d)
    Tensor pos = gather_rows(p.pos_enc, vis, b, v);          // (B, V, d)
    return add(tok, pos);
}

Tensor run_encoder(const ModelParams& p, Tensor tokens) {
    Tensor none;
    for (const auto& block : p.encoder)
        tokens = transformer_block(block, tokens, none, p.config.enc_heads);
    return tokens;
}

Tensor assemble_decoder_input(const ModelParams& p, const Tensor& enc_out, const Batch& batch) {
    const int64_t b = batch.size();
    Tensor mask_rows = add(p.pos_dec, p.mask_token);  // (N, d)
    Tensor base = expand_leading(mask_rows, b);       // (B, N, d)
    if (batch.visible_count() == 0) return base;      // fully masked window
    if (!enc_out.valid() || enc_out.extent(1) != batch.visible_count())
        throw contract_error("assemble_decoder_input: encoder output does not cover the visible set");
    return scatter_rows(base, batch.visible_flat(), enc_out);
}

Tensor project_frames(const ModelParams& p, const Tensor& frames) {
    if (!frames.valid() || frames.rank() != 3)
        throw shape_error("project_frames: expected (B, N, F) frames");
    if (frames.extent(2) != p.spec_w.extent(0))
        throw config_error("project_frames: frame bins " + std::to_string(frames.extent(2)) +
                           " do not match projection rows " + std::to_string(p.spec_w.extent(0)));
    Tensor s = linear(frames, p.spec_w, p.spec_b);
    if (p.config.spec_pos_enc) s = add(s, p.pos_dec);
    return s;
}

Tensor decode(const ModelParams& p, Tensor h, const Tensor& s_proj) {
    const bool cross = p.config.variant == Variant::cupid && p.config.dec_blocks > 1;
    if (cross && !s_proj.valid())
        throw shape_error("decode: cupid variant needs projected spectrogram frames");
    if (s_proj.valid() && s_proj.extent(1) != h.extent(1))
        throw shape_error("decode: spectrogram frame count " + std::to_string(s_proj.extent(1)) +
                          " does not match token count " + std::to_string(h.extent(1)));
    Tensor none;
    for (size_t i = 0; i < p.decoder.size(); ++i) {
        // the spectrogram enters only from the second block
        const Tensor& k_src = (cross && i >= 1) ? s_proj : none;
        h = transformer_block(p.decoder[i], h, k_src, p.config.dec_heads);
    }
    return linear(h, p.head_w, p.head_b);  // (B, N, patch)
}

Tensor masked_l1(const Tensor& targets, const Tensor& recon, const Batch& batch) {
    if (targets.shape() != recon.shape())
        throw shape_error("masked_l1: target shape " + shape_str(targets.shape()) +
                          " differs from reconstruction " + shape_str(recon.shape()));
    const int64_t b = batch.size();
    const int64_t n = batch.n_patches();
    int64_t total_masked = 0;
    Tensor mask_t = Tensor::zeros({b, n});
    for (int64_t s = 0; s < b; ++s) {
        const auto& m = batch.masks[static_cast<size_t>(s)];
        total_masked += m.count();
        for (int32_t i : m.masked_idx) mask_t.data()[s * n + i] = real(1);
    }
    if (total_masked == 0) throw numeric_error("masked_l1: undefined, no masked patches");

    Tensor per_patch = mean_axis(abs(sub(recon, targets)), 2);  // (B, N)
    Tensor masked_only = mul(per_patch, mask_t);
    Tensor per_sample = sum_axis(masked_only, 1);  // (B)
    Tensor counts = Tensor::zeros({b});
    for (int64_t s = 0; s < b; ++s)
        counts.data()[s] = real(batch.masks[static_cast<size_t>(s)].count());
    return mean(div(per_sample, counts));
}

ForwardResult forward_loss(const ModelParams& p, const Batch& batch) {
    Tensor h;
    if (batch.visible_count() > 0) {
        Tensor tokens = embed_visible(p, batch);
        Tensor enc_out = run_encoder(p, tokens);
        h = assemble_decoder_input(p, enc_out, batch);
    } else {
        h = assemble_decoder_input(p, Tensor(), batch);
    }
    Tensor s_proj;
    if (p.config.variant == Variant::cupid && p.config.dec_blocks > 1)
        s_proj = project_frames(p, batch.spec_frames);
    ForwardResult r;
    r.recon = decode(p, h, s_proj);
    r.loss = masked_l1(batch.patches, r.recon, batch);
    return r;
}

Tensor represent_batch(const ModelParams& p, const std::vector<const EcgWindow*>& windows) {
    const int n = p.config.n_patches();
    std::vector<MaskSpec> no_mask(windows.size());
    for (auto& m : no_mask) {
        m.masked.assign(static_cast<size_t>(n), 0);
        for (int i = 0; i < n; ++i) m.visible_idx.push_back(i);
    }
    Batch batch = make_batch(windows, p.config, nullptr, std::move(no_mask));
    Tensor tokens = embed_visible(p, batch);
    Tensor enc_out = run_encoder(p, tokens);
    return mean_axis(enc_out, 1);  // (B, d)
}

std::vector<real> represent(const ModelParams& p, const EcgWindow& window) {
    Tensor r = represent_batch(p, {&window});
    return r.values();
}

// ----------------------------- checkpoints -----------------------------

namespace {

constexpr char kCkptMagic[4] = {'C', 'P', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

std::string rng_word_hex(uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

nlohmann::json config_json(const ModelConfig& c, const TrainState& s) {
    nlohmann::json j;
    j["model"] = {{"window_samples", c.window_samples},
                  {"patch_size", c.patch_size},
                  {"d_model", c.d_model},
                  {"enc_blocks", c.enc_blocks},
                  {"enc_heads", c.enc_heads},
                  {"dec_blocks", c.dec_blocks},
                  {"dec_heads", c.dec_heads},
                  {"mask_ratio", c.mask_ratio},
                  {"variant", variant_name(c.variant)},
                  {"spec_bins", c.spec_bins},
                  {"spec_scale", c.spec_scale == SpecScale::magnitude ? "mag"
                                 : c.spec_scale == SpecScale::power   ? "power"
                                                                      : "log"},
                  {"spec_pos_enc", c.spec_pos_enc}};
    nlohmann::json rng = nlohmann::json::array();
    for (uint64_t w : s.rng_state) rng.push_back(rng_word_hex(w));
    j["state"] = {{"step", s.step}, {"rng", rng}, {"has_opt", s.has_opt}};
    return j;
}

void parse_config_json(const nlohmann::json& j, ModelConfig& c, TrainState& s) {
    const auto& m = j.at("model");
    c.window_samples = m.at("window_samples").get<int>();
    c.patch_size = m.at("patch_size").get<int>();
    c.d_model = m.at("d_model").get<int>();
    c.enc_blocks = m.at("enc_blocks").get<int>();
    c.enc_heads = m.at("enc_heads").get<int>();
    c.dec_blocks = m.at("dec_blocks").get<int>();
    c.dec_heads = m.at("dec_heads").get<int>();
    c.mask_ratio = m.at("mask_ratio").get<double>();
    c.variant = variant_from(m.at("variant").get<std::string>());
    c.spec_bins = m.at("spec_bins").get<int>();
    const std::string scale = m.at("spec_scale").get<std::string>();
    c.spec_scale = scale == "power" ? SpecScale::power
                   : scale == "log" ? SpecScale::logmag
                                    : SpecScale::magnitude;
    c.spec_pos_enc = m.at("spec_pos_enc").get<bool>();
    const auto& st = j.at("state");
    s.step = st.at("step").get<int64_t>();
    const auto& rng = st.at("rng");
    for (size_t i = 0; i < 4; ++i)
        s.rng_state[i] = std::stoull(rng.at(i).get<std::string>(), nullptr, 16);
    s.has_opt = st.at("has_opt").get<bool>();
}

void write_array(ByteWriter& w, const std::string& name, const Shape& shape,
                 const std::vector<real>& vals) {
    w.str_u16(name);
    w.u32(static_cast<uint32_t>(shape.size()));
    for (int64_t e : shape) w.u32(static_cast<uint32_t>(e));
    for (real v : vals) w.f32(static_cast<float>(v));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptMoments* moments, const TrainState& state) {
    TrainState st = state;
    st.has_opt = moments != nullptr;

    ByteWriter w;
    w.bytes(kCkptMagic, 4);
    w.u32(kCkptVersion);
    const std::string cfg = config_json(params.config, st).dump();
    w.u32(static_cast<uint32_t>(cfg.size()));
    w.bytes(cfg.data(), cfg.size());

    const auto named = params.named();
    w.u32(static_cast<uint32_t>(named.size()));
    for (const auto& [name, t] : named) write_array(w, name, t.shape(), t.values());
    if (moments) {
        for (size_t i = 0; i < named.size(); ++i)
            write_array(w, "opt.m/" + named[i].first, named[i].second.shape(), moments->m[i]);
        for (size_t i = 0; i < named.size(); ++i)
            write_array(w, "opt.v/" + named[i].first, named[i].second.shape(), moments->v[i]);
    }
    const auto& buf = w.data();
    write_file_bytes(path, buf.data(), buf.size());
}

Checkpoint load_checkpoint(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kCkptMagic, 4))
        throw parse_error("checkpoint: bad magic in " + path);
    const uint32_t version = r.u32();
    if (version != kCkptVersion)
        throw parse_error("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t cfg_len = r.u32();
    std::string cfg_text(cfg_len, '\0');
    r.bytes(cfg_text.data(), cfg_len);

    ModelConfig cfg;
    TrainState st;
    parse_config_json(nlohmann::json::parse(cfg_text), cfg, st);

    // materialize parameter tensors with the right shapes, then fill by name
    Checkpoint ck;
    Rng scratch(0);
    ck.params = ModelParams::init(cfg, scratch);
    ck.state = st;

    auto named = ck.params.named();
    auto read_into = [&r](const std::string& expect_name, const Shape& expect_shape,
                          std::vector<real>& out) {
        const std::string name = r.str_u16();
        if (name != expect_name)
            throw parse_error("checkpoint: expected array '" + expect_name + "', found '" + name +
                              "'");
        const uint32_t rank = r.u32();
        Shape shape(rank);
        for (auto& e : shape) e = r.u32();
        if (shape != expect_shape)
            throw parse_error("checkpoint: array '" + name + "' has shape " + shape_str(shape) +
                              ", expected " + shape_str(expect_shape));
        out.resize(static_cast<size_t>(shape_numel(shape)));
        for (auto& v : out) v = static_cast<real>(r.f32());
    };

    const uint32_t n_arrays = r.u32();
    if (n_arrays != named.size())
        throw parse_error("checkpoint: holds " + std::to_string(n_arrays) +
                          " parameter arrays, model needs " + std::to_string(named.size()));
    for (auto&& [name, t] : named) read_into(name, t.shape(), t.values());
    if (ck.state.has_opt) {
        ck.moments.m.resize(named.size());
        ck.moments.v.resize(named.size());
        for (size_t i = 0; i < named.size(); ++i)
            read_into("opt.m/" + named[i].first, named[i].second.shape(), ck.moments.m[i]);
        for (size_t i = 0; i < named.size(); ++i)
            read_into("opt.v/" + named[i].first, named[i].second.shape(), ck.moments.v[i]);
    }
    if (!r.at_end()) throw parse_error("checkpoint: trailing bytes in " + path);
    return ck;
}

void quantize_to_f32(ModelParams& params, OptMoments* moments) {
    for (auto&& [name, t] : params.named())
        for (real& v : t.values()) v = static_cast<real>(static_cast<float>(v));
    if (moments) {
        for (auto& buf : moments->m)
            for (real& v : buf) v = static_cast<real>(static_cast<float>(v));
        for (auto& buf : moments->v)
            for (real& v : buf) v = static_cast<real>(static_cast<float>(v));
    }
}

}  // namespace cupid
