#include "cupid/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cupid/util.hpp"

namespace cupid {

void adamw_init(AdamWState& state, const NamedTensors& params) {
    state.step = 0;
    state.moments.m.clear();
    state.moments.v.clear();
    for (const auto& [name, t] : params) {
        state.moments.m.emplace_back(t.numel(), real(0));
        state.moments.v.emplace_back(t.numel(), real(0));
    }
}

void adamw_step(const NamedTensors& params, AdamWState& state, const AdamWConfig& cfg,
                const std::vector<double>* lr_scales) {
    if (state.moments.m.size() != params.size())
        throw contract_error("adamw_step: state does not match parameter list");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const std::string& name = params[pi].first;
        Tensor t = params[pi].second;  // shared handle
        if (!t.has_grad())
            throw contract_error("adamw_step: parameter " + name + " has no gradient");
        const double lr = cfg.lr * (lr_scales ? (*lr_scales)[pi] : 1.0);
        auto& theta = t.values();
        const auto& g = t.grad();
        auto& m = state.moments.m[pi];
        auto& v = state.moments.v[pi];
        for (size_t i = 0; i < theta.size(); ++i) {
            const double gi = double(g[i]);
            if (!std::isfinite(gi))
                throw numeric_error("adamw_step: non-finite gradient in parameter '" + name +
                                    "' at step " + std::to_string(state.step));
            const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * gi * gi;
            m[i] = real(mi);
            v[i] = real(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            theta[i] = real(double(theta[i]) - lr * (m_hat / (std::sqrt(v_hat) + cfg.eps)) -
                            lr * cfg.weight_decay * double(theta[i]));
        }
    }
}

void TrainConfig::validate() const {
    if (iterations <= 0 || batch_size <= 0) throw config_error("train: iterations and batch size must be positive");
    if (!(lr > 0) || !std::isfinite(lr)) throw config_error("train: learning rate must be positive and finite");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
        throw config_error("train: betas must lie in [0, 1)");
    if (!(eps > 0)) throw config_error("train: eps must be positive");
    if (weight_decay < 0) throw config_error("train: weight decay must be >= 0");
    if (checkpoint_every < 0 || warmup < 0) throw config_error("train: cadence values must be >= 0");
}

namespace {

std::string checkpoint_name(const std::string& run_dir, int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%08lld.cpck", static_cast<long long>(step));
    return run_dir + "/" + buf;
}

}  // namespace

TrainResult train(const std::vector<EcgWindow>& data, const ModelConfig& mcfg,
                  const TrainConfig& tcfg, const std::string& run_dir,
                  const std::string& resume_from) {
    mcfg.validate();
    tcfg.validate();
    if (data.empty()) throw config_error("train: dataset is empty");
    tune_allocator_for_training();
    std::filesystem::create_directories(run_dir);

    Rng master(tcfg.seed);
    Rng init_rng = master.fork(1);
    Rng data_rng = master.fork(2);

    ModelParams params = ModelParams::init(mcfg, init_rng);
    auto named = params.named();
    AdamWState opt;
    adamw_init(opt, named);
    int64_t start_step = 0;

    if (!resume_from.empty()) {
        Checkpoint ck = load_checkpoint(resume_from);
        if (!ck.state.has_opt)
            throw config_error("train: checkpoint " + resume_from + " lacks optimizer state");
        params = std::move(ck.params);
        named = params.named();
        params.set_requires_grad(true);
        opt.moments = std::move(ck.moments);
        opt.step = ck.state.step;
        start_step = ck.state.step;
        data_rng.restore_state(ck.state.rng_state);
    }

    const bool needs_spec = mcfg.variant == Variant::cupid && mcfg.dec_blocks > 1;
    SpectrogramTransform spec(mcfg.spectrogram_config());

    // per-window frames are mask-independent, so compute them once up front;
    // f32 storage halves the cache footprint
    std::vector<std::vector<float>> spec_cache;
    if (needs_spec) {
        spec_cache.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) {
            const auto frames = spec.compute(data[i].samples);
            spec_cache[i].assign(frames.values.begin(), frames.values.end());
        }
    }

    const std::string csv_path = run_dir + "/loss.csv";
    const bool append = !resume_from.empty() && std::filesystem::exists(csv_path);
    std::FILE* csv = std::fopen(csv_path.c_str(), append ? "ab" : "wb");
    if (!csv) throw io_error("train: cannot open " + csv_path);
    if (!append) std::fputs("iteration,loss,wall_ms\n", csv);

    TrainResult result;
    result.loss_csv = csv_path;
    const auto t0 = std::chrono::steady_clock::now();
    int64_t prev_wall = -1;

    const int n_patches = mcfg.n_patches();
    std::vector<const EcgWindow*> batch_windows(static_cast<size_t>(tcfg.batch_size));

    auto write_ckpt = [&](const std::string& path) {
        TrainState st;
        st.step = opt.step;
        st.rng_state = data_rng.save_state();
        save_checkpoint(path, params, &opt.moments, st);
        // continue from exactly what a resume would load
        quantize_to_f32(params, &opt.moments);
    };

    std::vector<size_t> batch_idx(static_cast<size_t>(tcfg.batch_size));
    for (int64_t it = start_step + 1; it <= tcfg.iterations; ++it) {
        // draw order: batch indices first, then one mask per sample
        std::vector<MaskSpec> masks;
        masks.reserve(static_cast<size_t>(tcfg.batch_size));
        for (int b = 0; b < tcfg.batch_size; ++b) {
            batch_idx[static_cast<size_t>(b)] = static_cast<size_t>(data_rng.bounded(data.size()));
            batch_windows[static_cast<size_t>(b)] = &data[batch_idx[static_cast<size_t>(b)]];
        }
        for (int b = 0; b < tcfg.batch_size; ++b)
            masks.push_back(random_mask(n_patches, mcfg.mask_ratio, data_rng));

        Batch batch = make_batch(batch_windows, mcfg, nullptr, std::move(masks));
        if (needs_spec) {
            batch.spec_frames = make_tensor({tcfg.batch_size, n_patches, mcfg.spec_bins});
            real* sf = batch.spec_frames.data();
            const int64_t per = int64_t(n_patches) * mcfg.spec_bins;
            for (int b = 0; b < tcfg.batch_size; ++b) {
                const auto& src = spec_cache[batch_idx[static_cast<size_t>(b)]];
                real* dst = sf + int64_t(b) * per;
                for (int64_t k = 0; k < per; ++k) dst[k] = static_cast<real>(src[static_cast<size_t>(k)]);
            }
        }

        double loss_value;
        {
            Tape tape;
            ForwardResult fr = forward_loss(params, batch);
            loss_value = double(fr.loss.item());
            if (!std::isfinite(loss_value)) {
                std::fflush(csv);
                std::fclose(csv);
                throw numeric_error("train: non-finite loss at iteration " + std::to_string(it) +
                                    "; last checkpoint retained");
            }
            params.zero_grads();
            tape.backward(fr.loss);
        }

        AdamWConfig acfg = tcfg.adamw();
        if (tcfg.warmup > 0 && it <= tcfg.warmup) acfg.lr = tcfg.lr * double(it) / double(tcfg.warmup);
        adamw_step(named, opt, acfg);

        result.losses.push_back(loss_value);
        int64_t wall = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
        if (wall <= prev_wall) wall = prev_wall + 1;  // strictly increasing log
        prev_wall = wall;
        std::fprintf(csv, "%lld,%s,%lld\n", static_cast<long long>(it),
                     format_real(loss_value).c_str(), static_cast<long long>(wall));

        if (tcfg.checkpoint_every > 0 && it % tcfg.checkpoint_every == 0 && it != tcfg.iterations) {
            std::fflush(csv);
            write_ckpt(checkpoint_name(run_dir, it));
        }
        if (it % 200 == 0 || it == tcfg.iterations)
            std::fprintf(stderr, "[train %s] iter %lld/%lld loss %.6f\n",
                         variant_name(mcfg.variant).c_str(), static_cast<long long>(it),
                         static_cast<long long>(tcfg.iterations), loss_value);
    }

    result.final_checkpoint = run_dir + "/ckpt_final.cpck";
    write_ckpt(result.final_checkpoint);
    std::fflush(csv);
    std::fclose(csv);
    return result;
}

}  // namespace cupid
