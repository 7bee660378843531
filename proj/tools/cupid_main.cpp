// Command-line entry point: preprocess | synth | pretrain | probe | finetune |
// reconstruct | sdnn-report | sweep | spectrogram | rerun.
//
// Every subcommand resolves defaults < config file < flags, writes a manifest
// into its run directory before computing, and exits 0 on success, 2 on config
// errors, 3 on I/O errors, 4 on numerical failure.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cupid/dataset.hpp"
#include "cupid/eval.hpp"
#include "cupid/manifest.hpp"
#include "cupid/model.hpp"
#include "cupid/preprocess.hpp"
#include "cupid/spectrogram.hpp"
#include "cupid/synth.hpp"
#include "cupid/train.hpp"
#include "cupid/util.hpp"
#include "cupid/wfdb.hpp"

namespace fs = std::filesystem;
using namespace cupid;

namespace {

// ----------------------------- option plumbing -----------------------------

struct SubCmd {
    CLI::App* app = nullptr;
    FlatConfig defaults;
    std::map<std::string, CLI::Option*> options;
    std::map<std::string, std::string> flag_values;
    std::string config_path;

    void init(CLI::App& parent, const std::string& name, const std::string& desc) {
        app = parent.add_subcommand(name, desc);
        app->add_option("--config", config_path, "config file (key=value lines or JSON)");
    }

    void key(const std::string& k, const std::string& def, const std::string& help) {
        defaults[k] = def;
        flag_values[k] = def;
        options[k] = app->add_option("--" + k, flag_values[k], help + " [" + def + "]");
    }

    FlatConfig resolve() const {
        FlatConfig cfg = defaults;
        if (!config_path.empty()) {
            for (const auto& [k, v] : load_config_file(config_path, defaults)) cfg[k] = v;
        }
        for (const auto& [k, opt] : options)
            if (opt->count() > 0) cfg[k] = flag_values.at(k);
        return cfg;
    }
};

void add_model_keys(SubCmd& s) {
    s.key("window_samples", "1000", "samples per window");
    s.key("patch_size", "20", "patch length in samples");
    s.key("d_model", "128", "model dimension");
    s.key("enc_blocks", "4", "encoder transformer blocks");
    s.key("enc_heads", "4", "encoder attention heads");
    s.key("dec_blocks", "2", "decoder transformer blocks");
    s.key("dec_heads", "4", "decoder attention heads");
    s.key("mask_ratio", "0.4", "fraction of patches masked");
    s.key("variant", "cupid", "cupid | mtae");
    s.key("spec_bins", "255", "one-sided spectrogram bins");
    s.key("spec_scale", "mag", "spectrogram scale: mag | power | log");
    s.key("spec_pos_enc", "true", "add decoder positional encoding to frames");
}

ModelConfig model_from_cfg(const FlatConfig& c) {
    ModelConfig m;
    m.window_samples = static_cast<int>(cfg_int(c, "window_samples"));
    m.patch_size = static_cast<int>(cfg_int(c, "patch_size"));
    m.d_model = static_cast<int>(cfg_int(c, "d_model"));
    m.enc_blocks = static_cast<int>(cfg_int(c, "enc_blocks"));
    m.enc_heads = static_cast<int>(cfg_int(c, "enc_heads"));
    m.dec_blocks = static_cast<int>(cfg_int(c, "dec_blocks"));
    m.dec_heads = static_cast<int>(cfg_int(c, "dec_heads"));
    m.mask_ratio = cfg_double(c, "mask_ratio");
    m.variant = variant_from(cfg_str(c, "variant"));
    m.spec_bins = static_cast<int>(cfg_int(c, "spec_bins"));
    const std::string scale = cfg_str(c, "spec_scale");
    if (scale == "mag")
        m.spec_scale = SpecScale::magnitude;
    else if (scale == "power")
        m.spec_scale = SpecScale::power;
    else if (scale == "log")
        m.spec_scale = SpecScale::logmag;
    else
        throw config_error("spec_scale must be mag, power or log, got '" + scale + "'");
    m.spec_pos_enc = cfg_bool(c, "spec_pos_enc");
    m.validate();
    return m;
}

void add_train_keys(SubCmd& s) {
    s.key("iterations", "45000", "training iterations");
    s.key("batch_size", "256", "windows per batch");
    s.key("lr", "0.001", "AdamW learning rate");
    s.key("beta1", "0.9", "AdamW beta1");
    s.key("beta2", "0.999", "AdamW beta2");
    s.key("eps", "1e-8", "AdamW epsilon");
    s.key("weight_decay", "0.01", "decoupled weight decay");
    s.key("seed", "1", "master seed");
    s.key("checkpoint_every", "0", "checkpoint cadence, 0 = final only");
    s.key("warmup", "0", "linear LR warmup iterations, 0 = off");
}

TrainConfig train_from_cfg(const FlatConfig& c) {
    TrainConfig t;
    t.iterations = cfg_int(c, "iterations");
    t.batch_size = static_cast<int>(cfg_int(c, "batch_size"));
    t.lr = cfg_double(c, "lr");
    t.beta1 = cfg_double(c, "beta1");
    t.beta2 = cfg_double(c, "beta2");
    t.eps = cfg_double(c, "eps");
    t.weight_decay = cfg_double(c, "weight_decay");
    t.seed = cfg_u64(c, "seed");
    t.checkpoint_every = cfg_int(c, "checkpoint_every");
    t.warmup = cfg_int(c, "warmup");
    t.validate();
    return t;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw io_error("missing " + what + " file: " + path);
}

void write_manifest(const std::string& sub, const FlatConfig& cfg,
                    const std::vector<std::string>& inputs) {
    const std::string out_dir = cfg_str(cfg, "out_dir");
    fs::create_directories(out_dir);
    RunManifest m;
    m.subcommand = sub;
    m.config = cfg;
    for (const auto& p : inputs)
        if (!p.empty()) m.input_hashes[p] = sha256_file_hex(p);
    m.created_utc = utc_now_string();
    m.write(out_dir + "/manifest.json");
}

std::vector<EcgWindow> load_windows(const FlatConfig& cfg) {
    const std::string path = cfg_str(cfg, "data");
    require_file(path, "dataset");
    return read_cpw1(path);
}

// fixed split file when supplied, seeded patient-disjoint CV otherwise
FoldPlan fold_plan_from_cfg(const FlatConfig& cfg, const std::vector<std::string>& patients) {
    const std::string split_file = cfg_str(cfg, "split_file");
    if (!split_file.empty()) {
        require_file(split_file, "split file");
        return FoldPlan::from_split_file(read_file_text(split_file), 0.25,
                                         cfg_u64(cfg, "fold_seed"));
    }
    std::fprintf(stderr, "[folds] no split file supplied; using seeded patient-disjoint folds\n");
    return FoldPlan::make(patients, static_cast<int>(cfg_int(cfg, "folds")),
                          cfg_u64(cfg, "fold_seed"));
}

// ----------------------------- subcommand handlers -----------------------------

int run_synth(const FlatConfig& cfg) {
    write_manifest("synth", cfg, {});
    const std::string out_dir = cfg_str(cfg, "out_dir");

    const auto presets = cfg_str_list(cfg, "presets");
    const auto sdnn_list = cfg_list(cfg, "sdnn_list");
    const int64_t total = cfg_int(cfg, "n_windows");
    const int64_t cells = static_cast<int64_t>(presets.size() * sdnn_list.size());
    if (total < cells) throw config_error("synth: n_windows smaller than preset/sdnn grid");

    std::vector<SynthConfig> configs;
    for (size_t pi = 0; pi < presets.size(); ++pi) {
        for (size_t si = 0; si < sdnn_list.size(); ++si) {
            const size_t idx = pi * sdnn_list.size() + si;
            SynthConfig sc;
            sc.preset = morphology_from(presets[pi]);
            sc.sdnn_ms = sdnn_list[si];
            sc.mean_rr_ms = cfg_double(cfg, "mean_rr_ms");
            sc.noise_std = cfg_double(cfg, "noise_std");
            sc.beat_amp_jitter = cfg_double(cfg, "beat_amp_jitter");
            sc.windows_per_patient = static_cast<int>(cfg_int(cfg, "windows_per_patient"));
            sc.seed = cfg_u64(cfg, "seed") + idx;
            sc.patient_prefix = "g" + std::to_string(idx);
            sc.n_windows = static_cast<int>(total / cells + (static_cast<int64_t>(idx) < total % cells ? 1 : 0));
            configs.push_back(sc);
        }
    }

    const auto windows = generate_mixed(configs);
    write_cpw1(out_dir + "/data.cpw1", windows);
    write_label_names(out_dir + "/labels.txt", {"normal", "af_like"});
    std::fprintf(stderr, "[synth] wrote %zu windows to %s/data.cpw1\n", windows.size(),
                 out_dir.c_str());
    return 0;
}

int run_preprocess(const FlatConfig& cfg) {
    const std::string input = cfg_str(cfg, "input");
    require_file(input, "input");
    const std::string atr = cfg_str(cfg, "atr");
    if (!atr.empty()) require_file(atr, "annotation");
    write_manifest("preprocess", cfg, {input, atr});
    const std::string out_dir = cfg_str(cfg, "out_dir");

    RecordingInput rec;
    std::string kind = cfg_str(cfg, "format");
    if (kind == "auto") kind = input.size() > 4 && input.substr(input.size() - 4) == ".hea" ? "wfdb" : "raw";

    if (kind == "wfdb") {
        const auto header = wfdb::parse_header(read_file_text(input));
        const std::string dat_path =
            (fs::path(input).parent_path() / header.signals.at(0).file_name).string();
        require_file(dat_path, "signal data");
        rec.samples_mv = wfdb::read_signal(header, read_file_bytes(dat_path),
                                           static_cast<int>(cfg_int(cfg, "channel")));
        rec.fs = header.sampling_frequency;
        rec.patient_id = header.record_name;
        rec.record_id = header.record_name;
        if (!atr.empty())
            rec.rhythms = wfdb::rhythm_intervals(wfdb::read_annotations(read_file_bytes(atr)));
    } else if (kind == "raw") {
        // raw little-endian f32 samples with a sidecar "<input>.meta" of
        // fs = ... / patient = ... lines; flags override
        const auto bytes = read_file_bytes(input);
        if (bytes.size() % 4 != 0) throw parse_error("raw input size is not a multiple of 4");
        ByteReader r(bytes);
        rec.samples_mv.resize(bytes.size() / 4);
        for (auto& v : rec.samples_mv) v = static_cast<double>(r.f32());
        FlatConfig meta_allowed{{"fs", ""}, {"patient", ""}};
        FlatConfig meta;
        if (fs::exists(input + ".meta")) meta = load_config_file(input + ".meta", meta_allowed);
        rec.fs = cfg_double(cfg, "fs") > 0 ? cfg_double(cfg, "fs")
                                           : (meta.count("fs") ? cfg_double(meta, "fs") : 0);
        rec.patient_id = !cfg_str(cfg, "patient").empty()
                             ? cfg_str(cfg, "patient")
                             : (meta.count("patient") ? meta["patient"] : "");
        if (!(rec.fs > 0)) throw config_error("raw input needs fs via flag or sidecar");
        if (rec.patient_id.empty()) throw config_error("raw input needs patient via flag or sidecar");
        rec.record_id = fs::path(input).stem().string();
    } else {
        throw config_error("format must be auto, wfdb or raw, got '" + kind + "'");
    }

    WindowOptions opts;
    opts.min_peak_to_peak = cfg_double(cfg, "min_p2p");
    LabelMap labels;
    const auto windows = preprocess_recording(rec, labels, opts);
    write_cpw1(out_dir + "/data.cpw1", windows);
    write_label_names(out_dir + "/labels.txt", labels.names);
    std::fprintf(stderr, "[preprocess] %zu windows from %s\n", windows.size(), input.c_str());
    return 0;
}

int run_pretrain(const FlatConfig& cfg) {
    const std::string data_path = cfg_str(cfg, "data");
    require_file(data_path, "dataset");
    const std::string resume = cfg_str(cfg, "resume");
    if (!resume.empty()) require_file(resume, "resume checkpoint");
    write_manifest("pretrain", cfg, {data_path, resume});

    const auto windows = load_windows(cfg);
    const ModelConfig mc = model_from_cfg(cfg);
    const TrainConfig tc = train_from_cfg(cfg);
    const TrainResult r = train(windows, mc, tc, cfg_str(cfg, "out_dir"), resume);
    std::fprintf(stderr, "[pretrain] final loss %.6f, checkpoint %s\n",
                 r.losses.empty() ? 0.0 : r.losses.back(), r.final_checkpoint.c_str());
    return 0;
}

void write_fold_csv(const std::string& path, const std::string& dataset,
                    const std::string& variant, const MetricReport& rep) {
    CsvWriter csv(path, "dataset,variant,fold,accuracy,f1,auc");
    for (const auto& f : rep.folds)
        csv.row(dataset + "," + variant + "," + std::to_string(f.fold) + "," +
                format_real(f.metrics.accuracy) + "," + format_real(f.metrics.macro_f1) + "," +
                format_real(f.metrics.macro_auc));
}

int run_probe(const FlatConfig& cfg) {
    const std::string ckpt_path = cfg_str(cfg, "checkpoint");
    require_file(ckpt_path, "checkpoint");
    require_file(cfg_str(cfg, "data"), "dataset");
    write_manifest("probe", cfg, {cfg_str(cfg, "data"), ckpt_path});

    const auto windows = load_windows(cfg);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const auto features = extract_features(ck.params, windows);
    std::vector<int> labels;
    std::vector<std::string> patients;
    for (const auto& w : windows) {
        labels.push_back(w.label);
        patients.push_back(w.patient_id);
    }
    const FoldPlan plan = fold_plan_from_cfg(cfg, patients);
    ProbeConfig pc;
    pc.l2 = cfg_double(cfg, "l2");
    pc.max_iters = static_cast<int>(cfg_int(cfg, "max_iters"));
    pc.grad_tol = cfg_double(cfg, "grad_tol");
    MetricReport rep = linear_probe(features, labels, patients, plan, pc);

    const std::string dataset = fs::path(cfg_str(cfg, "data")).stem().string();
    write_fold_csv(cfg_str(cfg, "out_dir") + "/results.csv", dataset,
                   variant_name(ck.params.config.variant), rep);
    std::fprintf(stderr, "[probe] acc %.4f +- %.4f | f1 %.4f +- %.4f | auc %.4f +- %.4f\n",
                 rep.acc_mean, rep.acc_std, rep.f1_mean, rep.f1_std, rep.auc_mean, rep.auc_std);
    return 0;
}

int run_finetune(const FlatConfig& cfg) {
    const std::string ckpt_path = cfg_str(cfg, "checkpoint");
    require_file(ckpt_path, "checkpoint");
    require_file(cfg_str(cfg, "data"), "dataset");
    write_manifest("finetune", cfg, {cfg_str(cfg, "data"), ckpt_path});

    const auto windows = load_windows(cfg);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<std::string> patients;
    for (const auto& w : windows) patients.push_back(w.patient_id);
    const FoldPlan plan = fold_plan_from_cfg(cfg, patients);
    FineTuneConfig fc;
    fc.lr = cfg_double(cfg, "lr");
    fc.encoder_lr_scale = cfg_double(cfg, "encoder_lr_scale");
    fc.batch_size = static_cast<int>(cfg_int(cfg, "batch_size"));
    fc.max_epochs = static_cast<int>(cfg_int(cfg, "max_epochs"));
    fc.patience = static_cast<int>(cfg_int(cfg, "patience"));
    fc.seed = cfg_u64(cfg, "seed");
    MetricReport rep = fine_tune(ck.params, windows, plan, fc);

    const std::string dataset = fs::path(cfg_str(cfg, "data")).stem().string();
    write_fold_csv(cfg_str(cfg, "out_dir") + "/results.csv", dataset,
                   variant_name(ck.params.config.variant), rep);
    std::fprintf(stderr, "[finetune] acc %.4f +- %.4f | f1 %.4f +- %.4f | auc %.4f +- %.4f\n",
                 rep.acc_mean, rep.acc_std, rep.f1_mean, rep.f1_std, rep.auc_mean, rep.auc_std);
    return 0;
}

int run_reconstruct(const FlatConfig& cfg) {
    const std::string ckpt_path = cfg_str(cfg, "checkpoint");
    require_file(ckpt_path, "checkpoint");
    require_file(cfg_str(cfg, "data"), "dataset");
    write_manifest("reconstruct", cfg, {cfg_str(cfg, "data"), ckpt_path});

    const auto windows = load_windows(cfg);
    Checkpoint ck = load_checkpoint(ckpt_path);
    const ModelConfig& mc = ck.params.config;
    const bool needs_spec = mc.variant == Variant::cupid && mc.dec_blocks > 1;
    SpectrogramTransform spec(mc.spectrogram_config());

    Rng rng(cfg_u64(cfg, "seed"));
    CsvWriter csv(cfg_str(cfg, "out_dir") + "/reconstruction.csv",
                  "window,sample_index,time_s,truth,reconstruction,patch_masked");
    for (double di : cfg_list(cfg, "indices")) {
        const auto wi = static_cast<size_t>(di);
        if (wi >= windows.size())
            throw config_error("reconstruct: window index " + std::to_string(wi) + " out of range");
        const EcgWindow& w = windows[wi];
        std::vector<MaskSpec> masks{random_mask(mc.n_patches(), mc.mask_ratio, rng)};
        const MaskSpec mask = masks[0];
        Batch batch = make_batch({&w}, mc, needs_spec ? &spec : nullptr, std::move(masks));
        Tensor h = batch.visible_count() > 0
                       ? assemble_decoder_input(
                             ck.params, run_encoder(ck.params, embed_visible(ck.params, batch)), batch)
                       : assemble_decoder_input(ck.params, Tensor(), batch);
        Tensor s_proj;
        if (needs_spec) s_proj = project_frames(ck.params, batch.spec_frames);
        Tensor recon = decode(ck.params, h, s_proj);
        const auto flat = unpatchify(reshape(recon, {mc.n_patches(), mc.patch_size}));
        for (int64_t i = 0; i < mc.window_samples; ++i) {
            const int patch = static_cast<int>(i / mc.patch_size);
            csv.row(std::to_string(wi) + "," + std::to_string(i) + "," +
                    format_real(double(i) / kTargetHz) + "," +
                    format_real(double(w.samples[static_cast<size_t>(i)])) + "," +
                    format_real(double(flat[static_cast<size_t>(i)])) + "," +
                    std::to_string(int(mask.masked[static_cast<size_t>(patch)])));
        }
    }
    return 0;
}

int run_sdnn_report(const FlatConfig& cfg) {
    require_file(cfg_str(cfg, "data"), "dataset");
    require_file(cfg_str(cfg, "mtae_checkpoint"), "mtae checkpoint");
    require_file(cfg_str(cfg, "cupid_checkpoint"), "cupid checkpoint");
    write_manifest("sdnn-report", cfg,
                   {cfg_str(cfg, "data"), cfg_str(cfg, "mtae_checkpoint"),
                    cfg_str(cfg, "cupid_checkpoint")});

    const auto windows = load_windows(cfg);
    const Checkpoint mtae_ck = load_checkpoint(cfg_str(cfg, "mtae_checkpoint"));
    const Checkpoint cupid_ck = load_checkpoint(cfg_str(cfg, "cupid_checkpoint"));
    const auto rows = sdnn_stratified_error(mtae_ck.params, cupid_ck.params, windows,
                                            cfg_list(cfg, "bin_edges"), cfg_u64(cfg, "seed"));

    CsvWriter csv(cfg_str(cfg, "out_dir") + "/sdnn.csv", "bin_lo,bin_hi,count,mtae_loss,cupid_loss");
    for (const auto& r : rows)
        csv.row(format_real(r.lo) + "," + format_real(r.hi) + "," + std::to_string(r.count) + "," +
                format_real(r.mtae_loss) + "," + format_real(r.cupid_loss));
    return 0;
}

int run_sweep(const FlatConfig& cfg) {
    require_file(cfg_str(cfg, "data"), "dataset");
    const std::string grid_path = cfg_str(cfg, "grid");
    require_file(grid_path, "grid config");
    write_manifest("sweep", cfg, {cfg_str(cfg, "data"), grid_path});

    const FlatConfig grid_allowed{{"patch_sizes", "20"},
                                  {"mask_ratios", "0.4"},
                                  {"iterations_list", "0"},
                                  {"enc_blocks_list", "0"}};
    FlatConfig grid_cfg = grid_allowed;
    for (const auto& [k, v] : load_config_file(grid_path, grid_allowed)) grid_cfg[k] = v;

    std::vector<SweepCell> cells;
    for (double ps : cfg_list(grid_cfg, "patch_sizes"))
        for (double mr : cfg_list(grid_cfg, "mask_ratios"))
            for (double its : cfg_list(grid_cfg, "iterations_list"))
                for (double eb : cfg_list(grid_cfg, "enc_blocks_list"))
                    cells.push_back({static_cast<int>(ps), mr, static_cast<int64_t>(its),
                                     static_cast<int>(eb)});

    const auto windows = load_windows(cfg);
    const ModelConfig mc = model_from_cfg(cfg);
    const TrainConfig tc = train_from_cfg(cfg);
    const std::string out_dir = cfg_str(cfg, "out_dir");
    const auto rows = sweep(windows, mc, tc, cells, out_dir + "/cells");

    CsvWriter csv(out_dir + "/sweep.csv", "ps,mr,iterations,enc_blocks,mtae,cupid,skipped,reason");
    for (const auto& r : rows)
        csv.row(std::to_string(r.cell.patch_size) + "," + format_real(r.cell.mask_ratio) + "," +
                std::to_string(r.cell.iterations) + "," + std::to_string(r.cell.enc_blocks) + "," +
                format_real(r.mtae_acc) + "," + format_real(r.cupid_acc) + "," +
                (r.skipped ? "1" : "0") + "," + r.skip_reason);
    return 0;
}

int run_spectrogram(const FlatConfig& cfg) {
    require_file(cfg_str(cfg, "data"), "dataset");
    write_manifest("spectrogram", cfg, {cfg_str(cfg, "data")});

    const auto windows = load_windows(cfg);
    const auto wi = static_cast<size_t>(cfg_int(cfg, "index"));
    if (wi >= windows.size())
        throw config_error("spectrogram: window index " + std::to_string(wi) + " out of range");

    SpectrogramConfig sc;
    sc.patch_size = static_cast<int>(cfg_int(cfg, "patch_size"));
    sc.n_bins = static_cast<int>(cfg_int(cfg, "spec_bins"));
    const std::string scale = cfg_str(cfg, "spec_scale");
    sc.scale = scale == "power" ? SpecScale::power
               : scale == "log" ? SpecScale::logmag
                                : SpecScale::magnitude;
    SpectrogramTransform transform(sc);
    const auto frames = transform.compute(windows[wi].samples);

    CsvWriter csv(cfg_str(cfg, "out_dir") + "/spectrogram.csv", "frame,bin,freq_hz,value");
    for (int64_t f = 0; f < frames.n_frames; ++f)
        for (int64_t b = 0; b < frames.n_bins; ++b)
            csv.row(std::to_string(f) + "," + std::to_string(b) + "," +
                    format_real(transform.bin_hz(b, kTargetHz)) + "," +
                    format_real(double(frames.frame(f)[b])));
    return 0;
}

// ----------------------------- dispatch -----------------------------

using Handler = std::function<int(const FlatConfig&)>;

struct Registry {
    std::map<std::string, std::pair<SubCmd*, Handler>> entries;
};

int dispatch(Registry& reg, const std::string& name, const FlatConfig& cfg) {
    auto it = reg.entries.find(name);
    if (it == reg.entries.end()) throw config_error("unknown subcommand in manifest: " + name);
    return it->second.second(cfg);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cupid: masked single-lead ECG pretraining workbench"};
    app.require_subcommand(1);

    SubCmd synth_cmd, preprocess_cmd, pretrain_cmd, probe_cmd, finetune_cmd, reconstruct_cmd,
        sdnn_cmd, sweep_cmd, spectrogram_cmd;

    synth_cmd.init(app, "synth", "generate a labeled synthetic ECG corpus");
    synth_cmd.key("out_dir", "runs/synth", "run directory");
    synth_cmd.key("n_windows", "2000", "total windows across the preset/sdnn grid");
    synth_cmd.key("presets", "normal,af_like", "comma list of morphology presets");
    synth_cmd.key("sdnn_list", "0,60,120", "comma list of requested RR jitter (ms)");
    synth_cmd.key("mean_rr_ms", "800", "mean RR interval (ms)");
    synth_cmd.key("noise_std", "0.05", "additive white noise std");
    synth_cmd.key("beat_amp_jitter", "0.15", "per-beat amplitude factor std");
    synth_cmd.key("windows_per_patient", "10", "windows assigned to one synthetic patient");
    synth_cmd.key("seed", "1", "base seed");

    preprocess_cmd.init(app, "preprocess", "condition a recording into model-ready windows");
    preprocess_cmd.key("out_dir", "runs/preprocess", "run directory");
    preprocess_cmd.key("input", "", "input file (.hea for wfdb, raw f32 otherwise)");
    preprocess_cmd.key("format", "auto", "input kind: auto | wfdb | raw");
    preprocess_cmd.key("channel", "0", "wfdb channel to extract");
    preprocess_cmd.key("atr", "", "optional MIT annotation file for labels");
    preprocess_cmd.key("fs", "0", "sampling rate for raw input");
    preprocess_cmd.key("patient", "", "patient id for raw input");
    preprocess_cmd.key("min_p2p", "0.1", "quality-gate peak-to-peak threshold");

    pretrain_cmd.init(app, "pretrain", "masked reconstruction pretraining");
    pretrain_cmd.key("out_dir", "runs/pretrain", "run directory");
    pretrain_cmd.key("data", "", "windowed dataset (.cpw1)");
    pretrain_cmd.key("resume", "", "checkpoint to continue from");
    add_model_keys(pretrain_cmd);
    add_train_keys(pretrain_cmd);

    probe_cmd.init(app, "probe", "linear probing over frozen representations");
    probe_cmd.key("out_dir", "runs/probe", "run directory");
    probe_cmd.key("data", "", "labeled dataset (.cpw1)");
    probe_cmd.key("checkpoint", "", "pretrained checkpoint");
    probe_cmd.key("folds", "5", "patient-disjoint folds");
    probe_cmd.key("fold_seed", "17", "fold shuffle seed");
    probe_cmd.key("split_file", "", "fixed '<patient>,train|test' split instead of CV folds");
    probe_cmd.key("l2", "1e-4", "ridge penalty");
    probe_cmd.key("max_iters", "10000", "gradient-descent iteration cap");
    probe_cmd.key("grad_tol", "1e-6", "gradient-norm stop threshold");

    finetune_cmd.init(app, "finetune", "joint encoder+head training with early stopping");
    finetune_cmd.key("out_dir", "runs/finetune", "run directory");
    finetune_cmd.key("data", "", "labeled dataset (.cpw1)");
    finetune_cmd.key("checkpoint", "", "pretrained checkpoint");
    finetune_cmd.key("folds", "5", "patient-disjoint folds");
    finetune_cmd.key("fold_seed", "17", "fold shuffle seed");
    finetune_cmd.key("split_file", "", "fixed '<patient>,train|test' split instead of CV folds");
    finetune_cmd.key("lr", "1e-4", "Adam learning rate");
    finetune_cmd.key("encoder_lr_scale", "1.0", "relative encoder learning rate");
    finetune_cmd.key("batch_size", "32", "windows per batch");
    finetune_cmd.key("max_epochs", "60", "epoch cap");
    finetune_cmd.key("patience", "5", "early-stopping patience");
    finetune_cmd.key("seed", "7", "shuffle seed");

    reconstruct_cmd.init(app, "reconstruct", "dump truth vs reconstruction for plotting");
    reconstruct_cmd.key("out_dir", "runs/reconstruct", "run directory");
    reconstruct_cmd.key("data", "", "dataset (.cpw1)");
    reconstruct_cmd.key("checkpoint", "", "pretrained checkpoint");
    reconstruct_cmd.key("indices", "0", "comma list of window indices");
    reconstruct_cmd.key("seed", "33", "mask seed");

    sdnn_cmd.init(app, "sdnn-report", "masked loss stratified by heartbeat irregularity");
    sdnn_cmd.key("out_dir", "runs/sdnn", "run directory");
    sdnn_cmd.key("data", "", "dataset with SDNN annotations (.cpw1)");
    sdnn_cmd.key("mtae_checkpoint", "", "mtae checkpoint");
    sdnn_cmd.key("cupid_checkpoint", "", "cupid checkpoint");
    sdnn_cmd.key("bin_edges", "0,30,60,90,120,inf", "SDNN bin edges (ms)");
    sdnn_cmd.key("seed", "101", "mask seed");

    sweep_cmd.init(app, "sweep", "patch-size/mask-ratio/size ablation grid");
    sweep_cmd.key("out_dir", "runs/sweep", "run directory");
    sweep_cmd.key("data", "", "labeled dataset (.cpw1)");
    sweep_cmd.key("grid", "", "grid config file (patch_sizes=..., mask_ratios=..., ...)");
    add_model_keys(sweep_cmd);
    add_train_keys(sweep_cmd);

    spectrogram_cmd.init(app, "spectrogram", "emit STFT frames for one window");
    spectrogram_cmd.key("out_dir", "runs/spectrogram", "run directory");
    spectrogram_cmd.key("data", "", "dataset (.cpw1)");
    spectrogram_cmd.key("index", "0", "window index");
    spectrogram_cmd.key("patch_size", "20", "patch length in samples");
    spectrogram_cmd.key("spec_bins", "255", "one-sided bin count");
    spectrogram_cmd.key("spec_scale", "mag", "mag | power | log");

    std::string rerun_manifest, rerun_out_dir;
    CLI::App* rerun_cmd = app.add_subcommand("rerun", "repeat a run from its manifest");
    rerun_cmd->add_option("manifest", rerun_manifest, "manifest.json of an earlier run")
        ->required();
    rerun_cmd->add_option("--out-dir", rerun_out_dir, "redirect outputs to a fresh directory");

    Registry reg;
    reg.entries["synth"] = {&synth_cmd, run_synth};
    reg.entries["preprocess"] = {&preprocess_cmd, run_preprocess};
    reg.entries["pretrain"] = {&pretrain_cmd, run_pretrain};
    reg.entries["probe"] = {&probe_cmd, run_probe};
    reg.entries["finetune"] = {&finetune_cmd, run_finetune};
    reg.entries["reconstruct"] = {&reconstruct_cmd, run_reconstruct};
    reg.entries["sdnn-report"] = {&sdnn_cmd, run_sdnn_report};
    reg.entries["sweep"] = {&sweep_cmd, run_sweep};
    reg.entries["spectrogram"] = {&spectrogram_cmd, run_spectrogram};

    try {
        app.parse(argc, argv);

        if (rerun_cmd->parsed()) {
            const RunManifest m = RunManifest::read(rerun_manifest);
            FlatConfig cfg = m.config;
            if (!rerun_out_dir.empty()) cfg["out_dir"] = rerun_out_dir;
            return dispatch(reg, m.subcommand, cfg);
        }
        for (auto& [name, entry] : reg.entries) {
            if (entry.first->app->parsed()) return entry.second(entry.first->resolve());
        }
        std::fprintf(stderr, "no subcommand given\n");
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
