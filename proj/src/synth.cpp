#include "cupid/synth.hpp"

#include <cmath>

#include "cupid/rng.hpp"

namespace cupid {

std::string morphology_name(Morphology m) {
    return m == Morphology::normal ? "normal" : "af_like";
}

Morphology morphology_from(const std::string& name) {
    if (name == "normal") return Morphology::normal;
    if (name == "af_like") return Morphology::af_like;
    throw config_error("unknown morphology preset '" + name + "' (normal | af_like)");
}

void SynthConfig::validate() const {
    if (!(mean_rr_ms > 200)) throw config_error("synth: mean RR must exceed 200 ms");
    if (sdnn_ms < 0) throw config_error("synth: sdnn must be >= 0");
    if (noise_std < 0) throw config_error("synth: noise std must be >= 0");
    if (beat_amp_jitter < 0) throw config_error("synth: beat amplitude jitter must be >= 0");
    if (n_windows <= 0) throw config_error("synth: need at least one window");
    if (windows_per_patient <= 0) throw config_error("synth: windows per patient must be >= 1");
}

double SynthConfig::effective_sdnn_ms() const {
    if (preset == Morphology::normal) return sdnn_ms;
    return std::max(1.5 * sdnn_ms, 80.0);
}

namespace {

struct Bump {
    double amp, center_s, sigma_s;
};

// wave offsets relative to the R peak, seconds
const Bump kNormalBumps[] = {
    {0.15, -0.180, 0.030},   // P
    {-0.10, -0.025, 0.010},  // Q
    {1.00, 0.000, 0.012},    // R
    {-0.15, 0.030, 0.010},   // S
    {0.30, 0.250, 0.060},    // T
};

constexpr double kWindowSeconds = 10.0;
constexpr double kBeatReach = 0.6;  // seconds a beat can influence

}  // namespace

std::vector<EcgWindow> generate(const SynthConfig& cfg) {
    cfg.validate();
    const double sd_s = cfg.effective_sdnn_ms() / 1000.0;
    const double mean_rr_s = cfg.mean_rr_ms / 1000.0;
    const bool with_p = cfg.preset == Morphology::normal;

    Rng master(cfg.seed);
    std::vector<EcgWindow> out;
    out.reserve(static_cast<size_t>(cfg.n_windows));

    for (int w = 0; w < cfg.n_windows; ++w) {
        Rng rng = master.fork(static_cast<uint64_t>(w));

        // beat train covering the window plus margins; each beat carries a
        // common amplitude factor over its fixed P/QRS/T proportions
        std::vector<double> beats, amps;
        double t = -0.5 + 0.37 * mean_rr_s;
        while (t < kWindowSeconds + 0.5) {
            beats.push_back(t);
            double a = rng.gaussian(1.0, cfg.beat_amp_jitter);
            amps.push_back(std::min(1.4, std::max(0.6, a)));
            double rr = rng.gaussian(mean_rr_s, sd_s);
            if (rr < 0.25) rr = 0.25;  // physiological floor keeps RR positive
            t += rr;
        }

        EcgWindow win;
        win.samples.assign(static_cast<size_t>(kWindowSamples), real(0));
        size_t first_beat = 0;
        for (int64_t i = 0; i < kWindowSamples; ++i) {
            const double ti = double(i) / kTargetHz;
            while (first_beat < beats.size() && beats[first_beat] < ti - kBeatReach) ++first_beat;
            double v = 0;
            for (size_t b = first_beat; b < beats.size() && beats[b] <= ti + kBeatReach; ++b) {
                const double dt = ti - beats[b];
                const size_t first_bump = with_p ? 0 : 1;  // af_like drops the P wave
                for (size_t k = first_bump; k < std::size(kNormalBumps); ++k) {
                    const Bump& bump = kNormalBumps[k];
                    const double d = dt - bump.center_s;
                    v += amps[b] * bump.amp * std::exp(-0.5 * d * d / (bump.sigma_s * bump.sigma_s));
                }
            }
            win.samples[static_cast<size_t>(i)] = static_cast<real>(v);
        }
        if (cfg.noise_std > 0) {
            for (auto& s : win.samples)
                s += static_cast<real>(rng.gaussian(0.0, cfg.noise_std));
        }

        // realized RR statistics over beats inside the window
        std::vector<double> rr_ms;
        for (size_t b = 1; b < beats.size(); ++b) {
            if (beats[b - 1] >= 0 && beats[b] < kWindowSeconds)
                rr_ms.push_back((beats[b] - beats[b - 1]) * 1000.0);
        }
        if (rr_ms.size() >= 2) {
            double mean = 0;
            for (double v : rr_ms) mean += v;
            mean /= double(rr_ms.size());
            double ss = 0;
            for (double v : rr_ms) ss += (v - mean) * (v - mean);
            win.sdnn_ms = std::sqrt(ss / double(rr_ms.size() - 1));
        }

        win.label = cfg.label();
        win.patient_id = cfg.patient_prefix + "-" + morphology_name(cfg.preset) + "-p" +
                         std::to_string(w / cfg.windows_per_patient);
        win.record_id = win.patient_id + "-w" + std::to_string(w);
        out.push_back(std::move(win));
    }
    return out;
}

std::vector<EcgWindow> generate_mixed(const std::vector<SynthConfig>& configs) {
    std::vector<EcgWindow> out;
    for (const auto& cfg : configs) {
        auto part = generate(cfg);
        out.insert(out.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    return out;
}

}  // namespace cupid
