#include "cupid/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cupid/iir.hpp"

namespace cupid {

std::vector<double> resample(const std::vector<double>& x, double fs_in, double fs_out) {
    if (!(fs_in > 0)) throw config_error("resample: input rate must be > 0");
    if (!(fs_out > 0)) throw config_error("resample: output rate must be > 0");
    if (x.empty()) return {};
    if (fs_in == fs_out) return x;

    const std::vector<double>* src = &x;
    std::vector<double> filtered;
    if (fs_in > fs_out) {
        // anti-alias before decimation; zero-phase keeps waves aligned
        filtered = sosfiltfilt(butter_lowpass(8, 0.45 * fs_out, fs_in), x);
        src = &filtered;
    }

    const int64_t n_in = static_cast<int64_t>(x.size());
    const int64_t n_out = static_cast<int64_t>(std::floor(double(n_in) * fs_out / fs_in));
    const double step = fs_in / fs_out;
    std::vector<double> out(static_cast<size_t>(n_out));
    for (int64_t i = 0; i < n_out; ++i) {
        const double t = double(i) * step;
        int64_t i0 = static_cast<int64_t>(t);
        if (i0 >= n_in - 1) i0 = n_in - 2;
        if (i0 < 0) i0 = 0;
        const double frac = t - double(i0);
        out[static_cast<size_t>(i)] = (*src)[static_cast<size_t>(i0)] * (1.0 - frac) +
                                      (*src)[static_cast<size_t>(i0 + 1)] * frac;
    }
    if (n_in == 1 && n_out >= 1) std::fill(out.begin(), out.end(), x[0]);
    return out;
}

std::vector<double> highpass(const std::vector<double>& x) {
    static const Sos sos = butter_highpass(5, 0.5, kTargetHz);
    return sosfiltfilt(sos, x);
}

NormStats normalize_recording(std::vector<double>& x) {
    if (x.empty()) throw config_error("normalize: empty recording");
    double mean = 0;
    for (double v : x) mean += v;
    mean /= double(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= double(x.size());
    if (var < 1e-24) throw config_error("normalize: flat-line recording rejected");
    const double inv_std = 1.0 / std::sqrt(var);
    for (double& v : x) v = (v - mean) * inv_std;
    return {mean, std::sqrt(var)};
}

// ----------------------------- labels -----------------------------

int LabelMap::id_for(const std::string& rhythm) {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == rhythm) return static_cast<int>(i);
    names.push_back(rhythm);
    return static_cast<int>(names.size() - 1);
}

int LabelMap::lookup(const std::string& rhythm) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == rhythm) return static_cast<int>(i);
    return -1;
}

namespace {

// Majority label over [start, start+len); ties toward the higher class id,
// which orders the arrhythmic classes above "(N".
int majority_label(const std::vector<LabeledSpan>& spans, int64_t start, int64_t len,
                   int n_classes) {
    if (spans.empty() || n_classes <= 0) return -1;
    std::vector<int64_t> covered(static_cast<size_t>(n_classes), 0);
    for (size_t i = 0; i < spans.size(); ++i) {
        const int64_t s0 = spans[i].onset;
        const int64_t s1 = (i + 1 < spans.size()) ? spans[i + 1].onset : start + len;
        const int64_t lo = std::max(start, s0);
        const int64_t hi = std::min(start + len, s1);
        if (hi > lo && spans[i].label >= 0 && spans[i].label < n_classes)
            covered[static_cast<size_t>(spans[i].label)] += hi - lo;
    }
    int best = -1;
    int64_t best_count = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (covered[static_cast<size_t>(c)] >= best_count && covered[static_cast<size_t>(c)] > 0) {
            best = c;
            best_count = covered[static_cast<size_t>(c)];
        }
    }
    return best;
}

bool passes_gate(const double* x, int64_t len, double min_p2p) {
    double lo = x[0], hi = x[0];
    for (int64_t i = 0; i < len; ++i) {
        if (!std::isfinite(x[i])) return false;
        lo = std::min(lo, x[i]);
        hi = std::max(hi, x[i]);
    }
    return hi - lo >= min_p2p;
}

}  // namespace

std::vector<EcgWindow> window_recording(const std::vector<double>& x,
                                        const std::string& patient_id,
                                        const std::string& record_id,
                                        const std::vector<LabeledSpan>& spans,
                                        const WindowOptions& opts) {
    std::vector<EcgWindow> out;
    const int64_t n_windows = static_cast<int64_t>(x.size()) / kWindowSamples;
    int n_classes = 0;
    for (const auto& s : spans) n_classes = std::max(n_classes, s.label + 1);
    for (int64_t w = 0; w < n_windows; ++w) {
        const int64_t start = w * kWindowSamples;
        if (!passes_gate(x.data() + start, kWindowSamples, opts.min_peak_to_peak)) continue;
        EcgWindow win;
        win.samples.resize(static_cast<size_t>(kWindowSamples));
        for (int64_t i = 0; i < kWindowSamples; ++i)
            win.samples[static_cast<size_t>(i)] = static_cast<real>(x[static_cast<size_t>(start + i)]);
        win.patient_id = patient_id;
        win.record_id = record_id;
        win.label = majority_label(spans, start, kWindowSamples, n_classes);
        if (opts.compute_sdnn) {
            std::vector<double> seg(x.begin() + start, x.begin() + start + kWindowSamples);
            if (auto sdnn = compute_sdnn(seg)) win.sdnn_ms = *sdnn;
        }
        out.push_back(std::move(win));
    }
    return out;
}

// ----------------------------- R peaks / SDNN -----------------------------

std::vector<int64_t> detect_r_peaks(const std::vector<double>& x, double fs) {
    const int64_t n = static_cast<int64_t>(x.size());
    if (n < 3) return {};

    // smoothed squared derivative
    std::vector<double> energy(static_cast<size_t>(n - 1));
    for (int64_t i = 0; i + 1 < n; ++i) {
        const double d = x[static_cast<size_t>(i + 1)] - x[static_cast<size_t>(i)];
        energy[static_cast<size_t>(i)] = d * d;
    }
    const int64_t ma = std::max<int64_t>(1, static_cast<int64_t>(0.05 * fs));  // 50 ms
    std::vector<double> smooth(energy.size(), 0.0);
    double acc = 0;
    for (int64_t i = 0; i < static_cast<int64_t>(energy.size()); ++i) {
        acc += energy[static_cast<size_t>(i)];
        if (i >= ma) acc -= energy[static_cast<size_t>(i - ma)];
        smooth[static_cast<size_t>(i)] = acc;
    }

    double peak_energy = 0;
    for (double v : smooth) peak_energy = std::max(peak_energy, v);
    if (peak_energy <= 0) return {};
    // low enough to keep weak beats (QRS slopes dwarf T-wave slopes anyway)
    const double thr = 0.1 * peak_energy;

    const int64_t refractory = static_cast<int64_t>(0.25 * fs);  // 250 ms
    const int64_t search = static_cast<int64_t>(0.15 * fs);
    const int64_t refine = static_cast<int64_t>(0.08 * fs);

    std::vector<int64_t> peaks;
    int64_t i = 0;
    const int64_t m = static_cast<int64_t>(smooth.size());
    while (i < m) {
        if (smooth[static_cast<size_t>(i)] <= thr) {
            ++i;
            continue;
        }
        // local energy peak, then refine on |x|
        int64_t j_best = i;
        for (int64_t j = i; j < std::min(i + search, m); ++j)
            if (smooth[static_cast<size_t>(j)] > smooth[static_cast<size_t>(j_best)]) j_best = j;
        int64_t p = std::max<int64_t>(0, j_best - refine);
        for (int64_t j = p; j < std::min(j_best + refine + 1, n); ++j)
            if (std::fabs(x[static_cast<size_t>(j)]) > std::fabs(x[static_cast<size_t>(p)])) p = j;
        if (peaks.empty() || p - peaks.back() >= refractory) peaks.push_back(p);
        i = j_best + refractory;
    }
    return peaks;
}

std::optional<double> compute_sdnn(const std::vector<double>& x, double fs) {
    const auto peaks = detect_r_peaks(x, fs);
    if (peaks.size() < 3) return std::nullopt;
    std::vector<double> rr_ms(peaks.size() - 1);
    for (size_t i = 1; i < peaks.size(); ++i)
        rr_ms[i - 1] = double(peaks[i] - peaks[i - 1]) * 1000.0 / fs;
    double mean = 0;
    for (double v : rr_ms) mean += v;
    mean /= double(rr_ms.size());
    double ss = 0;
    for (double v : rr_ms) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / double(rr_ms.size() - 1));
}

// ----------------------------- full chain -----------------------------

std::vector<EcgWindow> preprocess_recording(const RecordingInput& rec, LabelMap& labels,
                                            const WindowOptions& opts) {
    if (!(rec.fs > 0)) throw config_error("preprocess: sampling rate must be > 0");
    std::vector<double> x = resample(rec.samples_mv, rec.fs);
    x = highpass(x);
    normalize_recording(x);

    std::vector<LabeledSpan> spans;
    for (const auto& r : rec.rhythms) {
        LabeledSpan s;
        s.onset = static_cast<int64_t>(std::llround(double(r.onset) * kTargetHz / rec.fs));
        s.label = labels.id_for(r.label);
        spans.push_back(s);
    }
    return window_recording(x, rec.patient_id, rec.record_id, spans, opts);
}

}  // namespace cupid
