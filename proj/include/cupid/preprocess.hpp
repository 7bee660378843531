#pragma once

// Signal-conditioning chain, fixed order:
//   resample to 100 Hz -> 5th-order Butterworth high-pass 0.5 Hz (zero-phase)
//   -> per-recording unit-variance normalization -> non-overlapping windows.

#include <optional>
#include <string>
#include <vector>

#include "cupid/common.hpp"
#include "cupid/dataset.hpp"
#include "cupid/wfdb.hpp"

namespace cupid {

// Linear interpolation to fs_out with an anti-alias Butterworth low-pass when
// downsampling. Output length = floor(n * fs_out / fs_in).
std::vector<double> resample(const std::vector<double>& x, double fs_in,
                             double fs_out = kTargetHz);

// Zero-phase 5th-order Butterworth high-pass, 0.5 Hz, expects 100 Hz input.
std::vector<double> highpass(const std::vector<double>& x);

struct NormStats {
    double mean = 0, std = 1;
};

// Whole-recording statistics applied in place; rejects flat-line recordings.
NormStats normalize_recording(std::vector<double>& x);

// ----------------------------- labels -----------------------------

// Rhythm-string to class-id map. The AFib task labels come preloaded;
// unrecognized rhythm strings get fresh ids in encounter order.
struct LabelMap {
    std::vector<std::string> names = {"(N", "(AFIB", "(B"};
    int id_for(const std::string& rhythm);
    int lookup(const std::string& rhythm) const;  // -1 when absent
};

// Annotated rhythm spans at 100 Hz, half-open [onset, next onset).
struct LabeledSpan {
    int64_t onset = 0;
    int label = -1;
};

// ----------------------------- windowing -----------------------------

struct WindowOptions {
    double min_peak_to_peak = 0.1;  // quality gate threshold
    bool compute_sdnn = true;
};

// Cuts a conditioned recording into EcgWindows. Labels follow the span that
// covers the majority of the window; ties break toward the higher (arrhythmic)
// class id. Windows failing the quality gate are dropped; short tail discarded.
std::vector<EcgWindow> window_recording(const std::vector<double>& x,
                                        const std::string& patient_id,
                                        const std::string& record_id,
                                        const std::vector<LabeledSpan>& spans = {},
                                        const WindowOptions& opts = {});

// ----------------------------- R peaks / SDNN -----------------------------

// Threshold-over-derivative detector: smoothed squared first difference,
// threshold at a fraction of its max, refractory 250 ms, peak refined on |x|.
std::vector<int64_t> detect_r_peaks(const std::vector<double>& x, double fs = kTargetHz);

// Sample standard deviation of successive RR intervals in ms; absent with
// fewer than 3 peaks.
std::optional<double> compute_sdnn(const std::vector<double>& x, double fs = kTargetHz);

// ----------------------------- full chain -----------------------------

struct RecordingInput {
    std::vector<double> samples_mv;
    double fs = 0;
    std::string patient_id;
    std::string record_id;
    std::vector<wfdb::RhythmInterval> rhythms;  // onsets in source sample units
};

std::vector<EcgWindow> preprocess_recording(const RecordingInput& rec, LabelMap& labels,
                                            const WindowOptions& opts = {});

}  // namespace cupid
