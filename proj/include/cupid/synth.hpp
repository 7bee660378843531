#pragma once

// Labeled synthetic single-lead ECG with controllable rhythm regularity.
// Gaussian-bump morphology (P/QRS/T) placed at jittered RR intervals; the
// af_like preset drops P waves and inflates the RR jitter.

#include <cstdint>
#include <string>
#include <vector>

#include "cupid/dataset.hpp"

namespace cupid {

enum class Morphology { normal, af_like };

std::string morphology_name(Morphology m);
Morphology morphology_from(const std::string& name);

struct SynthConfig {
    double mean_rr_ms = 800.0;
    double sdnn_ms = 50.0;  // requested RR jitter std
    Morphology preset = Morphology::normal;
    double noise_std = 0.05;
    // per-beat common amplitude factor ~ N(1, jitter^2), clamped to [0.6, 1.4];
    // relative P/QRS/T amplitudes stay fixed. A masked beat's scale is not
    // recoverable from the visible patches, only from its spectrogram frame.
    double beat_amp_jitter = 0.15;
    uint64_t seed = 1;
    int n_windows = 100;
    int windows_per_patient = 10;
    std::string patient_prefix = "synth";

    void validate() const;
    // af_like inflates the requested jitter: max(1.5 * sdnn, 80 ms)
    double effective_sdnn_ms() const;
    int label() const { return preset == Morphology::normal ? 0 : 1; }
};

// Windows are generated independently from per-window seed forks, so the
// output is identical however the work is partitioned. sdnn_ms on each window
// holds the realized RR standard deviation.
std::vector<EcgWindow> generate(const SynthConfig& cfg);

// Concatenation of per-config outputs: class proportions are exact.
std::vector<EcgWindow> generate_mixed(const std::vector<SynthConfig>& configs);

}  // namespace cupid
