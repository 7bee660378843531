#pragma once

// STFT magnitude frames aligned one-to-one with input patches: hop = patch
// size, analysis window spans the patch plus half a patch of context each
// side, zero-padded to a 508-point transform so the one-sided bin count is
// 255. The spectrogram is computed on the raw window and never masked.

#include <cstdint>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

enum class SpecScale { magnitude, power, logmag };

struct SpectrogramConfig {
    int patch_size = 20;
    int n_bins = 255;  // one-sided count; transform length = 2*(n_bins-1)
    SpecScale scale = SpecScale::magnitude;
};

struct SpectrogramFrames {
    int64_t n_frames = 0;
    int64_t n_bins = 0;
    std::vector<real> values;  // n_frames x n_bins, row-major

    const real* frame(int64_t i) const { return values.data() + i * n_bins; }
};

class SpectrogramTransform {
public:
    explicit SpectrogramTransform(SpectrogramConfig cfg);

    // x length must be a positive multiple of patch_size.
    SpectrogramFrames compute(const std::vector<real>& x) const;

    int window_len() const { return window_len_; }
    int fft_len() const { return fft_len_; }
    int hop() const { return cfg_.patch_size; }
    const std::vector<double>& hann() const { return hann_; }
    const SpectrogramConfig& config() const { return cfg_; }

    // bin center frequency in Hz for sampling rate fs
    double bin_hz(int64_t bin, double fs) const { return double(bin) * fs / fft_len_; }

private:
    SpectrogramConfig cfg_;
    int pad_ = 0;
    int window_len_ = 0;
    int fft_len_ = 0;
    std::vector<double> hann_;
    std::vector<double> cos_table_;  // n_bins x window_len
    std::vector<double> sin_table_;
};

}  // namespace cupid
