#include "cupid/spectrogram.hpp"

#include <cmath>

namespace cupid {

namespace {
constexpr double kPi = 3.14159265358979323846;

// reflect indexing without edge duplication: ...x[2] x[1] | x[0] x[1] ... x[n-1] | x[n-2]...
int64_t reflect_index(int64_t i, int64_t n) {
    if (n == 1) return 0;
    const int64_t period = 2 * (n - 1);
    int64_t j = i % period;
    if (j < 0) j += period;
    return j < n ? j : period - j;
}

}  // namespace

SpectrogramTransform::SpectrogramTransform(SpectrogramConfig cfg) : cfg_(cfg) {
    if (cfg_.patch_size < 1) throw config_error("spectrogram: patch size must be >= 1");
    if (cfg_.n_bins < 2) throw config_error("spectrogram: need at least 2 bins");
    pad_ = cfg_.patch_size / 2;
    window_len_ = cfg_.patch_size + 2 * pad_;
    fft_len_ = 2 * (cfg_.n_bins - 1);
    if (window_len_ > fft_len_)
        throw config_error("spectrogram: window length " + std::to_string(window_len_) +
                           " exceeds transform length " + std::to_string(fft_len_));

    hann_.resize(static_cast<size_t>(window_len_));
    if (window_len_ == 1) {
        hann_[0] = 1.0;
    } else {
        for (int n = 0; n < window_len_; ++n)
            hann_[static_cast<size_t>(n)] =
                0.5 * (1.0 - std::cos(2.0 * kPi * n / (window_len_ - 1)));
    }

    // direct DFT over the (zero-padded) frame; only window_len_ inputs are
    // non-zero, so the tables cover exactly those
    cos_table_.resize(static_cast<size_t>(cfg_.n_bins) * window_len_);
    sin_table_.resize(static_cast<size_t>(cfg_.n_bins) * window_len_);
    for (int k = 0; k < cfg_.n_bins; ++k) {
        for (int n = 0; n < window_len_; ++n) {
            const double theta = 2.0 * kPi * double(k) * double(n) / double(fft_len_);
            cos_table_[static_cast<size_t>(k) * window_len_ + n] = std::cos(theta);
            sin_table_[static_cast<size_t>(k) * window_len_ + n] = std::sin(theta);
        }
    }
}

SpectrogramFrames SpectrogramTransform::compute(const std::vector<real>& x) const {
    const int64_t n = static_cast<int64_t>(x.size());
    if (n == 0 || n % cfg_.patch_size != 0)
        throw config_error("spectrogram: input length " + std::to_string(n) +
                           " is not a multiple of patch size " + std::to_string(cfg_.patch_size));
    const int64_t n_frames = n / cfg_.patch_size;

    SpectrogramFrames out;
    out.n_frames = n_frames;
    out.n_bins = cfg_.n_bins;
    out.values.resize(static_cast<size_t>(n_frames) * cfg_.n_bins);

    std::vector<double> frame(static_cast<size_t>(window_len_));
    for (int64_t f = 0; f < n_frames; ++f) {
        const int64_t start = f * cfg_.patch_size - pad_;
        for (int w = 0; w < window_len_; ++w)
            frame[static_cast<size_t>(w)] =
                hann_[static_cast<size_t>(w)] *
                static_cast<double>(x[static_cast<size_t>(reflect_index(start + w, n))]);

        real* row = out.values.data() + f * cfg_.n_bins;
        for (int k = 0; k < cfg_.n_bins; ++k) {
            const double* ct = cos_table_.data() + static_cast<size_t>(k) * window_len_;
            const double* st = sin_table_.data() + static_cast<size_t>(k) * window_len_;
            double re = 0, im = 0;
            for (int w = 0; w < window_len_; ++w) {
                re += frame[static_cast<size_t>(w)] * ct[w];
                im -= frame[static_cast<size_t>(w)] * st[w];
            }
            const double mag = std::sqrt(re * re + im * im);
            double v = mag;
            if (cfg_.scale == SpecScale::power)
                v = mag * mag;
            else if (cfg_.scale == SpecScale::logmag)
                v = std::log(mag + 1e-6);
            row[k] = static_cast<real>(v);
        }
    }
    return out;
}

}  // namespace cupid
