#pragma once

// Butterworth design (bilinear transform with prewarping) and zero-phase
// forward-backward filtering over second-order sections. Filtering runs in
// double regardless of the build's tensor scalar type.

#include <cstdint>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;  // numerator
    double a1 = 0, a2 = 0;          // denominator (a0 == 1)
};

struct Sos {
    std::vector<Biquad> sections;

    // magnitude response at frequency f (Hz) for sampling rate fs
    double magnitude(double f, double fs) const;
};

Sos butter_highpass(int order, double cutoff_hz, double fs);
Sos butter_lowpass(int order, double cutoff_hz, double fs);

// Single-pass filtering with steady-state initial conditions scaled to the
// first sample (the lfilter_zi trick), direct form II transposed.
std::vector<double> sosfilt(const Sos& sos, const std::vector<double>& x);

// Forward-backward application with odd-reflection padding; unit passband
// phase, squared magnitude response.
std::vector<double> sosfiltfilt(const Sos& sos, const std::vector<double>& x);

}  // namespace cupid
