#include "cupid/iir.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace cupid {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = 3.14159265358979323846;

// Analog Butterworth prototype poles on the unit circle, left half-plane.
std::vector<cplx> prototype_poles(int order) {
    std::vector<cplx> poles;
    for (int k = 0; k < order; ++k) {
        const double theta = kPi * (2.0 * k + order + 1.0) / (2.0 * order);
        poles.emplace_back(std::cos(theta), std::sin(theta));
    }
    return poles;
}

cplx bilinear(cplx s, double fs) {
    const double fs2 = 2.0 * fs;
    return (cplx(fs2) + s) / (cplx(fs2) - s);
}

// Builds the cascade from z-domain poles plus n zeros pinned at z = zero_at,
// then normalizes the overall gain to exactly 1 at z = ref.
Sos build_sections(std::vector<cplx> zpoles, double zero_at, double ref) {
    // conjugate pairs first, possible lone real pole last
    std::sort(zpoles.begin(), zpoles.end(), [](const cplx& a, const cplx& b) {
        if (std::abs(a.imag()) != std::abs(b.imag()))
            return std::abs(a.imag()) > std::abs(b.imag());
        return a.real() < b.real();
    });

    Sos sos;
    size_t i = 0;
    while (i < zpoles.size()) {
        Biquad q;
        if (std::abs(zpoles[i].imag()) > 1e-12) {
            const cplx p = zpoles[i];
            q.a1 = -2.0 * p.real();
            q.a2 = std::norm(p);
            q.b0 = 1.0;
            q.b1 = -2.0 * zero_at;
            q.b2 = zero_at * zero_at;
            i += 2;  // conjugate partner
        } else {
            q.a1 = -zpoles[i].real();
            q.a2 = 0.0;
            q.b0 = 1.0;
            q.b1 = -zero_at;
            q.b2 = 0.0;
            i += 1;
        }
        sos.sections.push_back(q);
    }

    // gain normalization at the reference point (real z = +/-1),
    // H(z) = prod (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
    double h = 1.0;
    const double zi1 = 1.0 / ref;
    for (const Biquad& q : sos.sections) {
        const double num = q.b0 + q.b1 * zi1 + q.b2 * zi1 * zi1;
        const double den = 1.0 + q.a1 * zi1 + q.a2 * zi1 * zi1;
        h *= num / den;
    }
    const double scale = 1.0 / h;
    sos.sections[0].b0 *= scale;
    sos.sections[0].b1 *= scale;
    sos.sections[0].b2 *= scale;
    return sos;
}

void check_design(int order, double cutoff_hz, double fs) {
    if (order < 1) throw config_error("butterworth: order must be >= 1");
    if (!(fs > 0)) throw config_error("butterworth: sampling rate must be > 0");
    if (!(cutoff_hz > 0) || cutoff_hz >= fs / 2)
        throw config_error("butterworth: cutoff must lie in (0, fs/2)");
}

}  // namespace

Sos butter_highpass(int order, double cutoff_hz, double fs) {
    check_design(order, cutoff_hz, fs);
    const double warped = 2.0 * fs * std::tan(kPi * cutoff_hz / fs);
    std::vector<cplx> zpoles;
    for (cplx p : prototype_poles(order)) {
        const cplx s = cplx(warped) / p;  // LP -> HP: s_hp = wc / s
        zpoles.push_back(bilinear(s, fs));
    }
    // n zeros at s=0 map to z=1; normalize at Nyquist (z=-1)
    return build_sections(std::move(zpoles), 1.0, -1.0);
}

Sos butter_lowpass(int order, double cutoff_hz, double fs) {
    check_design(order, cutoff_hz, fs);
    const double warped = 2.0 * fs * std::tan(kPi * cutoff_hz / fs);
    std::vector<cplx> zpoles;
    for (cplx p : prototype_poles(order)) {
        const cplx s = cplx(warped) * p;  // LP -> LP: s = wc * s_proto
        zpoles.push_back(bilinear(s, fs));
    }
    // n zeros at s=inf map to z=-1; normalize at DC (z=1)
    return build_sections(std::move(zpoles), -1.0, 1.0);
}

double Sos::magnitude(double f, double fs) const {
    const cplx z = std::polar(1.0, 2.0 * kPi * f / fs);
    const cplx zi1 = 1.0 / z;
    cplx h(1.0, 0.0);
    for (const Biquad& q : sections) {
        const cplx num = q.b0 + q.b1 * zi1 + q.b2 * zi1 * zi1;
        const cplx den = 1.0 + q.a1 * zi1 + q.a2 * zi1 * zi1;
        h *= num / den;
    }
    return std::abs(h);
}

namespace {

// Steady-state DF2T state for a constant unit input (lfilter_zi).
void section_zi(const Biquad& q, double& z1, double& z2, double& dc_gain) {
    const double den = 1.0 + q.a1 + q.a2;
    const double g = (q.b0 + q.b1 + q.b2) / den;
    z1 = g - q.b0;
    z2 = q.b2 - q.a2 * g;
    dc_gain = g;
}

std::vector<double> sosfilt_zi(const Sos& sos, const std::vector<double>& x, double x0) {
    std::vector<double> y = x;
    double level = x0;  // steady-state input level entering the current section
    for (const Biquad& q : sos.sections) {
        double z1, z2, g;
        section_zi(q, z1, z2, g);
        z1 *= level;
        z2 *= level;
        for (double& v : y) {
            const double in = v;
            const double out = q.b0 * in + z1;
            z1 = q.b1 * in - q.a1 * out + z2;
            z2 = q.b2 * in - q.a2 * out;
            v = out;
        }
        level *= g;
    }
    return y;
}

}  // namespace

std::vector<double> sosfilt(const Sos& sos, const std::vector<double>& x) {
    if (x.empty()) return {};
    return sosfilt_zi(sos, x, x.front());
}

std::vector<double> sosfiltfilt(const Sos& sos, const std::vector<double>& x) {
    if (x.empty()) return {};
    const int64_t n = static_cast<int64_t>(x.size());
    const int64_t pad = std::min<int64_t>(n - 1, 300);

    // odd reflection: 2*x[0] - x[pad..1], x, 2*x[n-1] - x[n-2..]
    std::vector<double> ext;
    ext.reserve(static_cast<size_t>(n + 2 * pad));
    for (int64_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[static_cast<size_t>(i)]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (int64_t i = n - 2; i >= n - 1 - pad && i >= 0; --i)
        ext.push_back(2.0 * x[static_cast<size_t>(n - 1)] - x[static_cast<size_t>(i)]);

    std::vector<double> fwd = sosfilt_zi(sos, ext, ext.front());
    std::reverse(fwd.begin(), fwd.end());
    std::vector<double> bwd = sosfilt_zi(sos, fwd, fwd.front());
    std::reverse(bwd.begin(), bwd.end());

    return std::vector<double>(bwd.begin() + pad, bwd.begin() + pad + n);
}

}  // namespace cupid
