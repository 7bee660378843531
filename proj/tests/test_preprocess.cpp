#include <cmath>

#include "cupid/iir.hpp"
#include "cupid/preprocess.hpp"
#include "cupid/rng.hpp"
#include "doctest.h"

using namespace cupid;

namespace {

constexpr double kPi = 3.14159265358979323846;

std::vector<double> sine(double freq, double fs, double seconds, double amp = 1.0) {
    const int64_t n = static_cast<int64_t>(seconds * fs);
    std::vector<double> x(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) x[static_cast<size_t>(i)] = amp * std::sin(2.0 * kPi * freq * i / fs);
    return x;
}

// least-squares amplitude of a known-frequency sine over an interior slice
double fitted_amplitude(const std::vector<double>& x, double freq, double fs, int64_t skip) {
    double ss = 0, sc = 0, css = 0, ccc = 0, ssc = 0;
    for (int64_t i = skip; i < static_cast<int64_t>(x.size()) - skip; ++i) {
        const double s = std::sin(2.0 * kPi * freq * i / fs);
        const double c = std::cos(2.0 * kPi * freq * i / fs);
        ss += s * x[static_cast<size_t>(i)];
        sc += c * x[static_cast<size_t>(i)];
        css += s * s;
        ccc += c * c;
        ssc += s * c;
    }
    // solve 2x2 normal equations for a*sin + b*cos
    const double det = css * ccc - ssc * ssc;
    const double a = (ss * ccc - sc * ssc) / det;
    const double b = (sc * css - ss * ssc) / det;
    return std::sqrt(a * a + b * b);
}

}  // namespace

TEST_CASE("resample length arithmetic and DC preservation") {
    std::vector<double> x(2000, 1.0);
    const auto y = resample(x, 200.0);
    CHECK(y.size() == 1000);
    for (double v : y) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));

    CHECK(resample(std::vector<double>(650, 0.0), 130.0).size() == 500);
    CHECK(resample(std::vector<double>(999, 0.0), 100.0).size() == 999);  // identity
    CHECK(resample(std::vector<double>(90, 0.0), 64.0).size() == 140);    // upsample floor(90*100/64)
    CHECK_THROWS_AS(resample(x, 0.0), config_error);
    CHECK_THROWS_AS(resample(x, -5.0), config_error);
}

TEST_CASE("resample preserves an in-band sine") {
    const auto x = sine(5.0, 250.0, 8.0);
    const auto y = resample(x, 250.0);
    REQUIRE(y.size() == 800);  // floor(2000 * 100 / 250)
    double max_err = 0;
    for (size_t i = 50; i + 50 < y.size(); ++i) {
        const double expect = std::sin(2.0 * kPi * 5.0 * double(i) / 100.0);
        max_err = std::max(max_err, std::fabs(y[i] - expect));
    }
    CHECK(max_err < 0.02);
}

TEST_CASE("butterworth high-pass: DC rejection, passband flatness, half-power cutoff") {
    const Sos hp = butter_highpass(5, 0.5, 100.0);

    // analytic response checks straight off the transfer function
    CHECK(hp.magnitude(0.5, 100.0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    CHECK(hp.magnitude(10.0, 100.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(hp.magnitude(50.0, 100.0) == doctest::Approx(1.0).epsilon(1e-9));

    // constant input: forward-backward output collapses to ~0 everywhere
    std::vector<double> dc(3000, 2.5);
    const auto y = highpass(dc);
    double worst = 0;
    for (size_t i = 100; i + 100 < y.size(); ++i) worst = std::max(worst, std::fabs(y[i]));
    CHECK(worst < 1e-3);

    // 10 Hz sine passes within 1 percent after the double pass
    const auto s10 = sine(10.0, 100.0, 30.0);
    const auto y10 = highpass(s10);
    CHECK(fitted_amplitude(y10, 10.0, 100.0, 300) == doctest::Approx(1.0).epsilon(0.01));

    // 0.5 Hz sine: |H|^2 at the cutoff is exactly 1/2
    const auto s05 = sine(0.5, 100.0, 120.0);
    const auto y05 = highpass(s05);
    CHECK(fitted_amplitude(y05, 0.5, 100.0, 1500) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("high-pass is near idempotent in the passband") {
    const auto x = sine(10.0, 100.0, 30.0);
    const auto once = highpass(x);
    const auto twice = highpass(once);
    const double a1 = fitted_amplitude(once, 10.0, 100.0, 300);
    const double a2 = fitted_amplitude(twice, 10.0, 100.0, 300);
    CHECK(std::fabs(a2 - a1) / a1 < 0.02);
}

TEST_CASE("normalize_recording") {
    Rng rng(3);
    std::vector<double> x(5000);
    for (auto& v : x) v = 5.0 + 2.0 * rng.gaussian();
    auto copy = x;
    const auto stats = normalize_recording(copy);
    CHECK(stats.mean == doctest::Approx(5.0).epsilon(0.05));
    CHECK(stats.std == doctest::Approx(2.0).epsilon(0.05));
    double mean = 0;
    for (double v : copy) mean += v;
    mean /= double(copy.size());
    double var = 0;
    for (double v : copy) var += (v - mean) * (v - mean);
    var /= double(copy.size());
    CHECK(std::fabs(mean) < 1e-12);
    CHECK(std::fabs(var - 1.0) < 1e-12);

    // idempotence on already-normalized data
    auto again = copy;
    normalize_recording(again);
    for (size_t i = 0; i < 100; ++i) CHECK(again[i] == doctest::Approx(copy[i]).epsilon(1e-9));

    // two segments of different scale share one global normalization
    std::vector<double> two;
    for (int i = 0; i < 2000; ++i) two.push_back(0.1 * rng.gaussian());
    for (int i = 0; i < 2000; ++i) two.push_back(10.0 * rng.gaussian());
    normalize_recording(two);
    mean = 0;
    for (double v : two) mean += v;
    mean /= double(two.size());
    var = 0;
    for (double v : two) var += (v - mean) * (v - mean);
    var /= double(two.size());
    CHECK(std::fabs(var - 1.0) < 1e-12);

    std::vector<double> flat(100, 3.0);
    CHECK_THROWS_AS(normalize_recording(flat), config_error);
}

TEST_CASE("windowing: count, labels, quality gate") {
    Rng rng(11);
    std::vector<double> x(3500);
    for (auto& v : x) v = rng.gaussian();  // comfortably passes the gate

    auto wins = window_recording(x, "p1", "r1");
    CHECK(wins.size() == 3);  // floor(3500 / 1000)
    for (const auto& w : wins) {
        CHECK(w.samples.size() == size_t(kWindowSamples));
        CHECK(w.label == -1);
        for (real v : w.samples) CHECK(std::isfinite(double(v)));
    }

    // majority label: window [0,1000) is 60% inside the AFib span
    std::vector<LabeledSpan> spans = {{0, 0}, {400, 1}};
    wins = window_recording(x, "p1", "r1", spans);
    CHECK(wins[0].label == 1);
    CHECK(wins[1].label == 1);

    // exact tie breaks toward the higher (arrhythmic) class id
    spans = {{0, 0}, {500, 1}, {1000, 0}};
    wins = window_recording(x, "p1", "r1", spans);
    CHECK(wins[0].label == 1);

    // flat stretch fails the amplitude gate
    std::vector<double> gated = x;
    for (size_t i = 1000; i < 2000; ++i) gated[i] = 0.01;
    wins = window_recording(gated, "p1", "r1");
    CHECK(wins.size() == 2);

    // non-finite samples are dropped too
    gated = x;
    gated[2100] = std::numeric_limits<double>::quiet_NaN();
    wins = window_recording(gated, "p1", "r1");
    CHECK(wins.size() == 2);
}

TEST_CASE("compute_sdnn on synthetic beat trains") {
    // impulse-like beats spaced exactly 800 ms apart -> SDNN 0
    auto make_train = [](const std::vector<int64_t>& beat_samples, int64_t n) {
        std::vector<double> x(static_cast<size_t>(n), 0.0);
        for (int64_t b : beat_samples) {
            for (int64_t k = -2; k <= 2; ++k) {
                if (b + k >= 0 && b + k < n)
                    x[static_cast<size_t>(b + k)] = (k == 0) ? 1.0 : 0.4;
            }
        }
        return x;
    };

    std::vector<int64_t> periodic;
    for (int64_t t = 40; t < 1000; t += 80) periodic.push_back(t);
    const auto sdnn0 = compute_sdnn(make_train(periodic, 1000));
    REQUIRE(sdnn0.has_value());
    CHECK(*sdnn0 <= 10.0);

    // RR sequence {700, 800, 900} ms -> sample std 100 ms
    const std::vector<int64_t> beats = {100, 170, 250, 340};
    const auto sdnn = compute_sdnn(make_train(beats, 1000));
    REQUIRE(sdnn.has_value());
    CHECK(*sdnn == doctest::Approx(100.0).epsilon(0.15));

    // flat line: undefined
    CHECK_FALSE(compute_sdnn(std::vector<double>(1000, 0.0)).has_value());
    // two peaks only: undefined
    CHECK_FALSE(compute_sdnn(make_train({100, 200}, 1000)).has_value());
}

TEST_CASE("full chain emits clean windows from a wfdb-style recording") {
    // synthetic 200 Hz recording with rhythm annotations in source samples
    Rng rng(21);
    std::vector<double> x(200 * 40);
    for (size_t i = 0; i < x.size(); ++i)
        x[i] = std::sin(2.0 * kPi * 1.3 * double(i) / 200.0) + 0.05 * rng.gaussian() + 3.0;

    RecordingInput rec;
    rec.samples_mv = x;
    rec.fs = 200.0;
    rec.patient_id = "p7";
    rec.record_id = "r7";
    rec.rhythms = {{0, "(N"}, {200 * 20, "(AFIB"}};

    LabelMap labels;
    const auto wins = preprocess_recording(rec, labels);
    REQUIRE(wins.size() == 4);  // 40 s -> 4 windows of 10 s
    for (const auto& w : wins) {
        CHECK(w.samples.size() == size_t(kWindowSamples));
        for (real v : w.samples) CHECK(std::isfinite(double(v)));
    }
    CHECK(wins[0].label == labels.lookup("(N"));
    CHECK(wins[2].label == labels.lookup("(AFIB"));
    CHECK(wins[3].label == labels.lookup("(AFIB"));
}
