#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cupid/common.hpp"

namespace cupid {

// 10 s at 100 Hz, the model-ready unit of data.
constexpr int64_t kWindowSamples = 1000;
constexpr double kTargetHz = 100.0;

struct EcgWindow {
    std::vector<real> samples;  // exactly kWindowSamples entries
    std::string patient_id;
    std::string record_id;
    int label = -1;                                       // -1 = unlabeled
    double sdnn_ms = std::numeric_limits<double>::quiet_NaN();  // NaN = undefined

    bool has_label() const { return label >= 0; }
    bool has_sdnn() const { return !std::isnan(sdnn_ms); }
};

// Windowed dataset container, little-endian:
//   magic "CPW1", u32 window count, then per window
//   1000 x f32 samples, i16 label (-1 = none), f32 sdnn (NaN = none),
//   u16 patient-id length + bytes.
void write_cpw1(const std::string& path, const std::vector<EcgWindow>& windows);
std::vector<EcgWindow> read_cpw1(const std::string& path);

// Class-name sidecar for labeled datasets (id per line).
void write_label_names(const std::string& path, const std::vector<std::string>& names);
std::vector<std::string> read_label_names(const std::string& path);

}  // namespace cupid
