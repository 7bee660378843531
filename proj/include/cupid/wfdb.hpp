#pragma once

// Reader/writer for the PhysioNet WFDB family: .hea headers, .dat signals in
// formats 16 and 212, and MIT-style .atr annotations. Covers what the AFib
// databases need, not the full spec (no multi-segment records, no EDF).

#include <cstdint>
#include <string>
#include <vector>

#include "cupid/common.hpp"

namespace cupid::wfdb {

struct SignalSpec {
    std::string file_name;
    int format = 16;       // supported: 16, 212
    double gain = 200.0;   // adu per mV
    int baseline = 0;      // adu at 0 mV
    std::string units = "mV";
};

struct WfdbHeader {
    std::string record_name;
    int n_signals = 0;
    double sampling_frequency = 250.0;  // WFDB default when the field is absent
    int64_t n_samples = 0;              // 0 = unknown, inferred from the data size
    std::vector<SignalSpec> signals;
};

struct RawRecord {
    WfdbHeader header;
    std::vector<std::vector<double>> signals_mv;  // per channel, gain/baseline applied
};

WfdbHeader parse_header(const std::string& text);

// All signals must share one .dat file and format (true for the target
// databases). value_mV = (adu - baseline) / gain.
std::vector<double> read_signal(const WfdbHeader& header, const std::vector<uint8_t>& dat,
                                int channel);
RawRecord read_record(const WfdbHeader& header, const std::vector<uint8_t>& dat);

struct WrittenRecord {
    std::string header_text;
    std::vector<uint8_t> dat;
};

// Quantizes to adu with the given gain/baseline; throws config_error when a
// value falls outside the 12/16-bit range of the target format.
WrittenRecord write_record(const std::string& record_name,
                           const std::vector<std::vector<double>>& signals_mv, double fs,
                           int format, double gain = 200.0, int baseline = 0);
WrittenRecord write_record(const RawRecord& rec, int format);

// 12-bit pair packing used by format 212; exposed for the bit-level tests.
void pack_212_pair(int v0, int v1, uint8_t out[3]);
void unpack_212_pair(const uint8_t in[3], int& v0, int& v1);

// ----------------------------- annotations -----------------------------

struct Annotation {
    int64_t sample = 0;
    int code = 0;
    std::string aux;  // trailing NULs stripped
};

constexpr int kRhythmCode = 28;  // '+' rhythm change

std::vector<Annotation> read_annotations(const std::vector<uint8_t>& atr);

struct RhythmInterval {
    int64_t onset = 0;   // sample index where the rhythm begins
    std::string label;   // e.g. "(N", "(AFIB", "(B"; unknown strings pass through
};

std::vector<RhythmInterval> rhythm_intervals(const std::vector<Annotation>& anns);

}  // namespace cupid::wfdb
