#include "cupid/wfdb.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "cupid/util.hpp"

namespace cupid::wfdb {

namespace {

bool supported_format(int f) { return f == 16 || f == 212; }

[[noreturn]] void fail(int line_no, const std::string& what) {
    throw parse_error("wfdb header line " + std::to_string(line_no) + ": " + what);
}

std::vector<std::string> tokens_of(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream is(line);
    std::string t;
    while (is >> t) toks.push_back(t);
    return toks;
}

long parse_int(const std::string& s, int line_no, const char* what) {
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str()) fail(line_no, std::string("expected integer for ") + what + ", got '" + s + "'");
    return v;
}

double parse_num(const std::string& s, int line_no, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) fail(line_no, std::string("expected number for ") + what + ", got '" + s + "'");
    return v;
}

}  // namespace

WfdbHeader parse_header(const std::string& text) {
    WfdbHeader h;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    bool have_record_line = false;
    int adc_zero_pending = 0;

    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto toks = tokens_of(t);

        if (!have_record_line) {
            if (toks.size() < 2) fail(line_no, "record line needs at least 'name n_signals'");
            h.record_name = toks[0];
            if (h.record_name.find('/') != std::string::npos)
                fail(line_no, "multi-segment records are not supported");
            h.n_signals = static_cast<int>(parse_int(toks[1], line_no, "signal count"));
            if (h.n_signals < 1) fail(line_no, "signal count must be >= 1");
            if (toks.size() >= 3) {
                // sampling frequency may carry a /counter suffix
                h.sampling_frequency = parse_num(split(toks[2], '/')[0], line_no, "sampling frequency");
                if (!(h.sampling_frequency > 0)) fail(line_no, "sampling frequency must be > 0");
            }
            if (toks.size() >= 4) {
                const long n = parse_int(toks[3], line_no, "sample count");
                if (n < 0) fail(line_no, "sample count must be >= 0");
                h.n_samples = n;
            }
            have_record_line = true;
            continue;
        }

        if (static_cast<int>(h.signals.size()) == h.n_signals) break;  // trailing info lines

        SignalSpec sig;
        if (toks.size() < 2) fail(line_no, "signal line needs at least 'file format'");
        sig.file_name = toks[0];
        {
            const std::string& f = toks[1];
            char* end = nullptr;
            const long fmt = std::strtol(f.c_str(), &end, 10);
            if (end == f.c_str()) fail(line_no, "malformed format '" + f + "'");
            if (*end != '\0')
                fail(line_no, "format modifiers (skew/offset) are not supported: '" + f + "'");
            if (!supported_format(static_cast<int>(fmt)))
                fail(line_no, "unsupported format " + std::to_string(fmt) + " (supported: 16, 212)");
            sig.format = static_cast<int>(fmt);
        }
        adc_zero_pending = 0;
        bool explicit_baseline = false;
        if (toks.size() >= 3) {
            // gain token: gain[(baseline)][/units]
            std::string g = toks[2];
            const size_t slash = g.find('/');
            if (slash != std::string::npos) {
                sig.units = g.substr(slash + 1);
                g = g.substr(0, slash);
            }
            const size_t paren = g.find('(');
            if (paren != std::string::npos) {
                const size_t close = g.find(')', paren);
                if (close == std::string::npos) fail(line_no, "unclosed baseline parenthesis");
                sig.baseline = static_cast<int>(
                    parse_int(g.substr(paren + 1, close - paren - 1), line_no, "baseline"));
                explicit_baseline = true;
                g = g.substr(0, paren);
            }
            const double gain = parse_num(g, line_no, "gain");
            sig.gain = gain == 0.0 ? 200.0 : gain;  // WFDB: zero means the default
        }
        if (toks.size() >= 5)
            adc_zero_pending = static_cast<int>(parse_int(toks[4], line_no, "adc zero"));
        if (!explicit_baseline) sig.baseline = adc_zero_pending;  // WFDB default chain
        h.signals.push_back(std::move(sig));
    }

    if (!have_record_line) throw parse_error("wfdb header: empty input");
    if (static_cast<int>(h.signals.size()) != h.n_signals)
        throw parse_error("wfdb header: record line declares " + std::to_string(h.n_signals) +
                          " signals but " + std::to_string(h.signals.size()) +
                          " signal lines were found");
    return h;
}

// ----------------------------- format 212 packing -----------------------------
// Two 12-bit two's-complement samples in three bytes:
//   byte0 = v0 low 8 bits
//   byte1 = v1 high nibble << 4 | v0 high nibble
//   byte2 = v1 low 8 bits

void pack_212_pair(int v0, int v1, uint8_t out[3]) {
    const unsigned u0 = static_cast<unsigned>(v0) & 0xFFFu;
    const unsigned u1 = static_cast<unsigned>(v1) & 0xFFFu;
    out[0] = static_cast<uint8_t>(u0 & 0xFF);
    out[1] = static_cast<uint8_t>(((u1 >> 8) << 4) | (u0 >> 8));
    out[2] = static_cast<uint8_t>(u1 & 0xFF);
}

void unpack_212_pair(const uint8_t in[3], int& v0, int& v1) {
    unsigned u0 = (static_cast<unsigned>(in[1] & 0x0F) << 8) | in[0];
    unsigned u1 = (static_cast<unsigned>(in[1] & 0xF0) << 4) | in[2];
    v0 = u0 >= 2048 ? static_cast<int>(u0) - 4096 : static_cast<int>(u0);
    v1 = u1 >= 2048 ? static_cast<int>(u1) - 4096 : static_cast<int>(u1);
}

namespace {

// Flat adu stream, channel-interleaved frames.
std::vector<int> decode_samples(const WfdbHeader& h, const std::vector<uint8_t>& dat,
                                int64_t total) {
    const int fmt = h.signals[0].format;
    std::vector<int> adu(static_cast<size_t>(total));
    if (fmt == 16) {
        const int64_t need = total * 2;
        if (static_cast<int64_t>(dat.size()) != need)
            throw parse_error("wfdb data: " + std::to_string(dat.size()) + " bytes, expected " +
                              std::to_string(need) + " for " + std::to_string(h.n_samples) +
                              " samples x " + std::to_string(h.n_signals) + " signals (format 16)");
        for (int64_t i = 0; i < total; ++i) {
            const uint16_t raw = static_cast<uint16_t>(dat[static_cast<size_t>(2 * i)]) |
                                 (static_cast<uint16_t>(dat[static_cast<size_t>(2 * i + 1)]) << 8);
            adu[static_cast<size_t>(i)] = static_cast<int16_t>(raw);
        }
    } else {  // 212
        const int64_t pairs = total / 2;
        const int64_t need = pairs * 3 + (total % 2 ? 2 : 0);
        if (static_cast<int64_t>(dat.size()) != need)
            throw parse_error("wfdb data: " + std::to_string(dat.size()) + " bytes, expected " +
                              std::to_string(need) + " for " + std::to_string(h.n_samples) +
                              " samples x " + std::to_string(h.n_signals) + " signals (format 212)");
        for (int64_t p = 0; p < pairs; ++p) {
            int v0, v1;
            unpack_212_pair(dat.data() + p * 3, v0, v1);
            adu[static_cast<size_t>(2 * p)] = v0;
            adu[static_cast<size_t>(2 * p + 1)] = v1;
        }
        if (total % 2) {
            // lone final sample: stored as a pair with a zero partner
            const uint8_t tail[3] = {dat[static_cast<size_t>(pairs * 3)],
                                     dat[static_cast<size_t>(pairs * 3 + 1)], 0};
            int v0, v1;
            unpack_212_pair(tail, v0, v1);
            adu[static_cast<size_t>(total - 1)] = v0;
        }
    }
    return adu;
}

int64_t resolve_total(const WfdbHeader& h, const std::vector<uint8_t>& dat) {
    if (h.n_samples > 0) return h.n_samples * h.n_signals;
    const int fmt = h.signals[0].format;
    const int64_t total = fmt == 16 ? static_cast<int64_t>(dat.size()) / 2
                                    : (static_cast<int64_t>(dat.size()) / 3) * 2;
    return total - total % h.n_signals;
}

void check_uniform(const WfdbHeader& h) {
    if (h.signals.empty()) throw parse_error("wfdb header has no signals");
    for (const auto& s : h.signals) {
        if (s.file_name != h.signals[0].file_name)
            throw parse_error("signals spread over multiple .dat files are not supported");
        if (s.format != h.signals[0].format)
            throw parse_error("mixed signal formats in one record are not supported");
    }
}

}  // namespace

std::vector<double> read_signal(const WfdbHeader& h, const std::vector<uint8_t>& dat, int channel) {
    check_uniform(h);
    if (channel < 0 || channel >= h.n_signals)
        throw config_error("channel " + std::to_string(channel) + " out of range (record has " +
                           std::to_string(h.n_signals) + ")");
    int64_t total = resolve_total(h, dat);
    const auto adu = decode_samples(h, dat, total);
    const int64_t n = total / h.n_signals;
    const SignalSpec& sig = h.signals[static_cast<size_t>(channel)];
    std::vector<double> mv(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        mv[static_cast<size_t>(i)] =
            (adu[static_cast<size_t>(i * h.n_signals + channel)] - sig.baseline) / sig.gain;
    return mv;
}

RawRecord read_record(const WfdbHeader& h, const std::vector<uint8_t>& dat) {
    RawRecord rec;
    rec.header = h;
    for (int c = 0; c < h.n_signals; ++c) rec.signals_mv.push_back(read_signal(h, dat, c));
    return rec;
}

WrittenRecord write_record(const std::string& record_name,
                           const std::vector<std::vector<double>>& signals_mv, double fs,
                           int format, double gain, int baseline) {
    if (!supported_format(format))
        throw config_error("write_record: unsupported format " + std::to_string(format));
    if (signals_mv.empty()) throw config_error("write_record: no signals");
    const int64_t n = static_cast<int64_t>(signals_mv[0].size());
    for (const auto& s : signals_mv)
        if (static_cast<int64_t>(s.size()) != n)
            throw config_error("write_record: channels differ in length");
    const int n_sig = static_cast<int>(signals_mv.size());

    const int lo = format == 212 ? -2048 : -32768;
    const int hi = format == 212 ? 2047 : 32767;
    std::vector<int> adu(static_cast<size_t>(n * n_sig));
    for (int64_t i = 0; i < n; ++i) {
        for (int c = 0; c < n_sig; ++c) {
            const long long q = std::llround(signals_mv[static_cast<size_t>(c)][static_cast<size_t>(i)] * gain) + baseline;
            if (q < lo || q > hi)
                throw config_error("write_record: sample " + std::to_string(i) + " channel " +
                                   std::to_string(c) + " quantizes to " + std::to_string(q) +
                                   ", outside format-" + std::to_string(format) + " range");
            adu[static_cast<size_t>(i * n_sig + c)] = static_cast<int>(q);
        }
    }

    WrittenRecord out;
    std::ostringstream hd;
    hd << record_name << " " << n_sig << " " << fs << " " << n << "\n";
    for (int c = 0; c < n_sig; ++c)
        hd << record_name << ".dat " << format << " " << gain << "(" << baseline << ")/mV\n";
    out.header_text = hd.str();

    const int64_t total = n * n_sig;
    if (format == 16) {
        ByteWriter w;
        for (int64_t i = 0; i < total; ++i) w.i16(static_cast<int16_t>(adu[static_cast<size_t>(i)]));
        out.dat = w.take();
    } else {
        out.dat.resize(static_cast<size_t>((total / 2) * 3 + (total % 2 ? 2 : 0)));
        for (int64_t p = 0; p < total / 2; ++p)
            pack_212_pair(adu[static_cast<size_t>(2 * p)], adu[static_cast<size_t>(2 * p + 1)],
                          out.dat.data() + p * 3);
        if (total % 2) {
            uint8_t tail[3];
            pack_212_pair(adu[static_cast<size_t>(total - 1)], 0, tail);
            out.dat[out.dat.size() - 2] = tail[0];
            out.dat[out.dat.size() - 1] = tail[1];
        }
    }
    return out;
}

WrittenRecord write_record(const RawRecord& rec, int format) {
    if (rec.header.signals.empty()) throw config_error("write_record: record has no signal specs");
    const SignalSpec& s0 = rec.header.signals[0];
    return write_record(rec.header.record_name, rec.signals_mv, rec.header.sampling_frequency,
                        format, s0.gain, s0.baseline);
}

// ----------------------------- annotations -----------------------------
// MIT format: a stream of 16-bit LE words. code = word >> 10, the low 10 bits
// are a time delta from the previous annotation. Pseudo-annotation codes:
//   59 SKIP - next two words hold a 32-bit delta, high word first
//   60 NUM, 61 SUB, 62 CHN - field modifiers, no time advance
//   63 AUX  - low bits give the byte count that follows (padded to even);
//             the bytes attach to the most recent annotation
// A zero word terminates the stream.

std::vector<Annotation> read_annotations(const std::vector<uint8_t>& atr) {
    std::vector<Annotation> out;
    ByteReader r(atr);
    int64_t t = 0;
    int64_t skip_accum = 0;
    while (r.remaining() >= 2) {
        const uint16_t word = r.u16();
        if (word == 0) break;
        const int code = word >> 10;
        const int field = word & 0x3FF;
        switch (code) {
            case 59: {  // SKIP
                if (r.remaining() < 4) throw parse_error("atr: truncated SKIP interval");
                const uint16_t hi16 = r.u16();
                const uint16_t lo16 = r.u16();
                skip_accum += static_cast<int32_t>((static_cast<uint32_t>(hi16) << 16) | lo16);
                break;
            }
            case 60:
            case 61:
            case 62:
                break;  // NUM / SUB / CHN values are not needed here
            case 63: {  // AUX
                const size_t count = static_cast<size_t>(field);
                const size_t padded = count + (count % 2);
                if (r.remaining() < padded) throw parse_error("atr: truncated AUX data");
                std::string aux(count, '\0');
                r.bytes(aux.data(), count);
                if (count % 2) r.u8();
                while (!aux.empty() && aux.back() == '\0') aux.pop_back();
                if (!out.empty()) out.back().aux = aux;
                break;
            }
            default: {
                t += skip_accum + field;
                skip_accum = 0;
                out.push_back({t, code, {}});
                break;
            }
        }
    }
    return out;
}

std::vector<RhythmInterval> rhythm_intervals(const std::vector<Annotation>& anns) {
    std::vector<RhythmInterval> out;
    for (const auto& a : anns) {
        if (a.code != kRhythmCode || a.aux.empty()) continue;
        out.push_back({a.sample, a.aux});
    }
    return out;
}

}  // namespace cupid::wfdb
