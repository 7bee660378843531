#include <cmath>

#include "cupid/rng.hpp"
#include "cupid/util.hpp"
#include "cupid/wfdb.hpp"
#include "doctest.h"

using namespace cupid;
using namespace cupid::wfdb;

namespace {

// test-side annotation stream builder, straight from the published format
struct AtrBuilder {
    ByteWriter w;
    int64_t last_time = 0;

    void annotation(int64_t sample, int code) {
        int64_t delta = sample - last_time;
        if (delta > 1023) {
            w.u16(static_cast<uint16_t>(59 << 10));  // SKIP, interval high word first
            w.u16(static_cast<uint16_t>((delta >> 16) & 0xFFFF));
            w.u16(static_cast<uint16_t>(delta & 0xFFFF));
            delta = 0;
        }
        w.u16(static_cast<uint16_t>((code << 10) | (delta & 0x3FF)));
        last_time = sample;
    }

    void aux(const std::string& s) {
        w.u16(static_cast<uint16_t>((63 << 10) | s.size()));
        w.bytes(s.data(), s.size());
        if (s.size() % 2) w.u8(0);
    }

    std::vector<uint8_t> finish() {
        w.u16(0);
        return w.take();
    }
};

}  // namespace

TEST_CASE("header parsing: record line and format-16 signal line") {
    const auto h = parse_header("r 1 100 1000\nr.dat 16 200(0)/mV\n");
    CHECK(h.record_name == "r");
    CHECK(h.n_signals == 1);
    CHECK(h.sampling_frequency == doctest::Approx(100.0));
    CHECK(h.n_samples == 1000);
    CHECK(h.signals[0].format == 16);
    CHECK(h.signals[0].gain == doctest::Approx(200.0));
    CHECK(h.signals[0].baseline == 0);
    CHECK(h.signals[0].units == "mV");
}

TEST_CASE("header parsing: comments, defaults and error paths") {
    const auto h = parse_header("# comment line\nrec 2 360\nrec.dat 212 200\nrec.dat 212 100(12)\n");
    CHECK(h.n_samples == 0);  // absent -> inferred later
    CHECK(h.signals[1].baseline == 12);

    CHECK_THROWS_AS(parse_header(""), parse_error);
    CHECK_THROWS_AS(parse_header("r 1 100 1000\nr.dat 8\n"), parse_error);  // unsupported format
    CHECK_THROWS_AS(parse_header("r 2 100 10\nr.dat 16\n"), parse_error);   // missing signal line
    try {
        parse_header("r 1 100 1000\nbad.dat 8 200\n");
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        CHECK(std::string(e.what()).find("unsupported format 8") != std::string::npos);
    }
}

TEST_CASE("format 16: gain definition and interleaving") {
    // adu 200, baseline 0, gain 200 -> 1.0 mV
    ByteWriter w;
    w.i16(200);
    w.i16(-100);
    w.i16(0);
    w.i16(50);
    const auto h = parse_header("r 2 100 2\nr.dat 16 200(0)\nr.dat 16 200(0)\n");
    const auto ch0 = read_signal(h, w.data(), 0);
    const auto ch1 = read_signal(h, w.data(), 1);
    CHECK(ch0[0] == doctest::Approx(1.0));
    CHECK(ch1[0] == doctest::Approx(-0.5));
    CHECK(ch0[1] == doctest::Approx(0.0));
    CHECK(ch1[1] == doctest::Approx(0.25));

    // truncation: byte count inconsistent with declared samples
    std::vector<uint8_t> short_dat(w.data().begin(), w.data().end() - 2);
    CHECK_THROWS_AS(read_signal(h, short_dat, 0), parse_error);

    // extra bytes are inconsistent too: never read past the declared count
    std::vector<uint8_t> long_dat = w.data();
    long_dat.push_back(0);
    long_dat.push_back(0);
    CHECK_THROWS_AS(read_signal(h, long_dat, 0), parse_error);
}

TEST_CASE("format 212: packed pair decodes (-1, 1) and matches the packing rule exhaustively") {
    uint8_t bytes[3];
    pack_212_pair(-1, 1, bytes);
    CHECK(bytes[0] == 0xFF);  // low 8 bits of 0xFFF
    CHECK(bytes[1] == 0x0F);  // v1 high nibble 0x0, v0 high nibble 0xF
    CHECK(bytes[2] == 0x01);
    int v0, v1;
    unpack_212_pair(bytes, v0, v1);
    CHECK(v0 == -1);
    CHECK(v1 == 1);

    // exhaustive 12-bit sweep in both slots, bit-level oracle
    for (int a = -2048; a <= 2047; ++a) {
        const int b = ((a + 2048) * 7919) % 4096 - 2048;  // deterministic partner
        uint8_t packed[3];
        pack_212_pair(a, b, packed);
        // oracle: reassemble the 12-bit words directly
        const unsigned u0 = (static_cast<unsigned>(packed[1] & 0x0F) << 8) | packed[0];
        const unsigned u1 = (static_cast<unsigned>(packed[1] & 0xF0) << 4) | packed[2];
        const int o0 = u0 >= 2048 ? int(u0) - 4096 : int(u0);
        const int o1 = u1 >= 2048 ? int(u1) - 4096 : int(u1);
        CHECK(o0 == a);
        CHECK(o1 == b);
        int d0, d1;
        unpack_212_pair(packed, d0, d1);
        CHECK(d0 == a);
        CHECK(d1 == b);
    }
}

TEST_CASE("write -> read round trip") {
    Rng rng(5);
    std::vector<std::vector<double>> chans(2);
    for (auto& c : chans)
        for (int i = 0; i < 501; ++i) c.push_back(rng.gaussian() * 2.0);

    for (int format : {16, 212}) {
        CAPTURE(format);
        const auto rec = write_record("t", chans, 128.0, format, 200.0, 0);
        const auto h = parse_header(rec.header_text);
        CHECK(h.sampling_frequency == doctest::Approx(128.0));
        CHECK(h.n_samples == 501);
        for (int c = 0; c < 2; ++c) {
            const auto back = read_signal(h, rec.dat, c);
            REQUIRE(back.size() == chans[size_t(c)].size());
            for (size_t i = 0; i < back.size(); ++i) {
                // quantization error bounded by half an adu
                CHECK(std::fabs(back[i] - chans[size_t(c)][i]) <= 0.5 / 200.0 + 1e-12);
            }
        }
    }

    // integer adu values survive format 16 exactly
    std::vector<std::vector<double>> ints = {{1.0, -0.5, 0.25, 2.0}};
    const auto rec16 = write_record("q", ints, 100.0, 16, 4.0, 0);
    const auto h16 = parse_header(rec16.header_text);
    const auto back = read_signal(h16, rec16.dat, 0);
    for (size_t i = 0; i < ints[0].size(); ++i) CHECK(back[i] == ints[0][i]);

    // 12-bit overflow must be a range error
    std::vector<std::vector<double>> big = {{100.0}};
    CHECK_THROWS_AS(write_record("x", big, 100.0, 212, 200.0, 0), config_error);

    // whole-record overload reuses the header's gain and rate
    RawRecord raw;
    raw.header = parse_header("rr 1 77 4\nrr.dat 16 100(5)\n");
    raw.signals_mv = {{0.5, -1.0, 0.25, 2.0}};
    const auto round = write_record(raw, 16);
    const auto h2 = parse_header(round.header_text);
    CHECK(h2.sampling_frequency == doctest::Approx(77.0));
    const auto sig = read_signal(h2, round.dat, 0);
    for (size_t i = 0; i < sig.size(); ++i)
        CHECK(std::fabs(sig[i] - raw.signals_mv[0][i]) <= 0.5 / 100.0 + 1e-12);
}

TEST_CASE("annotation reader follows the MIT byte-pair format") {
    AtrBuilder atr;
    atr.annotation(10, kRhythmCode);
    atr.aux("(N");
    atr.annotation(500, 1);           // a beat
    atr.annotation(80000, kRhythmCode);  // forces a SKIP interval
    atr.aux("(AFIB");
    atr.annotation(80500, 1);
    atr.annotation(90000, kRhythmCode);
    atr.aux("(B");

    const auto anns = read_annotations(atr.finish());
    REQUIRE(anns.size() == 5);
    CHECK(anns[0].sample == 10);
    CHECK(anns[0].aux == "(N");
    CHECK(anns[1].sample == 500);
    CHECK(anns[2].sample == 80000);
    CHECK(anns[2].aux == "(AFIB");
    CHECK(anns[4].sample == 90000);

    const auto rhythms = rhythm_intervals(anns);
    REQUIRE(rhythms.size() == 3);
    CHECK(rhythms[0].label == "(N");
    CHECK(rhythms[1].onset == 80000);
    CHECK(rhythms[1].label == "(AFIB");
    CHECK(rhythms[2].label == "(B");
}
