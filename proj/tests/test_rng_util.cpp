#include <cmath>

#include "cupid/rng.hpp"
#include "cupid/util.hpp"
#include "doctest.h"

using namespace cupid;

TEST_CASE("rng streams are deterministic and fork-independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng f1 = base.fork(1);
    Rng f2 = base.fork(2);
    CHECK(f1.next_u64() != f2.next_u64());

    // save/restore resumes the exact stream
    Rng c(9);
    c.next_u64();
    const auto state = c.save_state();
    const uint64_t next = c.next_u64();
    Rng d(0);
    d.restore_state(state);
    CHECK(d.next_u64() == next);
}

TEST_CASE("rng uniform and gaussian look sane") {
    Rng rng(1);
    double sum = 0, sum2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
    }
    CHECK(std::fabs(sum / n - 0.5) < 0.01);

    sum = 0;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sum2 += g * g;
    }
    CHECK(std::fabs(sum / n) < 0.02);
    CHECK(std::fabs(sum2 / n - 1.0) < 0.03);

    for (int i = 0; i < 10000; ++i) CHECK(std::fabs(rng.truncated_gaussian(0.02)) <= 0.04 + 1e-12);
}

TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex("", 0) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    const std::string abc = "abc";
    CHECK(sha256_hex(abc.data(), abc.size()) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("byte writer/reader round trip") {
    ByteWriter w;
    w.u16(0xBEEF);
    w.u32(0xDEADBEEF);
    w.u64(0x0123456789ABCDEFULL);
    w.i16(-2);
    w.f32(1.5f);
    w.f64(-0.125);
    w.str_u16("hello");
    ByteReader r(w.data());
    CHECK(r.u16() == 0xBEEF);
    CHECK(r.u32() == 0xDEADBEEF);
    CHECK(r.u64() == 0x0123456789ABCDEFULL);
    CHECK(r.i16() == -2);
    CHECK(r.f32() == 1.5f);
    CHECK(r.f64() == -0.125);
    CHECK(r.str_u16() == "hello");
    CHECK(r.at_end());
}

TEST_CASE("format_real round trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-17, 12345.6789, -0.0}) {
        CHECK(std::stod(format_real(v)) == v);
    }
}
