#include <doctest.h>

#include <cmath>
#include <set>

#include "fewtab/common.hpp"

using namespace fewtab;

TEST_SUITE("common") {

TEST_CASE("rng is deterministic per seed") {
    Rng a(42), b(42), c(43);
    bool all_equal = true;
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const uint64_t va = a.next_u64();
        all_equal = all_equal && va == b.next_u64();
        any_diff = any_diff || va != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform stays in [0,1)") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("uniform_int covers its range") {
    Rng rng(7);
    std::set<int> seen;
    for (int i = 0; i < 1000; ++i) {
        const int v = rng.uniform_int(5);
        CHECK(v >= 0);
        CHECK(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("normal has sane moments") {
    Rng rng(3);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("shuffle permutes") {
    Rng rng(9);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
    rng.shuffle(v);
    std::set<int> s(v.begin(), v.end());
    CHECK(s.size() == 50);
    CHECK(*s.begin() == 0);
    CHECK(*s.rbegin() == 49);
}

TEST_CASE("fork does not advance the parent and separates streams") {
    Rng a(5);
    Rng f0 = a.fork(0);
    Rng f1 = a.fork(1);
    Rng b(5);
    CHECK(a.next_u64() == b.next_u64());  // fork left the parent untouched
    CHECK(f0.next_u64() != f1.next_u64());
    CHECK(a.fork(2).next_u64() != b.next_u64());
}

TEST_CASE("fnv1a64 matches known vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("to_hex pads to 16 digits") {
    CHECK(to_hex(0) == "0000000000000000");
    CHECK(to_hex(0xdeadbeefull) == "00000000deadbeef");
    CHECK(to_hex(UINT64_MAX) == "ffffffffffffffff");
}

TEST_CASE("round10 pins the tenth decimal") {
    CHECK(round10(2.00000000002) == 2.0);
    CHECK(round10(1e-11) == 0.0);
    CHECK(round10(0.5) == 0.5);
    CHECK(round10(1.05e-10) == doctest::Approx(1e-10).epsilon(1e-6));
}

}  // TEST_SUITE
