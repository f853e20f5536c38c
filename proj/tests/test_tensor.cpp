#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "authnet/error.hpp"
#include "authnet/hash.hpp"
#include "authnet/rng.hpp"
#include "authnet/tensor.hpp"

using namespace authnet;

TEST_CASE("shape construction and element order") {
    Tensor t({2, 3});
    CHECK(t.ndim() == 2);
    CHECK(t.size() == 6);
    CHECK(t.extent(0) == 2);
    CHECK(t.extent(1) == 3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

    Tensor v({2, 2}, {1, 2, 3, 4});
    CHECK(v[0] == 1);
    CHECK(v[3] == 4);
    CHECK(v.shape_str() == "[2,2]");
}

TEST_CASE("construction rejects mismatched value count") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("extent out of range throws") {
    Tensor t({2, 3});
    CHECK_THROWS_AS(t.extent(2), ShapeError);
}

TEST_CASE("full fills every element") {
    Tensor t = Tensor::full({3, 2}, 1.5);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 1.5);
    t.fill(-2.0);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == -2.0);
}

TEST_CASE("reshaped keeps data and checks element count") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.extent(0) == 3);
    for (std::size_t i = 0; i < 6; ++i) CHECK(r[i] == t[i]);
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("element-wise operators require matching shapes") {
    Tensor a({2}, {1, 2});
    Tensor b({2}, {10, 20});
    Tensor s = a + b;
    CHECK(s[0] == 11);
    CHECK(s[1] == 22);
    Tensor d = b - a;
    CHECK(d[0] == 9);
    CHECK(d[1] == 18);
    Tensor m = 3.0 * a;
    CHECK(m[0] == 3);
    CHECK(m[1] == 6);
    Tensor c({3});
    CHECK_THROWS_AS(a + c, ShapeError);
    CHECK_THROWS_AS(a - c, ShapeError);
}

TEST_CASE("max_abs and max_abs_diff") {
    Tensor a({3}, {1, -4, 2});
    CHECK(max_abs(a) == 4.0);
    Tensor b({3}, {1, -4, 5});
    CHECK(max_abs_diff(a, b) == 3.0);
    CHECK(max_abs(Tensor({0})) == 0.0);
}

TEST_CASE("check_finite names the tensor") {
    Tensor t({2}, {1, std::nan("")});
    CHECK_THROWS_WITH_AS(t.check_finite("logits"), doctest::Contains("logits"),
                         NumericError);
    Tensor inf({1}, {INFINITY});
    CHECK_THROWS_AS(inf.check_finite("x"), NumericError);
    Tensor ok({2}, {1, 2});
    CHECK_NOTHROW(ok.check_finite("x"));
}

TEST_CASE("shape_numel and shape_to_string") {
    CHECK(shape_numel({2, 3, 4}) == 24);
    // empty shape means "no tensor", not a scalar: default-constructed
    // weights rely on size()==0 to mean unallocated
    CHECK(shape_numel({}) == 0);
    CHECK(shape_to_string({1, 28, 28}) == "[1,28,28]");
}

// ---- RNG ----

TEST_CASE("uniform matches the documented mt19937_64 conversion") {
    // The generator is the standard mt19937_64; the conversion is pinned to
    // (x >> 11) * 2^-53 so streams are portable across libstdc++ versions.
    Rng r(42);
    std::mt19937_64 ref(42);
    for (int i = 0; i < 100; ++i) {
        double expect = static_cast<double>(ref() >> 11) * 0x1.0p-53;
        CHECK(r.uniform() == expect);
    }
}

TEST_CASE("uniform stays in [0,1) and hits both halves") {
    Rng r(7);
    int low = 0;
    for (int i = 0; i < 2000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        if (u < 0.5) ++low;
    }
    CHECK(low > 800);
    CHECK(low < 1200);
}

TEST_CASE("ranged uniform") {
    Rng r(3);
    for (int i = 0; i < 500; ++i) {
        double u = r.uniform(-2.0, 5.0);
        CHECK(u >= -2.0);
        CHECK(u < 5.0);
    }
}

TEST_CASE("bounded covers [0,n) roughly uniformly") {
    Rng r(11);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 10000; ++i) {
        std::uint64_t v = r.bounded(10);
        REQUIRE(v < 10);
        ++counts[v];
    }
    for (int c : counts) {
        CHECK(c > 800);
        CHECK(c < 1200);
    }
    CHECK(r.bounded(1) == 0);
}

TEST_CASE("gaussian has near-standard moments") {
    Rng r(19);
    const int n = 20000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double g = r.gaussian();
        sum += g;
        sq += g * g;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("shuffle is a permutation and seed-deterministic") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    std::vector<int> w = v;
    Rng(5).shuffle(v);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 50);
    CHECK(v != w); // 50! permutations; identity is effectively impossible

    std::vector<int> v2(50);
    for (int i = 0; i < 50; ++i) v2[i] = i;
    Rng(5).shuffle(v2);
    CHECK(v == v2);

    std::vector<int> v3(50);
    for (int i = 0; i < 50; ++i) v3[i] = i;
    Rng(6).shuffle(v3);
    CHECK(v != v3);
}

TEST_CASE("identical seeds give identical streams") {
    Rng a(123), b(123);
    for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
}

// ---- hashing ----

TEST_CASE("fnv1a reference vectors") {
    // Published FNV-1a 64-bit test vectors.
    Fnv1a empty;
    CHECK(empty.digest() == 0xcbf29ce484222325ull);

    Fnv1a a;
    a.update("a", 1);
    CHECK(a.digest() == 0xaf63dc4c8601ec8cull);

    Fnv1a foobar;
    foobar.update("foobar", 6);
    CHECK(foobar.digest() == 0x85944171f73967e8ull);
}

TEST_CASE("fnv1a streaming equals one-shot") {
    Fnv1a one;
    one.update("hello world", 11);
    Fnv1a two;
    two.update("hello ", 6);
    two.update("world", 5);
    CHECK(one.digest() == two.digest());
}

TEST_CASE("hex64 formats fixed width") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
    CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
}
