#include "doctest.h"

#include "stbpu/analysis.hpp"

#include <cmath>

using namespace stbpu;

namespace {

// Oracle for the reuse misprediction count: sum over reuse-set growth steps,
// step k costing k cross-executions weighted by the birthday denominator.
long double reuse_oracle(long double I, long double to, long double n)
{
    const long double pi = 3.14159265358979323846L;
    const long double denom = std::sqrt(pi * I / 2) * std::sqrt(pi * to / 2);
    // sum_{k=1..n} k = n(n+1)/2, accumulated in blocks to stay exact-ish
    long double sum = 0;
    const long double block = 1 << 20;
    for (long double start = 1; start <= n; start += block) {
        const long double end = std::min(n, start + block - 1);
        sum += (start + end) * (end - start + 1) / 2;
    }
    return sum / denom;
}

} // namespace

TEST_CASE("collision probability")
{
    CHECK(collision_prob({512, 8, 8, 5}) == doctest::Approx(std::ldexp(1.0, -22)));
    CHECK(collision_prob({1, 1, 0, 0}) == 1.0);
    CHECK(collision_prob(scaled_btb_geom()) == doctest::Approx(1.0 / (64 * 1024)));
    CHECK(collision_prob(scaled_btb_geom()) == doctest::Approx(1.526e-5).epsilon(1e-3));
}

TEST_CASE("reuse cost on the full BTB")
{
    const auto c = reuse_cost(full_btb_geom());
    const long double oracle = reuse_oracle(512, 8192, std::ldexp(1.0L, 21));
    CHECK(c.M == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-9));
    CHECK(std::abs(c.M - 6.9e8) / 6.9e8 < 0.01);
    CHECK(c.E == std::ldexp(1.0, 21) - 4096);
}

TEST_CASE("reuse cost degenerate and untagged cases")
{
    const auto c = reuse_cost({1, 1, 0, 0});
    CHECK(c.M == 0);
    CHECK(c.E == 0);
    CHECK(reuse_cost({1 << 14, 1, 0, 0}, true).E == 0);
}

TEST_CASE("reuse cost is monotone in I, T, O")
{
    double prevM = 0, prevE = 0;
    for (unsigned t = 0; t < 10; ++t) {
        const auto c = reuse_cost({64, 4, t, 4});
        CHECK(c.M >= prevM);
        CHECK(c.E >= prevE);
        prevM = c.M;
        prevE = c.E;
    }
    prevM = prevE = 0;
    for (std::uint64_t I = 1; I <= 4096; I *= 2) {
        const auto c = reuse_cost({I, 4, 6, 4});
        CHECK(c.M >= prevM);
        CHECK(c.E >= prevE);
        prevM = c.M;
        prevE = c.E;
    }
}

TEST_CASE("injection cost")
{
    CHECK(injection_cost(32) == std::ldexp(1.0, 31));
    CHECK(injection_cost(1) == 1);
    CHECK(injection_cost(8) == 128);
    CHECK_THROWS_AS(injection_cost(0), AnalysisError);
}

TEST_CASE("eviction set guess probability")
{
    CHECK(eviction_set_guess_prob({512, 8, 8, 5}) == doctest::Approx(std::pow(512.0, -7)));
    CHECK(eviction_set_guess_prob({512, 8, 8, 5}) == doctest::Approx(9.7e-20).epsilon(0.01));
    CHECK(eviction_set_guess_prob({512, 1, 8, 5}) == 1.0);
    CHECK(eviction_set_guess_prob({2, 2, 0, 0}) == 0.5);
}

TEST_CASE("GEM eviction cost")
{
    const double e = gem_eviction_cost(0.5, full_btb_geom());
    const double oracle = 256.0 * (2048.0 + 9.0 * (1.0 - std::exp(-1.0)) * 3.0);
    CHECK(e == doctest::Approx(oracle));
    CHECK(std::abs(e - 5.3e5) / 5.3e5 < 0.01);
    CHECK(gem_eviction_cost(1.0, scaled_btb_geom()) == doctest::Approx(64 * (256 + 5 * 0.63212055882 * 3)));
    CHECK(gem_eviction_cost(1e-9, full_btb_geom()) < 1e-3);
    CHECK_THROWS_AS(gem_eviction_cost(0, full_btb_geom()), AnalysisError);
    CHECK_THROWS_AS(gem_eviction_cost(1.5, full_btb_geom()), AnalysisError);
    double prev = 0;
    for (double p = 0.1; p <= 1.0; p += 0.1) {
        const double v = gem_eviction_cost(p, full_btb_geom());
        CHECK(v >= prev);
        prev = v;
    }
}

TEST_CASE("thresholds from the published constants")
{
    auto t = published_thresholds(0.1);
    CHECK(t.misp == 83000);
    CHECK(t.evict == 53000);
    t = published_thresholds(0.05);
    CHECK(t.misp == 41500);
    CHECK(t.evict == 26500);
    t = published_thresholds(1.0);
    CHECK(t.misp == 830000);
    CHECK(t.evict == 530000);
}

TEST_CASE("threshold derivation")
{
    CHECK_THROWS_AS(derive_thresholds(0.05, {}), AnalysisError);
    CHECK_THROWS_AS(published_thresholds(0), AnalysisError);
    CHECK_THROWS_AS(published_thresholds(1.5), AnalysisError);
    CHECK(threshold_ceil(41500.000000000004) == 41500);
    CHECK(threshold_ceil(41500.2) == 41501);
    CHECK(threshold_ceil(0.01) == 1);

    // Minimum over reports is taken separately for each counter.
    std::vector<CostReport> reps = {{"a", 1000, 500, 0, true, true, ""}, {"b", 100, 0, 0, true, false, ""},
                                    {"c", 0, 50, 0, false, true, ""}};
    auto t = derive_thresholds(0.5, reps);
    CHECK(t.misp == 50);
    CHECK(t.evict == 25);
}

TEST_CASE("scaled rig thresholds")
{
    const auto reps = cost_reports(scaled_btb_geom());
    REQUIRE(reps.size() == 4);
    const auto t = scaled_thresholds(0.05);
    // cheapest misprediction attack: 8-bit target guess (128); cheapest
    // eviction attack: GEM at P = 0.5
    CHECK(t.misp == static_cast<std::uint64_t>(std::ceil(0.05 * 128)));
    CHECK(t.evict == static_cast<std::uint64_t>(std::ceil(0.05 * gem_eviction_cost(0.5, scaled_btb_geom()))));
    CHECK(t.misp == 7);
    CHECK(t.evict == 220);
}

TEST_CASE("cost report filter")
{
    CHECK(cost_reports(full_btb_geom(), "gem").size() == 1);
    CHECK(cost_reports(full_btb_geom(), "all", 0.5, true).size() == 5);
    CHECK_THROWS_AS(cost_reports(full_btb_geom(), "bogus"), AnalysisError);
}
