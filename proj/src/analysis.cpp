#include "stbpu/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace stbpu {

StructGeom full_btb_geom() { return {512, 8, 8, 5, 32}; }
StructGeom scaled_btb_geom() { return {64, 4, 6, 4, 8}; }

namespace {

void check(const StructGeom& g)
{
    if (g.I < 1 || g.W < 1)
        throw AnalysisError("geometry needs I >= 1 and W >= 1");
    if (g.T + g.O > 60)
        throw AnalysisError("tag + offset entropy too large");
}

double tag_space(const StructGeom& g) { return std::ldexp(1.0, static_cast<int>(g.T + g.O)); }

} // namespace

double collision_prob(const StructGeom& g)
{
    check(g);
    return 1.0 / (static_cast<double>(g.I) * tag_space(g));
}

double reuse_misp_partial(const StructGeom& g, double n)
{
    check(g);
    const double half_pi = std::numbers::pi / 2;
    return n * (n + 1) / (2 * std::sqrt(half_pi * static_cast<double>(g.I)) * std::sqrt(half_pi * tag_space(g)));
}

ReuseCost reuse_cost(const StructGeom& g, bool untagged)
{
    check(g);
    const double space = static_cast<double>(g.I) * tag_space(g);
    const double n = std::floor(space / 2);
    ReuseCost c;
    c.M = reuse_misp_partial(g, n);
    c.E = untagged ? 0.0 : std::max(0.0, space / 2 - static_cast<double>(g.I) * g.W);
    return c;
}

double injection_cost(unsigned omega_bits)
{
    if (omega_bits < 1 || omega_bits > 63)
        throw AnalysisError("target entropy must be 1..63 bits");
    return std::ldexp(1.0, static_cast<int>(omega_bits)) / 2;
}

double eviction_set_guess_prob(const StructGeom& g)
{
    check(g);
    return std::pow(static_cast<double>(g.I), -static_cast<double>(g.W - 1));
}

double gem_eviction_cost(double P, const StructGeom& g, double rounds)
{
    check(g);
    if (!(P > 0 && P <= 1))
        throw AnalysisError("P must be in (0, 1]");
    const double pi = P * static_cast<double>(g.I);
    return pi * (pi * g.W + (g.W + 1) * (1 - 1 / std::numbers::e) * rounds);
}

std::vector<CostReport> cost_reports(const StructGeom& g, std::string_view attack, double P,
                                     bool include_pht_constant)
{
    static const std::vector<std::string_view> known = {"all", "reuse", "pht-reuse", "gem", "injection", "guess"};
    if (std::find(known.begin(), known.end(), attack) == known.end())
        throw AnalysisError("unknown attack '" + std::string(attack) + "'");
    const auto want = [&](std::string_view a) { return attack == "all" || attack == a; };

    std::vector<CostReport> out;
    if (want("reuse")) {
        const auto c = reuse_cost(g);
        out.push_back({"btb-reuse", c.M, c.E, collision_prob(g), true, true, "reuse set grown to half the index/tag space"});
    }
    if (want("pht-reuse") && include_pht_constant)
        out.push_back({"pht-reuse", kPhtReuseMisp, 0, 0, true, false, "published constant; PHT entries are never evicted"});
    if (want("gem")) {
        const double e = gem_eviction_cost(P, g);
        out.push_back({"btb-evict-gem", 0, e, 0, false, true, "group elimination, P=" + std::to_string(P)});
    }
    if (want("injection"))
        out.push_back({"target-injection", injection_cost(g.omega), 0, 0, true, false,
                       "collision granted; guess " + std::to_string(g.omega) + "-bit target"});
    if (want("guess"))
        out.push_back({"evict-set-guess", 0, 0, eviction_set_guess_prob(g), false, false,
                       "probability of guessing one eviction set"});
    return out;
}

std::uint64_t threshold_ceil(double x)
{
    if (!(x >= 0) || x > 1e18)
        throw AnalysisError("threshold out of range");
    const double adj = x - 1e-9 * std::max(1.0, x);
    return static_cast<std::uint64_t>(std::max(1.0, std::ceil(adj)));
}

ThresholdConfig derive_thresholds(double r, const std::vector<CostReport>& reports)
{
    if (!(r > 0 && r <= 1))
        throw AnalysisError("r must be in (0, 1]");
    if (reports.empty())
        throw AnalysisError("no cost reports to derive thresholds from");
    double cm = std::numeric_limits<double>::infinity(), ce = cm;
    for (const auto& rep : reports) {
        if (rep.bounds_misp && rep.expected_misp > 0)
            cm = std::min(cm, rep.expected_misp);
        if (rep.bounds_evict && rep.expected_evict > 0)
            ce = std::min(ce, rep.expected_evict);
    }
    if (std::isinf(cm) || std::isinf(ce))
        throw AnalysisError("reports must bound both mispredictions and evictions");
    ThresholdConfig t;
    t.r = r;
    t.misp = threshold_ceil(r * cm);
    t.evict = threshold_ceil(r * ce);
    return t;
}

ThresholdConfig published_thresholds(double r)
{
    return derive_thresholds(r, {{"misp", kThresholdMispCost, 0, 0, true, false, ""},
                                 {"evict", 0, kThresholdEvictCost, 0, false, true, ""}});
}

ThresholdConfig scaled_thresholds(double r) { return derive_thresholds(r, cost_reports(scaled_btb_geom())); }

} // namespace stbpu
