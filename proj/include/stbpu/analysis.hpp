#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

/// Geometry of one attacked structure. T and O are entropy bits of the
/// stored tag and offset (0 for untagged tables); omega is the stored target
/// width.
struct StructGeom {
    std::uint64_t I = 512;
    unsigned W = 8;
    unsigned T = 8;
    unsigned O = 5;
    unsigned omega = 32;
};

StructGeom full_btb_geom();   // 512 sets, 8 ways, 8-bit tag, 5-bit offset, 32-bit target
StructGeom scaled_btb_geom(); // 64 sets, 4 ways, 6-bit tag, 4-bit offset, 8-bit target

class AnalysisError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

double collision_prob(const StructGeom& g);

struct ReuseCost {
    double M = 0;
    double E = 0;
};

/// Birthday-style cost of growing a reuse set until a collision is likely.
/// Untagged structures (PHT) never evict.
ReuseCost reuse_cost(const StructGeom& g, bool untagged = false);

/// Partial form: misp count after growing the reuse set to n members.
double reuse_misp_partial(const StructGeom& g, double n);

double injection_cost(unsigned omega_bits);

double eviction_set_guess_prob(const StructGeom& g);

inline constexpr double kGemRounds = 3.0;

double gem_eviction_cost(double P, const StructGeom& g, double rounds = kGemRounds);

// Published cost constants. The PHT figure has no stated parameterisation,
// so it is carried as-is rather than recomputed.
inline constexpr double kPhtReuseMisp = 8.38e5;
inline constexpr double kThresholdMispCost = 8.3e5;
inline constexpr double kThresholdEvictCost = 5.3e5;

struct CostReport {
    std::string attack;
    double expected_misp = 0;
    double expected_evict = 0;
    double collision_prob = 0;
    bool bounds_misp = false;  // counts toward the misprediction threshold
    bool bounds_evict = false; // counts toward the eviction threshold
    std::string notes;
};

/// Reports for the attacks modelled against one BTB geometry.
/// attack: "all", "reuse", "pht-reuse", "gem", "injection", "guess".
std::vector<CostReport> cost_reports(const StructGeom& g, std::string_view attack = "all", double P = 0.5,
                                     bool include_pht_constant = false);

struct ThresholdConfig {
    std::uint64_t misp = 0;
    std::uint64_t evict = 0;
    double r = 0.05;
    std::uint64_t tage = 0; // optional third counter; 0 = disabled
};

/// ceil(r * C), tolerant of binary rounding just above an integer.
std::uint64_t threshold_ceil(double x);

ThresholdConfig derive_thresholds(double r, const std::vector<CostReport>& reports);

/// Thresholds from the published C constants.
ThresholdConfig published_thresholds(double r);

/// Thresholds scaled to the desk-size rig from its own cost reports.
ThresholdConfig scaled_thresholds(double r);

} // namespace stbpu
