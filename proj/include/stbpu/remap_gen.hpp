#pragma once

#include "stbpu/remap.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

struct GenConstraints {
    unsigned max_critical_path = 45;
    unsigned max_breadth = 4096;
    unsigned max_total_transistors = 8192;
    unsigned input_width = 80;
    unsigned output_width = 22;
    unsigned max_layers = 8;
    unsigned max_wire_crossover = 1024;
    std::uint64_t seed = 1;
};

struct PrimitivePool {
    std::vector<std::array<std::uint8_t, 16>> sbox4;
    std::vector<std::array<std::uint8_t, 8>> sbox3;
    bool pbox = true;
    bool csbox = true;
    unsigned max_csbox_fanin = 32;

    bool empty() const { return sbox4.empty() && sbox3.empty() && !pbox && !csbox; }

    // PRESENT and SPONGENT 4-bit boxes plus the generated 3-bit pool.
    static PrimitivePool defaults();
};

inline constexpr unsigned kMaxGenAttempts = 10000;

/// Randomized layer-by-layer search. Throws RemapError ("unsatisfiable ...")
/// when kMaxGenAttempts consecutive attempts fail to produce a candidate.
std::vector<LayeredFunction> generate_candidates(const GenConstraints& c, const PrimitivePool& pool,
                                                 std::size_t count, const std::string& name = "candidate");

struct FieldSpec {
    std::string name;
    unsigned bits;
};

struct QualityReport {
    double uniformity_cv = 0;
    unsigned uniformity_bins = 0; // bins of the field that produced uniformity_cv
    double avalanche_mean = 0;
    double avalanche_cv = 0;
    double per_bit_spread = 0;
    std::size_t sample_count = 0; // avalanche inputs
    std::size_t uniformity_samples = 0;

    struct Field {
        std::string name;
        unsigned lo, bits;
        double cv;
        double ideal_cv;
    };
    std::vector<Field> fields;
};

/// CV of bin counts expected from an ideal random function.
double ideal_uniformity_cv(std::uint64_t bins, std::uint64_t samples);

/// Balls-and-bins CV over all 2^output_width output values.
double eval_uniformity(const LayeredFunction& f, std::size_t samples, std::uint64_t seed);
/// Same, restricted to output bits [lo, lo+bits).
double eval_uniformity_slice(const LayeredFunction& f, unsigned lo, unsigned bits, std::size_t samples,
                             std::uint64_t seed);

/// Fills avalanche_mean, avalanche_cv, per_bit_spread and sample_count.
QualityReport eval_avalanche(const LayeredFunction& f, std::size_t samples, std::uint64_t seed);

/// Avalanche plus per-field uniformity; the field with the worst normalised
/// CV is reported in uniformity_cv / uniformity_bins.
QualityReport evaluate_quality(const LayeredFunction& f, const std::vector<FieldSpec>& fields,
                               std::size_t avalanche_samples, std::size_t uniformity_samples, std::uint64_t seed);

using ScoreWeights = std::array<double, 4>;

/// Weighted sum of normalised metrics; 0 is optimal.
double score_candidate(const QualityReport& q, const ScoreWeights& w = {1, 1, 1, 1});

enum class Role { R1, R2, R3, R4, Rt, Rp };

struct RoleSpec {
    Role role;
    std::string_view name;
    unsigned input_width;
    unsigned output_width;
    std::vector<FieldSpec> fields; // laid out from output bit 0 in this order
};

const RoleSpec& role_spec(Role r);
Role parse_role(std::string_view name);
const std::vector<Role>& all_roles();

GenConstraints default_constraints(Role r, std::uint64_t seed);

struct LedgerRow {
    std::size_t index;
    std::string name;
    HardwareCost cost;
    QualityReport quality;
    double score;
};

struct Selection {
    LayeredFunction chosen;
    std::size_t chosen_index = 0;
    std::vector<LedgerRow> ledger;
};

struct EvalOptions {
    std::size_t avalanche_samples = 20000;
    std::size_t uniformity_samples = 1 << 18;
    std::uint64_t seed = 1;
};

/// Picks the minimum-score candidate. Ties go to the lower critical path,
/// then the lower transistor count, then the lower index.
Selection select_remaps(Role role, const std::vector<LayeredFunction>& candidates, const ScoreWeights& w = {1, 1, 1, 1},
                        const EvalOptions& opts = {});

std::string ledger_csv(const std::vector<LedgerRow>& rows);

} // namespace stbpu
