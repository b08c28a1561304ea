#pragma once

#include "stbpu/analysis.hpp"
#include "stbpu/predictor.hpp"
#include "stbpu/sim.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

enum class AttackFamily {
    reuse_home,
    reuse_away,
    evict_home,
    evict_away,
    target_inject,
    same_address_space,
    dos_evict,
    dos_reuse,
};
enum class AttackStructure { btb, pht, rsb };

class AttackError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct AttackScenario {
    AttackFamily family = AttackFamily::reuse_home;
    AttackStructure structure = AttackStructure::btb;
    PredictorConfig config = scaled_config(Model::baseline);
    ThresholdConfig thresholds; // ST models only; {0,0} disables re-randomization
    std::size_t trials = 100;
    std::size_t search_budget = 2048; // candidate collisions an attacker may try first
    std::uint64_t seed = 1;
};

/// Scenario names: "<btb|pht|rsb>-<rb|eb>-<he|ae>", "<btb|rsb>-inject",
/// "btb-same-as", "<btb|pht>-dos-reuse", "btb-dos-evict".
AttackScenario parse_attack_name(std::string_view name);
std::string attack_name(AttackFamily f, AttackStructure s);
const std::vector<std::string>& attack_names();

struct AttackOutcome {
    bool success = false;
    // home effects: distinguishing accuracy; away effects: redirection rate;
    // DoS: victim misprediction-rate inflation.
    double rate = 0;
    std::uint64_t misp_triggered = 0;
    std::uint64_t evict_triggered = 0;
    std::uint64_t rerandomizations_observed = 0;
    std::uint64_t wall_trials = 0;
};

/// Attacker (context 1) and victim (context 2) sharing one core. Attacker
/// logic only receives Observations of its own context; the victim side and
/// the ground-truth accessors exist for success predicates and verification.
class AttackRig {
public:
    static constexpr std::uint32_t kAttacker = 1;
    static constexpr std::uint32_t kVictim = 2;

    AttackRig(const PredictorConfig& cfg, const ThresholdConfig& th, std::uint64_t seed,
              bool share_tokens = false);

    struct Observation {
        bool misp = false;
        std::uint64_t evictions = 0;
        bool underflow = false;
    };

    Observation attacker(const BranchRecord& r);
    StepResult victim(const BranchRecord& r);

    const AttackOutcome& tally() const { return tally_; }
    AttackOutcome& tally() { return tally_; }

    // Ground truth, never consulted by attacker decisions.
    BtbKey true_key(std::uint32_t ctx, std::uint64_t pc) const;
    SecretToken true_token(std::uint32_t ctx) const;
    void plant_for_victim(std::uint64_t victim_pc, std::uint64_t stored_target);
    const Simulator& sim() const { return sim_; }

private:
    PredictorConfig cfg_;
    Simulator sim_;
    AttackOutcome tally_;
};

BranchRecord jump(std::uint32_t ctx, std::uint64_t pc, std::uint64_t target);

// Public baseline mapping used by attackers to build collisions.
std::uint64_t baseline_alias(std::uint64_t pc);
std::vector<std::uint64_t> baseline_congruent(const PredictorConfig& cfg, std::uint64_t pc, unsigned count);

struct CollisionStats {
    std::uint64_t trials = 0;
    std::uint64_t hits = 0;
    double frequency = 0;
    double expected = 0;
    double standard_error = 0; // of the expected frequency at this trial count
};

/// Random attacker pcs against a fixed victim branch: how often do both land
/// on the same (set, tag, offset)?
CollisionStats collision_trials(const PredictorConfig& cfg, std::uint64_t trials, std::uint64_t seed);

struct ReuseSetResult {
    std::vector<std::uint64_t> members;
    bool victim_collision = false;
    AttackOutcome outcome;
};

/// Grows a set of mutually non-colliding branches; with a victim pc, stops at
/// the first candidate that collides with it.
ReuseSetResult build_reuse_set(const PredictorConfig& cfg, const ThresholdConfig& th, std::size_t target_size,
                               std::optional<std::uint64_t> victim_pc, std::uint64_t candidate_budget,
                               std::uint64_t seed);

struct GemResult {
    std::vector<std::vector<std::uint64_t>> sets;
    std::size_t targets = 0;
    std::size_t verified = 0;
    AttackOutcome outcome;
};

/// Group-elimination search for eviction sets covering ceil(P*I) targets.
GemResult gem_find_eviction_sets(const PredictorConfig& cfg, const ThresholdConfig& th, double P, std::uint64_t seed);

/// Sweeps attacker target values against a collision granted by the harness.
/// Success when the victim's reconstructed target equals the gadget.
AttackOutcome target_injection(const PredictorConfig& cfg, const ThresholdConfig& th, std::uint64_t gadget,
                               std::uint64_t budget, std::uint64_t seed, bool share_tokens = false);

AttackOutcome run_scenario(const AttackScenario& s);

std::string outcomes_csv_header();
std::string outcome_csv_row(const std::string& scenario, const std::string& model, std::uint64_t seed,
                            const AttackOutcome& o);

} // namespace stbpu
