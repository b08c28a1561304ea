#pragma once

#include "stbpu/analysis.hpp"
#include "stbpu/predictor.hpp"
#include "stbpu/st_manager.hpp"
#include "stbpu/trace.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace stbpu {

struct SimOptions {
    ThresholdConfig thresholds;          // used by ST models only
    std::uint64_t seed = 1;              // token PRNG
    std::map<std::uint32_t, std::uint32_t> share; // context -> context whose token it aliases
};

/// Thresholds for r against the published C constants, or the desk-rig ones
/// when the BTB geometry is the scaled preset.
ThresholdConfig thresholds_for(const PredictorConfig& cfg, double r);

struct ContextStats {
    std::uint64_t branches = 0;
    std::uint64_t oae_correct = 0;
    std::uint64_t mispredictions = 0;
    std::uint64_t evictions = 0;
    std::uint64_t rerandomizations = 0;

    bool operator==(const ContextStats&) const = default;
};

struct SimReport {
    std::string model;
    std::string trace;
    std::uint64_t branches = 0;
    std::uint64_t conditionals = 0;
    std::uint64_t direction_correct = 0;
    std::uint64_t target_required = 0; // taken branches of every type
    std::uint64_t target_correct = 0;
    std::uint64_t oae_correct = 0;
    std::uint64_t flushes = 0;
    std::uint64_t rerandomizations = 0;
    std::array<std::uint64_t, kEventKinds> events{};
    std::map<ContextKey, ContextStats> contexts;

    double direction_accuracy() const;
    double target_accuracy() const;
    double oae() const;

    bool operator==(const SimReport&) const = default;
};

/// Per-record outcome, exposed so callers can drive a simulation step by step.
struct StepResult {
    Prediction prediction;
    bool correct = false;
    std::vector<BpuEvent> events; // predictor events followed by st_rerandomized notices
};

/// One physical core running a record stream: predictor, comparison-model
/// hooks and, for ST models, the token manager.
class Simulator {
public:
    Simulator(PredictorConfig cfg, SimOptions opts, std::shared_ptr<const RemapSet> remaps = nullptr);

    StepResult step(const BranchRecord& r);
    void run(const TraceStream& t);

    const SimReport& report() const { return report_; }
    const Bpu& bpu() const { return bpu_; }
    Bpu& mutable_bpu() { return bpu_; }
    /// Registers the context if needed; zero token for models without tokens.
    SecretToken context_token(std::uint32_t ctx, Privilege p = Privilege::user);
    /// Null for models without tokens.
    const StManager* st() const { return st_ ? &*st_ : nullptr; }

private:
    ContextKey ensure_context(const BranchRecord& r);
    void hooks(const BranchRecord& r);

    PredictorConfig cfg_;
    SimOptions opts_;
    Bpu bpu_;
    std::optional<StManager> st_;
    std::map<std::uint32_t, BranchRecord> last_; // previous record per thread
    SimReport report_;
    std::vector<BpuEvent> scratch_;
};

SimReport simulate(const TraceStream& trace, const PredictorConfig& cfg, const SimOptions& opts,
                   std::shared_ptr<const RemapSet> remaps = nullptr);

/// One report per config on the same trace; configs run on worker threads.
std::vector<SimReport> compare_models(const TraceStream& trace, const std::vector<PredictorConfig>& configs,
                                      const SimOptions& opts, std::shared_ptr<const RemapSet> remaps = nullptr);

struct SweepRow {
    double r = 0;
    ThresholdConfig thresholds;
    double oae = 0;
    std::uint64_t rerandomizations = 0;
    std::uint64_t branches = 0;
};

std::vector<SweepRow> sweep_r(const TraceStream& trace, const PredictorConfig& cfg, const std::vector<double>& r_values,
                              std::uint64_t seed, std::shared_ptr<const RemapSet> remaps = nullptr);

// Report output.
std::string reports_csv(const std::vector<SimReport>& reports, bool with_delta = false);
std::string reports_text(const std::vector<SimReport>& reports, bool with_delta = false);
std::string reports_jsonl(const std::vector<SimReport>& reports);
std::string sweep_csv(const std::vector<SweepRow>& rows);

} // namespace stbpu
