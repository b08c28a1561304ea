#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

enum class Privilege : std::uint8_t { user, kernel };

enum class BranchType : std::uint8_t {
    conditional,
    direct_jump,
    indirect_jump,
    indirect_call,
    direct_call,
    return_,
};

/// One dynamic branch event.
struct BranchRecord {
    std::uint32_t thread_id = 0;
    std::uint32_t context_id = 0;
    Privilege privilege = Privilege::user;
    BranchType branch_type = BranchType::conditional;
    std::uint64_t pc = 0;
    bool taken = false;
    std::uint64_t target = 0;

    bool operator==(const BranchRecord&) const = default;
};

constexpr std::uint64_t kInstrBytes = 4; // fall-through = pc + 4

inline bool is_call(BranchType t) { return t == BranchType::direct_call || t == BranchType::indirect_call; }
inline bool is_indirect(BranchType t) { return t == BranchType::indirect_jump || t == BranchType::indirect_call; }
inline bool is_direct_unconditional(BranchType t)
{
    return t == BranchType::direct_jump || t == BranchType::direct_call;
}

char type_tag(BranchType t);
std::string_view type_name(BranchType t);

struct TraceStream {
    std::vector<BranchRecord> records;
    std::string source;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    bool operator==(const TraceStream& o) const { return records == o.records; }
};

class TraceParseError : public std::runtime_error {
public:
    TraceParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

TraceStream parse_trace(std::string_view text);
std::string serialize_trace(const TraceStream& stream);

TraceStream load_trace_file(const std::string& path);
void save_trace_file(const TraceStream& stream, const std::string& path);

enum class Scenario { loop, alternating, context_switch_heavy, gadget_victim, smt_pair };

Scenario parse_scenario(std::string_view name);
std::string_view scenario_name(Scenario s);

/// Scenario parameters as a loose key/value map; unknown keys are rejected.
///
///   loop:                 n (taken run length), reps
///   alternating:          total
///   context_switch_heavy: k (contexts), s (switch period), total, sites, kernel_every, kernel_len
///   gadget_victim:        total, chunk
///   smt_pair:             total, schedule ("a:b"), sites
using ScenarioParams = std::map<std::string, std::string>;

TraceStream synth_trace(Scenario scenario, const ScenarioParams& params, std::uint64_t seed);

/// The fixed set of synthetic traces used for suite-level comparisons.
struct NamedTrace {
    std::string name;
    TraceStream trace;
};
std::vector<NamedTrace> synthetic_suite(std::size_t scale = 1);

} // namespace stbpu
