#pragma once

#include "stbpu/remap.hpp"
#include "stbpu/remap_gen.hpp"
#include "stbpu/st_manager.hpp"
#include "stbpu/trace.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

enum class Model {
    baseline,
    stbpu,
    flush_ibpb,
    flush_ibrs,
    partition_stibp,
    conservative,
    tage_lite,
    st_tage_lite,
    perceptron,
    st_perceptron,
};

Model parse_model(std::string_view name);
std::string_view model_name(Model m);
const std::vector<Model>& all_models();
bool is_st_model(Model m);

enum class DirectionScheme { gshare, tage, perceptron };
DirectionScheme direction_scheme(Model m);

struct PredictorConfig {
    Model model = Model::baseline;
    unsigned btb_sets = 512;
    unsigned btb_ways = 8;
    unsigned btb_tag_bits = 8;
    unsigned btb_offset_bits = 5;
    unsigned btb_target_bits = 32;
    unsigned pht_entries = 1u << 14;
    unsigned pht_counter_bits = 2;
    unsigned ghr_bits = 18;
    unsigned bhb_bits = 58;
    unsigned rsb_entries = 16;

    unsigned tage_bank_entries = 1024;
    unsigned tage_tag_bits = 8;
    std::array<unsigned, 4> tage_history = {4, 8, 16, 32};
    unsigned perceptron_entries = 1024;
    unsigned perceptron_history = 24;

    // stbpu only: use the baseline index/tag functions and phi = 0.
    bool identity_remap = false;

    bool operator==(const PredictorConfig&) const = default;
};

/// Defaults for a model: ST models use a 16-bit GHR, the conservative model
/// trades entries for full tags at a constant payload bit budget.
PredictorConfig default_config(Model m);
/// Desk-scale BTB: 64 sets x 4 ways, 6-bit tag, 4-bit offset, 8-bit target.
PredictorConfig scaled_config(Model m);
/// stbpu wired with the baseline functions and a zero target key.
PredictorConfig identity_config();

/// Conservative BTB geometry for the given baseline geometry.
PredictorConfig conservative_geometry(PredictorConfig c);

void validate(const PredictorConfig& c);

/// Applies `key = value` settings (config file or CLI overrides).
void apply_setting(PredictorConfig& c, std::string_view key, std::string_view value);
PredictorConfig load_config_text(std::string_view text, PredictorConfig base);
PredictorConfig load_config_file(const std::string& path, PredictorConfig base);
std::string config_text(const PredictorConfig& c);

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The six keyed functions an ST model needs.
struct RemapSet {
    std::array<std::shared_ptr<const LayeredFunction>, 6> fn; // indexed by Role

    const LayeredFunction& get(Role r) const;
    bool complete() const;

    static RemapSet load_dir(const std::string& dir);
};

std::string default_netlist_dir();
/// Loads the shipped netlists once; throws if any is missing.
std::shared_ptr<const RemapSet> shipped_remaps();

enum class EventKind { direction_misp, target_misp, btb_eviction, rsb_underflow, st_rerandomized };
inline constexpr std::size_t kEventKinds = 5;
std::string_view event_name(EventKind k);

struct BpuEvent {
    EventKind kind;
    std::uint32_t context_id = 0;
    Privilege privilege = Privilege::user;
    std::uint32_t thread_id = 0;
    bool tagged_component = false; // direction misp from a TAGE bank
};

enum class TargetSource : std::uint8_t { none, btb_direct, btb_indirect, rsb };
enum class DirectionSource : std::uint8_t { none, pht, tage_base, tage_bank, perceptron };

struct Prediction {
    std::optional<bool> direction; // conditionals only
    std::optional<std::uint64_t> target;
    TargetSource target_source = TargetSource::none;
    DirectionSource direction_source = DirectionSource::none;
    int tage_provider = -1;
    int tage_alt = -1;
    bool alt_direction = false;
    int perceptron_sum = 0;
    bool rsb_underflow = false;

    bool operator==(const Prediction&) const = default;
};

struct BtbKey {
    unsigned set = 0;
    std::uint64_t tag = 0;
    std::uint32_t offset = 0;

    bool operator==(const BtbKey&) const = default;
};

struct BtbEntry {
    bool valid = false;
    std::uint64_t tag = 0;
    std::uint32_t offset = 0;
    std::uint64_t stored_target = 0;
    unsigned lru_rank = 0; // 0 = most recently used
};

struct BtbStats {
    std::uint64_t lookups = 0;
    std::uint64_t hits = 0;
    std::uint64_t insert_hits = 0;   // insert found a matching entry
    std::uint64_t insert_misses = 0; // insert allocated a way
    std::uint64_t evictions = 0;
};

/// Whether a prediction satisfies every sub-prediction the record needs.
bool prediction_correct(const BranchRecord& r, const Prediction& p);

/// One physical core's branch prediction unit. Tables are shared between
/// hardware threads; histories and the return stack are per thread.
class Bpu {
public:
    explicit Bpu(PredictorConfig cfg, std::shared_ptr<const RemapSet> remaps = nullptr);

    const PredictorConfig& config() const { return cfg_; }

    Prediction predict(const BranchRecord& r, const SecretToken& tok) const;
    void update(const BranchRecord& r, const Prediction& p, const SecretToken& tok, std::vector<BpuEvent>& events);

    void flush();

    // Index functions (exposed for tests and attack ground truth).
    BtbKey btb_key(std::uint64_t pc, bool mode_two, std::uint64_t bhb, std::uint32_t thread,
                   const SecretToken& tok) const;
    std::uint32_t pht_index(std::uint64_t pc, std::uint64_t ghr, std::uint32_t thread, const SecretToken& tok) const;
    std::uint32_t base_index(std::uint64_t pc, std::uint32_t thread, const SecretToken& tok) const;

    std::uint64_t encrypt_target(std::uint64_t target, const SecretToken& tok) const;
    std::uint64_t decrypt_target(std::uint64_t pc, std::uint64_t stored, const SecretToken& tok) const;

    /// Writes an entry directly (harness use: grants a collision by
    /// construction). Replaces a matching entry or the LRU way; no events.
    void plant(const BtbKey& k, std::uint64_t stored_target);

    std::uint64_t bhb(std::uint32_t thread) const;
    std::uint64_t history(std::uint32_t thread) const;
    unsigned rsb_depth(std::uint32_t thread) const;
    std::size_t btb_occupancy() const;
    const BtbStats& btb_stats() const { return btb_stats_; }
    const std::vector<BtbEntry>& btb() const { return btb_; }
    unsigned pht_counter(std::uint32_t idx) const { return pht_[idx]; }

private:
    struct ThreadState {
        std::uint64_t hist = 0; // direction history, bit 0 = most recent
        std::uint64_t bhb = 0;
        std::vector<std::uint64_t> rsb;
        unsigned rsb_top = 0; // next push slot
        unsigned rsb_depth = 0;
    };
    struct TageEntry {
        std::uint8_t ctr = 3;
        std::uint16_t tag = 0;
        std::uint8_t u = 0;
    };

    ThreadState& thread(std::uint32_t t);
    const ThreadState* thread_ptr(std::uint32_t t) const;

    bool st_keyed() const;
    static constexpr std::uint64_t kRsbMask = 0xffffffffu;
    std::uint64_t encrypt_return(std::uint64_t target, const SecretToken& tok) const;
    std::uint64_t decrypt_return(std::uint64_t pc, std::uint64_t stored, const SecretToken& tok) const;
    std::optional<std::uint64_t> btb_lookup(const BtbKey& k, std::uint64_t pc, const SecretToken& tok) const;
    void btb_insert(const BtbKey& k, std::uint64_t target, const SecretToken& tok, const BranchRecord& r,
                    std::vector<BpuEvent>& events);
    void touch(unsigned set, unsigned way);

    bool counter_taken(std::uint8_t c) const { return c >= (1u << (cfg_.pht_counter_bits - 1)); }
    void train_counter(std::uint8_t& c, bool taken, unsigned bits) const;

    std::uint32_t tage_index(unsigned bank, std::uint64_t pc, std::uint64_t hist, const SecretToken& tok) const;
    std::uint16_t tage_tag(unsigned bank, std::uint64_t pc, std::uint64_t hist, const SecretToken& tok) const;
    std::uint32_t perceptron_index(std::uint64_t pc, const SecretToken& tok) const;

    void predict_direction(const BranchRecord& r, const SecretToken& tok, Prediction& p) const;
    void update_direction(const BranchRecord& r, const Prediction& p, const SecretToken& tok);

    PredictorConfig cfg_;
    std::shared_ptr<const RemapSet> remaps_;
    unsigned index_bits_ = 0;
    unsigned pht_bits_ = 0;

    std::vector<BtbEntry> btb_;
    std::vector<std::uint8_t> pht_;
    std::array<std::vector<TageEntry>, 4> tage_;
    std::vector<std::int16_t> perceptron_;
    std::map<std::uint32_t, ThreadState> threads_;
    BtbStats btb_stats_;
};

} // namespace stbpu
