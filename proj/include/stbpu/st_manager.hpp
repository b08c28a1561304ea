#pragma once

#include "stbpu/analysis.hpp"
#include "stbpu/bits.hpp"
#include "stbpu/trace.hpp"

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

namespace stbpu {

struct SecretToken {
    std::uint32_t psi = 0; // keys the remapping functions
    std::uint32_t phi = 0; // XOR key for stored targets

    bool operator==(const SecretToken&) const = default;
};

/// A software entity owning a token: one process at one privilege level.
struct ContextKey {
    std::uint32_t context_id = 0;
    Privilege privilege = Privilege::user;

    auto operator<=>(const ContextKey&) const = default;
};

std::string to_string(const ContextKey& k);

enum class CounterKind { misp, evict, tage };

struct ContextEntry {
    ContextKey key;
    std::size_t group = 0; // index into the shared token table
    std::uint64_t misp_counter = 0;
    std::uint64_t evict_counter = 0;
    std::uint64_t tage_counter = 0;
    std::uint64_t rerandomization_count = 0;
};

struct RerandomizedNotice {
    ContextKey key;
    SecretToken old_token;
    SecretToken new_token;
    std::uint64_t count; // re-randomizations of this context so far
};

class StError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-context token table with threshold counters. A threshold of 0
/// disables that counter.
class StManager {
public:
    StManager(ThresholdConfig thresholds, std::uint64_t seed);

    const SecretToken& assign_token(const ContextKey& key, std::optional<ContextKey> share_with = std::nullopt);
    bool registered(const ContextKey& key) const { return entries_.count(key) != 0; }

    std::optional<RerandomizedNotice> on_event(const ContextKey& key, CounterKind kind);

    /// Saves nothing explicitly: counters live in the table, so a switch only
    /// changes which entry the hardware thread's active register points at.
    void context_switch(const ContextKey& from, const ContextKey& to, std::uint32_t thread = 0);
    void activate(std::uint32_t thread, const ContextKey& key);
    std::optional<ContextKey> active(std::uint32_t thread) const;
    const SecretToken& active_token(std::uint32_t thread) const;

    const SecretToken& token(const ContextKey& key) const;
    const ContextEntry& entry(const ContextKey& key) const;
    const std::map<ContextKey, ContextEntry>& entries() const { return entries_; }
    const ThresholdConfig& thresholds() const { return thresholds_; }
    std::uint64_t total_rerandomizations() const { return total_rerand_; }

private:
    SecretToken draw();
    ContextEntry& find(const ContextKey& key);
    void reset_counters(ContextEntry& e) const;

    ThresholdConfig thresholds_;
    Rng rng_;
    std::map<ContextKey, ContextEntry> entries_;
    std::vector<SecretToken> groups_;
    std::map<std::uint32_t, ContextKey> active_;
    std::uint64_t total_rerand_ = 0;
};

} // namespace stbpu
