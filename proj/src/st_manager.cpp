#include "stbpu/st_manager.hpp"

namespace stbpu {

std::string to_string(const ContextKey& k)
{
    return std::to_string(k.context_id) + (k.privilege == Privilege::kernel ? "k" : "u");
}

StManager::StManager(ThresholdConfig thresholds, std::uint64_t seed) : thresholds_(thresholds), rng_(seed) {}

SecretToken StManager::draw()
{
    const std::uint64_t v = rng_.next();
    return {static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)};
}

void StManager::reset_counters(ContextEntry& e) const
{
    e.misp_counter = thresholds_.misp;
    e.evict_counter = thresholds_.evict;
    e.tage_counter = thresholds_.tage;
}

ContextEntry& StManager::find(const ContextKey& key)
{
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw StError("unknown context " + to_string(key));
    return it->second;
}

const ContextEntry& StManager::entry(const ContextKey& key) const
{
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw StError("unknown context " + to_string(key));
    return it->second;
}

const SecretToken& StManager::token(const ContextKey& key) const { return groups_[entry(key).group]; }

const SecretToken& StManager::assign_token(const ContextKey& key, std::optional<ContextKey> share_with)
{
    if (registered(key))
        throw StError("context " + to_string(key) + " already registered");
    ContextEntry e;
    e.key = key;
    if (share_with) {
        e.group = entry(*share_with).group;
    } else {
        e.group = groups_.size();
        groups_.push_back(draw());
    }
    reset_counters(e);
    entries_.emplace(key, e);
    return groups_[e.group];
}

std::optional<RerandomizedNotice> StManager::on_event(const ContextKey& key, CounterKind kind)
{
    ContextEntry& e = find(key);
    std::uint64_t* counter = nullptr;
    switch (kind) {
    case CounterKind::misp: counter = thresholds_.misp ? &e.misp_counter : nullptr; break;
    case CounterKind::evict: counter = thresholds_.evict ? &e.evict_counter : nullptr; break;
    case CounterKind::tage:
        // Without a dedicated counter, tagged-table mispredictions count as ordinary ones.
        counter = thresholds_.tage ? &e.tage_counter : (thresholds_.misp ? &e.misp_counter : nullptr);
        break;
    }
    if (!counter || --*counter > 0)
        return std::nullopt;

    // A shared token is one register value: re-keying it re-keys every member.
    const SecretToken old = groups_[e.group];
    groups_[e.group] = draw();
    reset_counters(e);
    ++e.rerandomization_count;
    ++total_rerand_;
    return RerandomizedNotice{key, old, groups_[e.group], e.rerandomization_count};
}

void StManager::context_switch(const ContextKey& from, const ContextKey& to, std::uint32_t thread)
{
    find(from);
    activate(thread, to);
}

void StManager::activate(std::uint32_t thread, const ContextKey& key)
{
    find(key);
    active_[thread] = key;
}

std::optional<ContextKey> StManager::active(std::uint32_t thread) const
{
    auto it = active_.find(thread);
    if (it == active_.end())
        return std::nullopt;
    return it->second;
}

const SecretToken& StManager::active_token(std::uint32_t thread) const
{
    auto a = active(thread);
    if (!a)
        throw StError("no active context on thread " + std::to_string(thread));
    return token(*a);
}

} // namespace stbpu
