#include "stbpu/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stbpu {

namespace {

struct NamedAttack {
    std::string_view name;
    AttackFamily family;
    AttackStructure structure;
};

const std::vector<NamedAttack>& attack_table()
{
    using F = AttackFamily;
    using S = AttackStructure;
    // PHT entries are never evicted, so there are no PHT eviction cells.
    static const std::vector<NamedAttack> t = {
        {"btb-rb-he", F::reuse_home, S::btb},        {"btb-rb-ae", F::reuse_away, S::btb},
        {"btb-eb-he", F::evict_home, S::btb},        {"btb-eb-ae", F::evict_away, S::btb},
        {"btb-inject", F::target_inject, S::btb},    {"btb-same-as", F::same_address_space, S::btb},
        {"btb-dos-evict", F::dos_evict, S::btb},     {"btb-dos-reuse", F::dos_reuse, S::btb},
        {"pht-rb-he", F::reuse_home, S::pht},        {"pht-rb-ae", F::reuse_away, S::pht},
        {"pht-dos-reuse", F::dos_reuse, S::pht},     {"rsb-rb-he", F::reuse_home, S::rsb},
        {"rsb-rb-ae", F::reuse_away, S::rsb},        {"rsb-eb-he", F::evict_home, S::rsb},
        {"rsb-eb-ae", F::evict_away, S::rsb},
    };
    return t;
}

std::string_view structure_name(AttackStructure s)
{
    switch (s) {
    case AttackStructure::btb: return "btb";
    case AttackStructure::pht: return "pht";
    case AttackStructure::rsb: return "rsb";
    }
    return "?";
}

std::string_view family_name(AttackFamily f)
{
    switch (f) {
    case AttackFamily::reuse_home: return "reuse_home";
    case AttackFamily::reuse_away: return "reuse_away";
    case AttackFamily::evict_home: return "evict_home";
    case AttackFamily::evict_away: return "evict_away";
    case AttackFamily::target_inject: return "target_inject";
    case AttackFamily::same_address_space: return "same_address_space";
    case AttackFamily::dos_evict: return "dos_evict";
    case AttackFamily::dos_reuse: return "dos_reuse";
    }
    return "?";
}

// Fixed victim code layout, shared with the gadget_victim trace generator.
constexpr std::uint64_t kVictimCond = 0x401040;
constexpr std::uint64_t kVictimJump = 0x401080;
constexpr std::uint64_t kVictimTarget = 0x402000;
constexpr std::uint64_t kVictimCall = 0x4010c0;
constexpr std::uint64_t kVictimFunc = 0x403000;
constexpr std::uint64_t kGadget = 0x4020a4;

constexpr std::uint64_t kAttackerBase = 0x7f0000000000ULL;
constexpr std::uint64_t kAttackerCall = kAttackerBase + 0x1100;
constexpr std::uint64_t kAttackerFunc = kAttackerBase + 0x2000;
constexpr std::uint64_t kAttackerRet = kAttackerBase + 0x2040;
constexpr std::uint64_t kAttackerFlush = kAttackerBase + 0x3000;

BranchRecord make(std::uint32_t ctx, BranchType t, std::uint64_t pc, bool taken, std::uint64_t target)
{
    BranchRecord r;
    r.context_id = ctx;
    r.branch_type = t;
    r.pc = pc & kAddrMask48;
    r.taken = taken;
    r.target = target & kAddrMask48;
    return r;
}

BranchRecord cond(std::uint32_t ctx, std::uint64_t pc, bool taken)
{
    return make(ctx, BranchType::conditional, pc, taken, taken ? pc + 0x20 : pc + kInstrBytes);
}

BranchRecord call(std::uint32_t ctx, std::uint64_t pc, std::uint64_t func)
{
    return make(ctx, BranchType::direct_call, pc, true, func);
}

BranchRecord ret(std::uint32_t ctx, std::uint64_t pc, std::uint64_t to)
{
    return make(ctx, BranchType::return_, pc, true, to);
}

// A target that keeps pc's upper bits, as the BTB reconstructs them.
std::uint64_t near_target(const PredictorConfig& cfg, std::uint64_t pc, std::uint64_t low)
{
    const std::uint64_t m = low_mask(cfg.btb_target_bits);
    return ((pc & ~m) | (low & m)) & kAddrMask48;
}

// Secret bits carried by the victim's conditional in a gadget_victim trace.
std::vector<bool> victim_secrets(std::size_t n, std::uint64_t seed)
{
    const auto t = synth_trace(Scenario::gadget_victim, {{"total", std::to_string(4 * n + 8)}, {"chunk", "1"}}, seed);
    std::vector<bool> out;
    for (const auto& r : t.records)
        if (r.context_id == AttackRig::kVictim && r.branch_type == BranchType::conditional && out.size() < n)
            out.push_back(r.taken);
    return out;
}

} // namespace

AttackScenario parse_attack_name(std::string_view name)
{
    for (const auto& a : attack_table())
        if (a.name == name) {
            AttackScenario s;
            s.family = a.family;
            s.structure = a.structure;
            return s;
        }
    throw AttackError("unknown attack scenario '" + std::string(name) + "'");
}

std::string attack_name(AttackFamily f, AttackStructure s)
{
    for (const auto& a : attack_table())
        if (a.family == f && a.structure == s)
            return std::string(a.name);
    throw AttackError("invalid attack combination: " + std::string(family_name(f)) + " on " +
                      std::string(structure_name(s)));
}

const std::vector<std::string>& attack_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& a : attack_table())
            v.emplace_back(a.name);
        return v;
    }();
    return names;
}

// ---------------------------------------------------------------------------

AttackRig::AttackRig(const PredictorConfig& cfg, const ThresholdConfig& th, std::uint64_t seed, bool share_tokens)
    : cfg_(cfg), sim_(cfg, [&] {
          SimOptions o;
          o.thresholds = th;
          o.seed = mix_seed(seed, 0x5e7);
          if (share_tokens)
              o.share[kAttacker] = kVictim;
          return o;
      }())
{
    sim_.context_token(kVictim);
    sim_.context_token(kAttacker);
}

AttackRig::Observation AttackRig::attacker(const BranchRecord& r)
{
    const auto res = sim_.step(r);
    Observation o;
    for (const auto& e : res.events) {
        if (e.context_id != r.context_id)
            continue;
        switch (e.kind) {
        case EventKind::direction_misp:
        case EventKind::target_misp:
            o.misp = true;
            ++tally_.misp_triggered;
            break;
        case EventKind::btb_eviction:
            ++o.evictions;
            ++tally_.evict_triggered;
            break;
        case EventKind::rsb_underflow: o.underflow = true; break;
        case EventKind::st_rerandomized: ++tally_.rerandomizations_observed; break;
        }
    }
    return o;
}

StepResult AttackRig::victim(const BranchRecord& r) { return sim_.step(r); }

SecretToken AttackRig::true_token(std::uint32_t ctx) const
{
    if (!sim_.st())
        return {};
    return sim_.st()->token({ctx, Privilege::user});
}

BtbKey AttackRig::true_key(std::uint32_t ctx, std::uint64_t pc) const
{
    return sim_.bpu().btb_key(pc, false, 0, 0, true_token(ctx));
}

void AttackRig::plant_for_victim(std::uint64_t victim_pc, std::uint64_t attacker_target)
{
    Bpu& bpu = sim_.mutable_bpu();
    const auto tv = true_token(kVictim);
    const auto stored = bpu.encrypt_target(attacker_target, true_token(kAttacker));
    bpu.plant(bpu.btb_key(victim_pc, true, bpu.bhb(0), 0, tv), stored);
    bpu.plant(bpu.btb_key(victim_pc, false, 0, 0, tv), stored);
}

BranchRecord jump(std::uint32_t ctx, std::uint64_t pc, std::uint64_t target)
{
    return make(ctx, BranchType::direct_jump, pc, true, target);
}

std::uint64_t baseline_alias(std::uint64_t pc) { return (pc ^ (1ULL << 40)) & kAddrMask48; }

std::vector<std::uint64_t> baseline_congruent(const PredictorConfig& cfg, std::uint64_t pc, unsigned count)
{
    const unsigned tag_lo = cfg.btb_offset_bits + log2_exact(cfg.btb_sets);
    std::vector<std::uint64_t> out;
    for (unsigned k = 1; k <= count; ++k)
        out.push_back((pc ^ (std::uint64_t{k} << tag_lo)) & kAddrMask48);
    return out;
}

// ---------------------------------------------------------------------------

CollisionStats collision_trials(const PredictorConfig& cfg, std::uint64_t trials, std::uint64_t seed)
{
    AttackRig rig(cfg, {}, seed);
    Rng rng(mix_seed(seed, 0xc011));
    const BtbKey victim = rig.true_key(AttackRig::kVictim, kVictimJump);
    CollisionStats s;
    s.trials = trials;
    for (std::uint64_t i = 0; i < trials; ++i)
        if (rig.true_key(AttackRig::kAttacker, rng.next() & kAddrMask48) == victim)
            ++s.hits;
    StructGeom g{cfg.btb_sets, cfg.btb_ways, cfg.btb_tag_bits, cfg.btb_offset_bits, cfg.btb_target_bits};
    s.expected = collision_prob(g);
    s.frequency = static_cast<double>(s.hits) / static_cast<double>(trials);
    s.standard_error = std::sqrt(s.expected * (1 - s.expected) / static_cast<double>(trials));
    return s;
}

ReuseSetResult build_reuse_set(const PredictorConfig& cfg, const ThresholdConfig& th, std::size_t target_size,
                               std::optional<std::uint64_t> victim_pc, std::uint64_t candidate_budget,
                               std::uint64_t seed)
{
    AttackRig rig(cfg, th, seed);
    Rng rng(mix_seed(seed, 0x4e05e));
    ReuseSetResult res;
    std::vector<std::uint64_t> targets;
    const auto exec = [&](std::uint64_t pc, std::uint64_t tgt) {
        return rig.attacker(jump(AttackRig::kAttacker, pc, tgt)).misp;
    };
    const BranchRecord victim_rec = victim_pc ? jump(AttackRig::kVictim, *victim_pc, near_target(cfg, *victim_pc, 0x5a))
                                              : BranchRecord{};

    for (std::uint64_t c = 0; c < candidate_budget && res.members.size() < target_size; ++c) {
        ++res.outcome.wall_trials;
        const std::uint64_t b = rng.next() & kAddrMask48;
        const std::uint64_t bt = near_target(cfg, b, rng.next());
        exec(b, bt); // cold
        if (victim_pc) {
            rig.victim(victim_rec);
            if (exec(b, bt)) {
                res.victim_collision = true;
                res.members.push_back(b);
                break;
            }
        }
        bool collided = false;
        for (std::size_t i = 0; i < res.members.size() && !collided; ++i) {
            exec(res.members[i], targets[i]);
            collided = exec(b, bt);
        }
        if (!collided) {
            res.members.push_back(b);
            targets.push_back(bt);
        }
    }
    const auto& t = rig.tally();
    res.outcome.misp_triggered = t.misp_triggered;
    res.outcome.evict_triggered = t.evict_triggered;
    res.outcome.rerandomizations_observed = t.rerandomizations_observed;
    res.outcome.success = victim_pc ? res.victim_collision : res.members.size() >= target_size;
    res.outcome.rate = static_cast<double>(res.members.size());
    return res;
}

GemResult gem_find_eviction_sets(const PredictorConfig& cfg, const ThresholdConfig& th, double P, std::uint64_t seed)
{
    if (!(P > 0 && P <= 1))
        throw AttackError("P must be in (0, 1]");
    AttackRig rig(cfg, th, seed);
    Rng rng(mix_seed(seed, 0x6e3));
    const unsigned W = cfg.btb_ways;
    const std::size_t pool = std::size_t{2} * cfg.btb_sets * W;
    constexpr unsigned kMaxRounds = 256;
    constexpr unsigned kMaxAttempts = 4;

    const auto target_of = [&](std::uint64_t pc) { return near_target(cfg, pc, pc >> 7); };
    const auto exec = [&](std::uint64_t pc) { return rig.attacker(jump(AttackRig::kAttacker, pc, target_of(pc))).misp; };
    // x, then the candidate set, then x again: evicted iff x mispredicts.
    const auto evicts = [&](std::uint64_t x, const std::vector<std::uint64_t>& s) {
        exec(x);
        for (auto pc : s)
            exec(pc);
        return exec(x);
    };

    GemResult res;
    res.targets = static_cast<std::size_t>(std::ceil(P * static_cast<double>(cfg.btb_sets)));
    for (std::size_t t = 0; t < res.targets; ++t) {
        std::uint64_t x = 0;
        std::vector<std::uint64_t> s;
        bool ok = false;
        // A pool holds about 2W lines per set, so some draws leave x short of
        // W congruent partners; the attacker then starts over with a fresh one.
        for (unsigned attempt = 0; attempt < kMaxAttempts && !(ok && s.size() == W); ++attempt) {
            x = rng.next() & kAddrMask48;
            s.assign(pool, 0);
            for (auto& pc : s)
                pc = rng.next() & kAddrMask48;
            ok = evicts(x, s);
            for (unsigned round = 0; ok && s.size() > W && round < kMaxRounds; ++round) {
                ++res.outcome.wall_trials;
                const std::size_t groups = W + 1;
                bool removed = false;
                for (std::size_t g = 0; g < groups && !removed; ++g) {
                    const std::size_t lo = s.size() * g / groups, hi = s.size() * (g + 1) / groups;
                    std::vector<std::uint64_t> rest(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lo));
                    rest.insert(rest.end(), s.begin() + static_cast<std::ptrdiff_t>(hi), s.end());
                    if (lo != hi && evicts(x, rest)) {
                        s = std::move(rest);
                        removed = true;
                    }
                }
                ok = removed;
            }
            // A line aliasing x's full key overwrites it on its own; such a
            // reduction is no eviction set, which one single-line probe shows.
            if (ok && s.size() == W)
                for (auto pc : s)
                    if (evicts(x, {pc})) {
                        ok = false;
                        break;
                    }
        }
        if (!ok || s.size() != W)
            continue;
        res.sets.push_back(s);

        // Verification: ground-truth congruence plus a live eviction check.
        const BtbKey kx = rig.true_key(AttackRig::kAttacker, x);
        bool congruent = true;
        std::vector<BtbKey> keys;
        for (auto pc : s) {
            const BtbKey k = rig.true_key(AttackRig::kAttacker, pc);
            congruent = congruent && k.set == kx.set && k != kx &&
                        std::find(keys.begin(), keys.end(), k) == keys.end();
            keys.push_back(k);
        }
        if (congruent && evicts(x, s))
            ++res.verified;
    }
    const auto& t = rig.tally();
    res.outcome.misp_triggered = t.misp_triggered;
    res.outcome.evict_triggered = t.evict_triggered;
    res.outcome.rerandomizations_observed = t.rerandomizations_observed;
    res.outcome.success = res.verified == res.targets;
    res.outcome.rate = res.targets ? static_cast<double>(res.verified) / static_cast<double>(res.targets) : 0;
    return res;
}

AttackOutcome target_injection(const PredictorConfig& cfg, const ThresholdConfig& th, std::uint64_t gadget,
                               std::uint64_t budget, std::uint64_t seed, bool share_tokens)
{
    AttackRig rig(cfg, th, seed, share_tokens);
    Rng rng(mix_seed(seed, 0x1e3));
    const unsigned bits = cfg.btb_target_bits;
    const std::uint64_t m = low_mask(bits);
    const BranchRecord victim = make(AttackRig::kVictim, BranchType::indirect_jump, kVictimJump, true, kVictimTarget);
    gadget = near_target(cfg, kVictimJump, gadget);

    // Sweep order: the gadget itself first, then the remaining values in a
    // random order (drawn with replacement when the space is too large).
    std::vector<std::uint64_t> order;
    if (bits <= 20) {
        order.resize(std::size_t{1} << bits);
        std::iota(order.begin(), order.end(), 0);
        std::swap(order[0], order[gadget & m]);
        std::shuffle(order.begin() + 1, order.end(), rng.engine());
    }

    AttackOutcome o;
    for (std::uint64_t i = 0; i < budget; ++i) {
        const std::uint64_t low = i == 0 ? gadget & m : (order.empty() ? (rng.next() & m) : order[i % order.size()]);
        rig.plant_for_victim(kVictimJump, (gadget & ~m) | low);
        const auto res = rig.victim(victim);
        ++o.wall_trials;
        for (const auto& e : res.events) {
            if (e.kind == EventKind::target_misp)
                ++o.misp_triggered;
            if (e.kind == EventKind::st_rerandomized)
                ++o.rerandomizations_observed;
        }
        if (res.prediction.target == gadget) {
            o.success = true;
            break;
        }
    }
    o.rate = o.success ? 1.0 / static_cast<double>(o.wall_trials) : 0.0;
    return o;
}

// ---------------------------------------------------------------------------
// Table cells

namespace {

struct CellContext {
    const AttackScenario& s;
    AttackRig rig;
    Rng rng;
    std::vector<bool> secrets;

    explicit CellContext(const AttackScenario& sc, bool share = false)
        : s(sc), rig(sc.config, sc.thresholds, sc.seed, share), rng(mix_seed(sc.seed, 0xce11)),
          secrets(victim_secrets(sc.trials, sc.seed))
    {
    }

    const PredictorConfig& cfg() const { return s.config; }

    bool a_jump(std::uint64_t pc, std::uint64_t low)
    {
        return rig.attacker(jump(AttackRig::kAttacker, pc, near_target(cfg(), pc, low))).misp;
    }

    // Attacker drives the shared GHR to zero with its own not-taken branches.
    void flush_history()
    {
        for (unsigned i = 0; i <= cfg().ghr_bits; ++i)
            rig.attacker(cond(AttackRig::kAttacker, kAttackerFlush, false));
    }
};

double fraction(std::size_t good, std::size_t n) { return n ? static_cast<double>(good) / static_cast<double>(n) : 0; }

AttackOutcome finish(CellContext& c, double rate, double success_at)
{
    AttackOutcome o = c.rig.tally();
    o.rate = rate;
    o.success = rate >= success_at;
    o.wall_trials = c.s.trials;
    return o;
}

// The attacker picks its collision candidate: the public baseline alias if it
// shows a victim-dependent misprediction, else the first random candidate that
// does, within the search budget.
std::uint64_t search_reuse_candidate(CellContext& c, std::uint64_t victim_pc)
{
    constexpr int kProbes = 8;
    const BranchRecord vrec = jump(AttackRig::kVictim, victim_pc, near_target(c.cfg(), victim_pc, 0x20));
    const std::uint64_t alias = baseline_alias(victim_pc);
    for (std::size_t i = 0; i < c.s.search_budget; ++i) {
        const std::uint64_t cand = i == 0 ? alias : c.rng.next() & kAddrMask48;
        c.a_jump(cand, 0x77);
        for (int p = 0; p < kProbes; ++p) {
            if (c.rng.chance(0.5))
                c.rig.victim(vrec);
            if (c.a_jump(cand, 0x77))
                return cand;
        }
    }
    return alias;
}

AttackOutcome btb_cell(const AttackScenario& s)
{
    const bool same_as = s.family == AttackFamily::same_address_space;
    CellContext c(s);
    const auto& cfg = c.cfg();
    const std::uint32_t actx = same_as ? AttackRig::kVictim : AttackRig::kAttacker;
    const auto a_exec = [&](std::uint64_t pc, std::uint64_t low) {
        return c.rig.attacker(jump(actx, pc, near_target(cfg, pc, low))).misp;
    };
    const BranchRecord vjump = jump(AttackRig::kVictim, kVictimJump, near_target(cfg, kVictimJump, kVictimTarget));
    std::size_t good = 0;

    switch (s.family) {
    case AttackFamily::reuse_home: {
        const std::uint64_t a = search_reuse_candidate(c, kVictimCond);
        a_exec(a, 0x77);
        for (std::size_t t = 0; t < s.trials; ++t) {
            c.rig.victim(cond(AttackRig::kVictim, kVictimCond, c.secrets[t]));
            if (a_exec(a, 0x77) == c.secrets[t])
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.9);
    }
    case AttackFamily::reuse_away:
    case AttackFamily::same_address_space: {
        const std::uint64_t a = baseline_alias(kVictimJump);
        const std::uint64_t want = near_target(cfg, kVictimJump, kGadget);
        for (std::size_t t = 0; t < s.trials; ++t) {
            a_exec(a, kGadget);
            if (c.rig.victim(vjump).prediction.target == want)
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.5);
    }
    case AttackFamily::evict_home: {
        const auto set = baseline_congruent(cfg, kVictimCond, cfg.btb_ways);
        for (auto pc : set)
            a_exec(pc, 0x11);
        for (std::size_t t = 0; t < s.trials; ++t) {
            c.rig.victim(cond(AttackRig::kVictim, kVictimCond, c.secrets[t]));
            bool seen = false;
            for (auto pc : set)
                seen = a_exec(pc, 0x11) || seen;
            if (seen == c.secrets[t])
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.9);
    }
    case AttackFamily::evict_away: {
        const auto set = baseline_congruent(cfg, kVictimJump, cfg.btb_ways);
        for (std::size_t t = 0; t < s.trials; ++t) {
            c.rig.victim(vjump);
            for (auto pc : set)
                a_exec(pc, 0x11);
            if (!c.rig.victim(vjump).prediction.target)
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.5);
    }
    case AttackFamily::dos_evict:
    case AttackFamily::dos_reuse: {
        // Victim misprediction rate with the attack against a control run in
        // which the attacker executes the same number of unrelated branches.
        const auto pcs = s.family == AttackFamily::dos_evict ? baseline_congruent(cfg, kVictimJump, cfg.btb_ways)
                                                             : std::vector<std::uint64_t>{baseline_alias(kVictimJump)};
        const auto run = [&](bool attack) {
            AttackScenario sc = s;
            sc.seed = mix_seed(s.seed, attack ? 1 : 2);
            CellContext cc(sc);
            std::size_t misses = 0;
            for (std::size_t t = 0; t < s.trials; ++t) {
                for (auto pc : pcs)
                    cc.a_jump(attack ? pc : cc.rng.next() & kAddrMask48, 0x33);
                if (!cc.rig.victim(vjump).correct)
                    ++misses;
            }
            return std::pair{fraction(misses, s.trials), cc.rig.tally()};
        };
        const auto [attacked, tally] = run(true);
        const auto [control, unused] = run(false);
        AttackOutcome o = tally;
        o.rate = attacked - control;
        o.success = o.rate >= 0.1;
        o.wall_trials = s.trials;
        return o;
    }
    case AttackFamily::target_inject: break;
    }
    throw AttackError("unsupported BTB scenario");
}

AttackOutcome pht_cell(const AttackScenario& s)
{
    CellContext c(s);
    const std::uint64_t a = baseline_alias(kVictimCond);
    // Each execution happens right after a history flush, so attacker and
    // victim look the counter up under the same (zero) history.
    const auto a_cond = [&](bool taken) {
        c.flush_history();
        return c.rig.attacker(cond(AttackRig::kAttacker, a, taken)).misp;
    };
    const auto v_cond = [&](bool taken) {
        c.flush_history();
        return c.rig.victim(cond(AttackRig::kVictim, kVictimCond, taken));
    };
    std::size_t good = 0;
    switch (s.family) {
    case AttackFamily::reuse_home:
        for (std::size_t t = 0; t < s.trials; ++t) {
            for (bool d : {false, false, false, true}) // counter -> weakly not-taken
                a_cond(d);
            v_cond(c.secrets[t]);
            if (a_cond(false) == c.secrets[t])
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.9);
    case AttackFamily::reuse_away:
        for (std::size_t t = 0; t < s.trials; ++t) {
            for (int i = 0; i < 3; ++i)
                a_cond(true);
            if (v_cond(false).prediction.direction == true)
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.5);
    case AttackFamily::dos_reuse: {
        const auto run = [&](bool attack) {
            AttackScenario sc = s;
            sc.seed = mix_seed(s.seed, attack ? 1 : 2);
            CellContext cc(sc);
            std::size_t misses = 0;
            for (std::size_t t = 0; t < s.trials; ++t) {
                for (int i = 0; i < 3; ++i) {
                    cc.flush_history();
                    cc.rig.attacker(cond(AttackRig::kAttacker, attack ? a : cc.rng.next() & kAddrMask48, true));
                }
                cc.flush_history();
                if (!cc.rig.victim(cond(AttackRig::kVictim, kVictimCond, false)).correct)
                    ++misses;
            }
            return std::pair{fraction(misses, s.trials), cc.rig.tally()};
        };
        const auto [attacked, tally] = run(true);
        const auto [control, unused] = run(false);
        AttackOutcome o = tally;
        o.rate = attacked - control;
        o.success = o.rate >= 0.1;
        o.wall_trials = s.trials;
        return o;
    }
    default: break;
    }
    throw AttackError("unsupported PHT scenario");
}

AttackOutcome rsb_cell(const AttackScenario& s)
{
    CellContext c(s);
    const unsigned depth = c.cfg().rsb_entries;
    const auto a_call = [&](unsigned i) {
        c.rig.attacker(call(AttackRig::kAttacker, kAttackerCall + 0x10 * i, kAttackerFunc));
    };
    const auto a_ret = [&](unsigned i) {
        return c.rig.attacker(ret(AttackRig::kAttacker, kAttackerRet, kAttackerCall + 0x10 * i + kInstrBytes)).misp;
    };
    std::size_t good = 0;
    switch (s.family) {
    case AttackFamily::reuse_home:
        for (std::size_t t = 0; t < s.trials; ++t) {
            a_call(0);
            if (c.secrets[t])
                c.rig.victim(call(AttackRig::kVictim, kVictimCall, kVictimFunc));
            if (a_ret(0) == c.secrets[t])
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.9);
    case AttackFamily::reuse_away:
        for (std::size_t t = 0; t < s.trials; ++t) {
            c.rig.victim(call(AttackRig::kVictim, kVictimCall, kVictimFunc));
            a_call(0);
            const auto r = c.rig.victim(ret(AttackRig::kVictim, kVictimFunc + 0x40, kVictimCall + kInstrBytes));
            // the popped entry carries 32 bits; the upper bits come from the victim's return pc
            const std::uint64_t want =
                ((kVictimFunc + 0x40) & ~0xffffffffull) | ((kAttackerCall + kInstrBytes) & 0xffffffffull);
            if (r.prediction.target == want)
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.5);
    case AttackFamily::evict_home:
        for (std::size_t t = 0; t < s.trials; ++t) {
            for (unsigned i = 0; i < depth; ++i)
                a_call(i);
            if (c.secrets[t])
                c.rig.victim(call(AttackRig::kVictim, kVictimCall, kVictimFunc));
            bool seen = false;
            for (unsigned i = depth; i-- > 0;)
                seen = a_ret(i) || seen;
            if (seen == c.secrets[t])
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.9);
    case AttackFamily::evict_away:
        for (std::size_t t = 0; t < s.trials; ++t) {
            c.rig.victim(call(AttackRig::kVictim, kVictimCall, kVictimFunc));
            for (unsigned i = 0; i <= depth; ++i)
                a_call(i);
            for (unsigned i = depth + 1; i-- > 0;)
                a_ret(i);
            const auto r = c.rig.victim(ret(AttackRig::kVictim, kVictimFunc + 0x40, kVictimCall + kInstrBytes));
            if (r.prediction.rsb_underflow)
                ++good;
        }
        return finish(c, fraction(good, s.trials), 0.5);
    default: break;
    }
    throw AttackError("unsupported RSB scenario");
}

} // namespace

AttackOutcome run_scenario(const AttackScenario& s)
{
    attack_name(s.family, s.structure); // rejects invalid combinations
    if (s.trials == 0)
        throw AttackError("trials must be positive");
    switch (s.structure) {
    case AttackStructure::btb:
        if (s.family == AttackFamily::target_inject)
            return target_injection(s.config, s.thresholds, kGadget, s.trials, s.seed);
        return btb_cell(s);
    case AttackStructure::pht: return pht_cell(s);
    case AttackStructure::rsb: return rsb_cell(s);
    }
    throw AttackError("unknown structure");
}

std::string outcomes_csv_header()
{
    return "scenario,model,seed,success,rate,misp_triggered,evict_triggered,rerandomizations_observed,wall_trials\n";
}

std::string outcome_csv_row(const std::string& scenario, const std::string& model, std::uint64_t seed,
                            const AttackOutcome& o)
{
    std::ostringstream os;
    os << scenario << ',' << model << ',' << seed << ',' << (o.success ? 1 : 0) << ',' << o.rate << ','
       << o.misp_triggered << ',' << o.evict_triggered << ',' << o.rerandomizations_observed << ',' << o.wall_trials
       << '\n';
    return os.str();
}

} // namespace stbpu
