// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include "stbpu/analysis.hpp"
#include "stbpu/attack.hpp"
#include "stbpu/predictor.hpp"
#include "stbpu/remap.hpp"
#include "stbpu/remap_gen.hpp"
#include "stbpu/sim.hpp"
#include "stbpu/trace.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

using namespace stbpu;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

bool within_rel(double v, double want, double tol) { return std::abs(v - want) <= tol * want; }

Verdict analytic_reuse()
{
    const auto c = reuse_cost(full_btb_geom());
    const double E = std::ldexp(1.0, 21) - 4096;
    return {within_rel(c.M, 6.9e8, 0.01) && c.E == E, fmt("M=%.4g (want 6.9e8 +-1%%) E=%.0f (want %.0f)", c.M, c.E, E)};
}

Verdict analytic_gem()
{
    const double v = gem_eviction_cost(0.5, full_btb_geom());
    return {within_rel(v, 5.3e5, 0.01), fmt("evictions=%.4g (want 5.3e5 +-1%%)", v)};
}

Verdict analytic_injection()
{
    const double v = injection_cost(32);
    return {v == std::ldexp(1.0, 31), fmt("trials=%.0f (want 2^31)", v)};
}

Verdict thresholds()
{
    const auto a = published_thresholds(0.1), b = published_thresholds(0.05);
    const bool ok = a.misp == 83000 && a.evict == 53000 && b.misp == 41500 && b.evict == 26500;
    return {ok, fmt("r=0.1 -> (%llu, %llu), r=0.05 -> (%llu, %llu)", (unsigned long long)a.misp,
                    (unsigned long long)a.evict, (unsigned long long)b.misp, (unsigned long long)b.evict)};
}

Verdict remap_quality()
{
    const auto remaps = shipped_remaps();
    bool ok = true;
    std::string detail;
    for (Role r : all_roles()) {
        const auto& f = remaps->get(r);
        const auto& spec = role_spec(r);
        const auto q = evaluate_quality(f, spec.fields, 100000, std::size_t{1} << 21, 1234);
        bool good = q.sample_count >= 100000 && q.avalanche_mean >= 0.47 && q.avalanche_mean <= 0.53;
        double worst = 0;
        for (const auto& fl : q.fields) {
            worst = std::max(worst, fl.cv / fl.ideal_cv);
            good = good && fl.cv <= 3 * fl.ideal_cv;
        }
        ok = ok && good;
        detail += fmt("%s aval=%.4f cv/ideal<=%.2f%s; ", std::string(spec.name).c_str(), q.avalanche_mean, worst,
                      good ? "" : " BAD");
    }
    const unsigned cp = cost_of(reference_r1()).critical_path_transistors;
    const bool shipped_is_ref = remaps->get(Role::R1).layers() == reference_r1().layers();
    ok = ok && cp == 36 && shipped_is_ref;
    detail += fmt("R1 critical path=%u%s", cp, shipped_is_ref ? "" : " (shipped R1 differs from reference)");
    return {ok, detail};
}

Verdict identity()
{
    std::size_t traces = 0, records = 0;
    for (const auto& ent : std::filesystem::directory_iterator(std::string(STBPU_ACCEPT_DATA_DIR) + "/traces")) {
        if (ent.path().extension() != ".trace")
            continue;
        const auto t = load_trace_file(ent.path().string());
        SimOptions o;
        o.thresholds = published_thresholds(0.05);
        Simulator base(default_config(Model::baseline), o), ident(identity_config(), o);
        for (const auto& r : t.records) {
            const auto a = base.step(r);
            auto b = ident.step(r);
            std::erase_if(b.events, [](const BpuEvent& e) { return e.kind == EventKind::st_rerandomized; });
            bool same = a.prediction == b.prediction && a.events.size() == b.events.size();
            for (std::size_t i = 0; same && i < a.events.size(); ++i)
                same = a.events[i].kind == b.events[i].kind && a.events[i].context_id == b.events[i].context_id &&
                       a.events[i].tagged_component == b.events[i].tagged_component;
            if (!same)
                return {false, fmt("%s diverges at record %zu", ent.path().filename().c_str(), records)};
            ++records;
        }
        ++traces;
    }
    return {traces > 0, fmt("%zu traces, %zu records identical", traces, records)};
}

Verdict collisions()
{
    const auto cs = collision_trials(scaled_config(Model::stbpu), 2'000'000, 2024);
    const double p = collision_prob(scaled_btb_geom());
    const double z = (cs.frequency - p) / cs.standard_error;
    return {std::abs(z) <= 3 && within_rel(p, 1.526e-5, 0.001),
            fmt("%llu/%llu hits, freq=%.4g vs p=%.4g (z=%.2f)", (unsigned long long)cs.hits,
                (unsigned long long)cs.trials, cs.frequency, p, z)};
}

Verdict defense()
{
    constexpr std::size_t kSeeds = 20;
    const auto rb_he = [&](Model m, const ThresholdConfig& th, double& worst) {
        double sum = 0;
        worst = 0;
        for (std::size_t seed = 1; seed <= kSeeds; ++seed) {
            AttackScenario s = parse_attack_name("btb-rb-he");
            s.config = scaled_config(m);
            s.thresholds = th;
            s.seed = seed;
            const auto o = run_scenario(s);
            sum += o.rate;
            worst = std::max(worst, o.rate);
        }
        return sum / kSeeds;
    };
    const auto gem = [&](Model m, const ThresholdConfig& th) {
        std::size_t ok = 0;
        for (std::size_t seed = 1; seed <= kSeeds; ++seed)
            ok += gem_find_eviction_sets(scaled_config(m), th, 0.25, seed).outcome.success;
        return ok;
    };
    const auto th = scaled_thresholds(0.05);
    double st_worst = 0, base_worst = 0;
    const double st_acc = rb_he(Model::stbpu, th, st_worst);
    const double base_acc = rb_he(Model::baseline, {}, base_worst);
    const std::size_t st_gem = gem(Model::stbpu, th);
    const std::size_t base_gem = gem(Model::baseline, {});
    const bool ok = st_acc <= 0.55 && st_gem == 0 && base_acc > 0.95 && base_gem == kSeeds;
    return {ok, fmt("thresholds (%llu, %llu); RB-HE stbpu %.3f (max seed %.2f) baseline %.3f; GEM verified "
                    "stbpu %zu/%zu baseline %zu/%zu",
                    (unsigned long long)th.misp, (unsigned long long)th.evict, st_acc, st_worst, base_acc, st_gem,
                    kSeeds, base_gem, kSeeds)};
}

Verdict rerandomization()
{
    // Context 1 runs indirect jumps with fresh targets (each mispredicts);
    // context 2 is registered and idle on the other thread.
    SimOptions o;
    o.thresholds = {3, 1000, 0.05, 0};
    Simulator sim(default_config(Model::stbpu), o);
    Rng rng(3);
    BranchRecord other;
    other.thread_id = 1;
    other.context_id = 2;
    other.branch_type = BranchType::direct_jump;
    other.pc = 0x500000;
    other.taken = true;
    other.target = 0x500400;
    sim.step(other);
    sim.context_token(1);
    const ContextKey a{1, Privilege::user}, b{2, Privilege::user};
    const auto b_before = sim.st()->entry(b);
    const auto b_token = sim.st()->token(b);

    std::size_t misp = 0, fired = 0;
    bool ok = true;
    for (int i = 0; i < 300; ++i) {
        BranchRecord r;
        r.context_id = 1;
        r.branch_type = BranchType::indirect_jump;
        r.pc = 0x400000 + 0x40 * (i % 16);
        r.taken = true;
        r.target = 0x600000 + (rng.next() & 0xffff0);
        const auto tok = sim.st()->token(a);
        const auto res = sim.step(r);
        std::size_t m = 0, rr = 0;
        for (const auto& e : res.events) {
            m += e.kind == EventKind::direction_misp || e.kind == EventKind::target_misp;
            rr += e.kind == EventKind::st_rerandomized;
        }
        for (std::size_t k = 0; k < m; ++k)
            if ((++misp) % 3 == 0)
                ++fired;
        const auto& ea = sim.st()->entry(a);
        if (rr > 0)
            ok = ok && ea.misp_counter == 3 && ea.evict_counter == 1000 && !(sim.st()->token(a) == tok);
        else
            ok = ok && sim.st()->token(a) == tok;
    }
    const auto& ea = sim.st()->entry(a);
    const auto& eb = sim.st()->entry(b);
    ok = ok && misp >= 30 && ea.rerandomization_count == fired && ea.rerandomization_count == misp / 3;
    const bool isolated = sim.st()->token(b) == b_token && eb.misp_counter == b_before.misp_counter &&
                          eb.evict_counter == b_before.evict_counter && eb.rerandomization_count == 0;
    return {ok && isolated, fmt("%zu mispredictions -> %llu re-randomizations (want %zu), other context %s", misp,
                                (unsigned long long)ea.rerandomization_count, misp / 3,
                                isolated ? "untouched" : "CHANGED")};
}

Verdict envelope(const std::vector<NamedTrace>& suite)
{
    std::vector<PredictorConfig> cfgs = {default_config(Model::baseline), default_config(Model::stbpu),
                                         default_config(Model::flush_ibpb)};
    SimOptions o;
    o.thresholds = thresholds_for(cfgs[1], 0.05);
    double worst = -1;
    std::string worst_name;
    double flush_csh = 0, st_csh = 0;
    for (const auto& nt : suite) {
        const auto reps = compare_models(nt.trace, cfgs, o);
        const double d = reps[0].oae() - reps[1].oae();
        if (d > worst) {
            worst = d;
            worst_name = nt.name;
        }
        if (nt.name == "context_switch_heavy") {
            st_csh = reps[1].oae();
            flush_csh = reps[2].oae();
        }
    }
    return {worst <= 0.05 && flush_csh < st_csh,
            fmt("worst baseline-stbpu OAE gap %+.4f (%s); context_switch_heavy flush_ibpb %.4f < stbpu %.4f",
                worst, worst_name.c_str(), flush_csh, st_csh)};
}

Verdict sweep(const std::vector<NamedTrace>& suite)
{
    const std::vector<double> rs = {1, 0.1, 0.05, 0.01, 1e-4};
    std::vector<double> mean(rs.size(), 0);
    for (const auto& nt : suite) {
        const auto rows = sweep_r(nt.trace, default_config(Model::stbpu), rs, 1);
        for (std::size_t i = 0; i < rs.size(); ++i)
            mean[i] += rows[i].oae / static_cast<double>(suite.size());
    }
    bool mono = true;
    for (std::size_t i = 1; i + 1 < rs.size(); ++i)
        mono = mono && mean[i] <= mean[i - 1];
    const auto collapse = published_thresholds(rs.back());
    const double drop = mean[0] - mean.back();
    return {mono && collapse.misp < 100 && drop > 0.05,
            fmt("mean OAE %.4f %.4f %.4f %.4f; r=1e-4 (misp threshold %llu) drop %.4f", mean[0], mean[1], mean[2],
                mean[3], (unsigned long long)collapse.misp, drop)};
}

} // namespace

int main()
{
    const auto suite = synthetic_suite(1);
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
        {"reuse cost", analytic_reuse},
        {"GEM cost", analytic_gem},
        {"injection cost", analytic_injection},
        {"thresholds", thresholds},
        {"remap quality", remap_quality},
        {"identity equivalence", identity},
        {"collision rate", collisions},
        {"defense efficacy", defense},
        {"re-randomization", rerandomization},
        {"accuracy envelope", [&] { return envelope(suite); }},
        {"sweep_r trend", [&] { return sweep(suite); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2zu %-22s %s  %s  [%.1fs]\n", i + 1, criteria[i].first, v.pass ? "PASS" : "FAIL",
                    v.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !v.pass;
    }
    return failed ? 1 : 0;
}
