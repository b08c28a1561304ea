#include "doctest.h"

#include "stbpu/sim.hpp"

#include <json.hpp>

#include <sstream>

using namespace stbpu;

namespace {

TraceStream small_trace()
{
    return synth_trace(Scenario::context_switch_heavy, {{"k", "3"}, {"s", "50"}, {"total", "6000"}}, 4);
}

SimOptions opts(double r = 0.05)
{
    SimOptions o;
    o.thresholds = published_thresholds(r);
    return o;
}

} // namespace

TEST_CASE("simulation is deterministic per seed")
{
    const auto t = small_trace();
    for (Model m : {Model::baseline, Model::stbpu, Model::st_tage_lite, Model::st_perceptron}) {
        CAPTURE(model_name(m));
        auto o = opts();
        o.thresholds = {5, 5, 0.05, 0};
        const auto a = simulate(t, default_config(m), o);
        const auto b = simulate(t, default_config(m), o);
        CHECK(a == b);
        CHECK(a.branches == t.size());
    }
}

TEST_CASE("token seed changes keyed runs only through re-randomization")
{
    const auto t = small_trace();
    auto o1 = opts(), o2 = opts();
    o1.thresholds = o2.thresholds = {4, 4, 0.05, 0};
    o2.seed = 99;
    const auto a = simulate(t, default_config(Model::stbpu), o1);
    const auto b = simulate(t, default_config(Model::stbpu), o2);
    CHECK(a.branches == b.branches);
    CHECK(a.rerandomizations > 0);
    CHECK_FALSE(a == b);
}

TEST_CASE("report accounting adds up")
{
    const auto t = small_trace();
    const auto rep = simulate(t, default_config(Model::stbpu), opts(1e-4));
    std::uint64_t ctx_branches = 0, ctx_rr = 0;
    for (const auto& [k, cs] : rep.contexts) {
        ctx_branches += cs.branches;
        ctx_rr += cs.rerandomizations;
    }
    CHECK(ctx_branches == rep.branches);
    CHECK(ctx_rr == rep.rerandomizations);
    CHECK(rep.events[static_cast<std::size_t>(EventKind::st_rerandomized)] == rep.rerandomizations);
    CHECK(rep.oae_correct <= rep.branches);
    CHECK(rep.flushes == 0);
}

TEST_CASE("flush_ibpb flushes on every context change")
{
    TraceStream t;
    std::size_t changes = 0;
    for (int i = 0; i < 600; ++i) {
        BranchRecord r;
        r.context_id = 1 + static_cast<std::uint32_t>((i / 40) % 2);
        r.branch_type = BranchType::direct_jump;
        r.pc = 0x400000 + 0x40 * (i % 20);
        r.taken = true;
        r.target = r.pc + 0x800;
        if (i > 0 && r.context_id != t.records.back().context_id)
            ++changes;
        t.records.push_back(r);
    }
    SimOptions o;
    const auto flush = simulate(t, default_config(Model::flush_ibpb), o);
    const auto base = simulate(t, default_config(Model::baseline), o);
    CHECK(flush.flushes == changes);
    // every quantum starts cold: exactly the 20 compulsory misses per quantum
    CHECK(flush.oae_correct == t.size() - 20 * (changes + 1));
    CHECK(base.oae_correct == t.size() - 20);
}

TEST_CASE("flush_ibrs flushes on user to kernel entry only")
{
    TraceStream t;
    for (int i = 0; i < 100; ++i) {
        BranchRecord r;
        r.context_id = 1;
        r.privilege = (i / 10) % 2 ? Privilege::kernel : Privilege::user;
        r.branch_type = BranchType::direct_jump;
        r.pc = 0x400000 + 0x40 * (i % 10);
        r.taken = true;
        r.target = r.pc + 0x800;
        t.records.push_back(r);
    }
    CHECK(simulate(t, default_config(Model::flush_ibrs), SimOptions{}).flushes == 5);
}

TEST_CASE("shared tokens make two contexts one keyed domain")
{
    TraceStream t;
    for (int i = 0; i < 200; ++i) {
        BranchRecord r;
        r.context_id = i < 100 ? 1 : 2;
        r.branch_type = BranchType::direct_jump;
        r.pc = 0x400000 + 0x40 * (i % 10);
        r.taken = true;
        r.target = r.pc + 0x800;
        t.records.push_back(r);
    }
    SimOptions o;
    const auto split = simulate(t, default_config(Model::stbpu), o);
    o.share[2] = 1;
    const auto shared = simulate(t, default_config(Model::stbpu), o);
    // context 2 reuses context 1's entries only when the tokens match
    CHECK(shared.oae_correct == 190);
    CHECK(split.oae_correct == 180);
}

TEST_CASE("driver argument errors")
{
    const auto t = small_trace();
    CHECK_THROWS_WITH(compare_models(t, {default_config(Model::baseline)}, opts()), "need >= 2 models");
    CHECK_THROWS(simulate(TraceStream{}, default_config(Model::baseline), opts()));
    CHECK_THROWS(sweep_r(t, default_config(Model::baseline), {0.1}, 1));
    CHECK_THROWS(sweep_r(t, default_config(Model::stbpu), {0.0}, 1));
    CHECK_THROWS(sweep_r(t, default_config(Model::stbpu), {-1.0}, 1));
}

TEST_CASE("compare keeps model order and matches single runs")
{
    const auto t = small_trace();
    const std::vector<PredictorConfig> cfgs = {default_config(Model::baseline), default_config(Model::stbpu),
                                               default_config(Model::conservative)};
    const auto reps = compare_models(t, cfgs, opts());
    REQUIRE(reps.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(reps[i] == simulate(t, cfgs[i], opts()));
    CHECK(reps[1].model == "stbpu");
}

TEST_CASE("thresholds follow the rig geometry")
{
    CHECK(thresholds_for(default_config(Model::stbpu), 0.05).misp == 41500);
    CHECK(thresholds_for(scaled_config(Model::stbpu), 0.05).misp == scaled_thresholds(0.05).misp);
}

TEST_CASE("sweep rows follow r")
{
    const auto t = small_trace();
    const auto rows = sweep_r(t, default_config(Model::stbpu), {1, 1e-4}, 1);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].thresholds.misp == 830000);
    CHECK(rows[1].thresholds.misp == 83);
    CHECK(rows[1].rerandomizations > rows[0].rerandomizations);
    CHECK(rows[1].oae <= rows[0].oae);
}

TEST_CASE("report output formats")
{
    const auto t = small_trace();
    const auto reps = compare_models(t, {default_config(Model::baseline), default_config(Model::stbpu)}, opts());
    const auto csv = reports_csv(reps, true);
    std::istringstream is(csv);
    std::string header, row;
    std::getline(is, header);
    CHECK(header.find("oae_delta") != std::string::npos);
    std::size_t rows = 0;
    while (std::getline(is, row))
        ++rows;
    CHECK(rows == 2);

    std::istringstream js(reports_jsonl(reps));
    std::string line;
    std::getline(js, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j["model"] == "baseline");
    CHECK(j["branches"] == t.size());
    CHECK(j["contexts"].size() == 3);
}
