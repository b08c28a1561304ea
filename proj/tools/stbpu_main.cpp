// stbpu: command-line front end for the remap generator, simulator, cost
// model and attack harness.

#include "stbpu/analysis.hpp"
#include "stbpu/attack.hpp"
#include "stbpu/predictor.hpp"
#include "stbpu/remap.hpp"
#include "stbpu/remap_gen.hpp"
#include "stbpu/sim.hpp"
#include "stbpu/trace.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace stbpu;

namespace {

struct ModelOpts {
    std::string preset = "full";
    std::string config_file;
    std::string netlists;
    std::vector<std::string> settings;
    std::optional<unsigned> btb_sets, btb_ways, btb_tag_bits, btb_offset_bits, btb_target_bits;
    std::optional<unsigned> pht_entries, ghr_bits, bhb_bits, rsb_entries;
    bool identity = false;

    void add(CLI::App* app)
    {
        app->add_option("--preset", preset, "Geometry preset")->check(CLI::IsMember({"full", "scaled"}));
        app->add_option("--config", config_file, "key = value predictor config file");
        app->add_option("--netlists", netlists, "Directory with R1..R4, Rt, Rp netlists");
        app->add_option("--set", settings, "Extra key=value config setting (repeatable)");
        app->add_option("--btb-sets", btb_sets);
        app->add_option("--btb-ways", btb_ways);
        app->add_option("--btb-tag-bits", btb_tag_bits);
        app->add_option("--btb-offset-bits", btb_offset_bits);
        app->add_option("--btb-target-bits", btb_target_bits);
        app->add_option("--pht-entries", pht_entries);
        app->add_option("--ghr-bits", ghr_bits);
        app->add_option("--bhb-bits", bhb_bits);
        app->add_option("--rsb-entries", rsb_entries);
        app->add_flag("--identity-remap", identity, "stbpu only: baseline functions and a zero target key");
    }

    PredictorConfig build(Model m) const
    {
        PredictorConfig c = preset == "scaled" ? scaled_config(m) : default_config(m);
        if (!config_file.empty()) {
            c = load_config_file(config_file, c);
            c.model = m;
        }
        for (const auto& s : settings) {
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects key=value, got '" + s + "'");
            apply_setting(c, s.substr(0, eq), s.substr(eq + 1));
        }
        const auto put = [](unsigned& f, const std::optional<unsigned>& v) {
            if (v)
                f = *v;
        };
        put(c.btb_sets, btb_sets);
        put(c.btb_ways, btb_ways);
        put(c.btb_tag_bits, btb_tag_bits);
        put(c.btb_offset_bits, btb_offset_bits);
        put(c.btb_target_bits, btb_target_bits);
        put(c.pht_entries, pht_entries);
        put(c.ghr_bits, ghr_bits);
        put(c.bhb_bits, bhb_bits);
        put(c.rsb_entries, rsb_entries);
        if (identity)
            c.identity_remap = true;
        validate(c);
        return c;
    }

    std::shared_ptr<const RemapSet> remaps() const
    {
        if (netlists.empty())
            return nullptr;
        return std::make_shared<const RemapSet>(RemapSet::load_dir(netlists));
    }
};

struct ThresholdOpts {
    double r = 0.05;
    std::optional<std::uint64_t> misp, evict, tage;
    std::vector<std::string> share;
    std::uint64_t seed = 1;

    void add(CLI::App* app)
    {
        app->add_option("--r", r, "Attack difficulty factor in (0, 1]")->check(CLI::Range(1e-12, 1.0));
        app->add_option("--misp-threshold", misp, "Explicit misprediction threshold (0 disables)");
        app->add_option("--evict-threshold", evict, "Explicit eviction threshold (0 disables)");
        app->add_option("--tage-threshold", tage, "Separate TAGE-bank misprediction threshold");
        app->add_option("--share-st", share, "ctxA=ctxB: context A uses B's token (repeatable)");
        app->add_option("--seed", seed, "Token PRNG seed");
    }

    SimOptions build(const PredictorConfig& cfg) const
    {
        SimOptions o;
        o.seed = seed;
        o.thresholds = thresholds_for(cfg, r);
        if (misp)
            o.thresholds.misp = *misp;
        if (evict)
            o.thresholds.evict = *evict;
        if (tage)
            o.thresholds.tage = *tage;
        for (const auto& s : share) {
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("--share-st expects ctxA=ctxB, got '" + s + "'");
            o.share[static_cast<std::uint32_t>(std::stoul(s.substr(0, eq)))] =
                static_cast<std::uint32_t>(std::stoul(s.substr(eq + 1)));
        }
        return o;
    }
};

struct TraceOpts {
    std::string path;
    std::string scenario;
    std::vector<std::string> params;
    std::uint64_t trace_seed = 1;

    void add(CLI::App* app)
    {
        app->add_option("--trace", path, "Trace file");
        app->add_option("--scenario", scenario, "Synthetic scenario instead of a file");
        app->add_option("--param", params, "Scenario parameter key=value (repeatable)");
        app->add_option("--trace-seed", trace_seed, "Seed for the synthetic scenario");
    }

    TraceStream load() const
    {
        if (!path.empty() && !scenario.empty())
            throw std::invalid_argument("give either --trace or --scenario");
        if (!path.empty())
            return load_trace_file(path);
        if (scenario.empty())
            throw std::invalid_argument("a trace is required (--trace or --scenario)");
        ScenarioParams p;
        for (const auto& kv : params) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("--param expects key=value, got '" + kv + "'");
            p[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
        auto t = synth_trace(parse_scenario(scenario), p, trace_seed);
        t.source = scenario;
        return t;
    }
};

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty())
            out.push_back(item);
    return out;
}

void emit(const std::string& text, const std::string& out)
{
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(out);
    if (!os)
        throw std::runtime_error("cannot write " + out);
    os << text;
}

std::string render(const std::vector<SimReport>& reps, const std::string& format, bool delta)
{
    if (format == "csv")
        return reports_csv(reps, delta);
    if (format == "jsonl")
        return reports_jsonl(reps);
    return reports_text(reps, delta);
}

StructGeom parse_geom(const std::string& s)
{
    if (s == "full")
        return full_btb_geom();
    if (s == "scaled")
        return scaled_btb_geom();
    const auto parts = split(s, ',');
    if (parts.size() < 4 || parts.size() > 5)
        throw std::invalid_argument("--geom expects I,W,T,O[,omega] or full/scaled");
    StructGeom g;
    g.I = std::stoull(parts[0]);
    g.W = static_cast<unsigned>(std::stoul(parts[1]));
    g.T = static_cast<unsigned>(std::stoul(parts[2]));
    g.O = static_cast<unsigned>(std::stoul(parts[3]));
    if (parts.size() == 5)
        g.omega = static_cast<unsigned>(std::stoul(parts[4]));
    return g;
}

std::string quality_row(const std::string& name, const LayeredFunction& f, const QualityReport& q, double score)
{
    const auto c = cost_of(f);
    std::ostringstream os;
    os << name << ',' << f.input_width() << ',' << f.output_width() << ',' << c.critical_path_transistors << ','
       << c.total_transistors << ',' << q.avalanche_mean << ',' << q.avalanche_cv << ',' << q.per_bit_spread << ','
       << q.uniformity_cv << ',' << q.uniformity_bins << ',' << q.sample_count << ',' << score << '\n';
    return os.str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Secret-token branch predictor simulator"};
    app.require_subcommand(1);

    // gen-remap
    auto* gen = app.add_subcommand("gen-remap", "Generate and select a remapping function for one role");
    std::string gen_role = "R1", gen_out = ".";
    std::size_t gen_count = 20;
    std::uint64_t gen_seed = 1;
    bool gen_reference = false;
    EvalOptions gen_eval;
    gen->add_option("--role", gen_role, "R1, R2, R3, R4, Rt or Rp")->required();
    gen->add_option("--count", gen_count, "Candidates to generate");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--avalanche-samples", gen_eval.avalanche_samples);
    gen->add_option("--uniformity-samples", gen_eval.uniformity_samples);
    gen->add_flag("--reference", gen_reference, "R1 only: emit the hand-assembled reference layout");

    // synth
    auto* syn = app.add_subcommand("synth", "Write a synthetic scenario trace");
    TraceOpts syn_trace;
    std::string syn_out;
    syn_trace.add(syn);
    syn->add_option("--out", syn_out);

    // eval-remap
    auto* eval = app.add_subcommand("eval-remap", "Measure avalanche and uniformity of a netlist");
    std::string eval_netlist, eval_role, eval_format = "csv";
    std::size_t eval_samples = 100000, eval_uniformity = 1 << 20;
    std::uint64_t eval_seed = 7;
    eval->add_option("--netlist", eval_netlist)->required();
    eval->add_option("--role", eval_role, "Role whose output fields are checked separately");
    eval->add_option("--samples", eval_samples, "Avalanche inputs");
    eval->add_option("--uniformity-samples", eval_uniformity);
    eval->add_option("--seed", eval_seed);
    eval->add_option("--format", eval_format)->check(CLI::IsMember({"csv", "jsonl"}));

    // simulate / compare / sweep-r
    auto* simc = app.add_subcommand("simulate", "Run one model over a trace");
    ModelOpts sim_model;
    ThresholdOpts sim_th;
    TraceOpts sim_trace;
    std::string sim_model_name = "baseline", sim_out, sim_format = "text";
    sim_model.add(simc);
    sim_th.add(simc);
    sim_trace.add(simc);
    simc->add_option("--model", sim_model_name);
    simc->add_option("--out", sim_out, "Write the report here (CSV unless --format says otherwise)");
    simc->add_option("--format", sim_format)->check(CLI::IsMember({"text", "csv", "jsonl"}));

    auto* cmp = app.add_subcommand("compare", "Run several models over the same trace");
    ModelOpts cmp_model;
    ThresholdOpts cmp_th;
    TraceOpts cmp_trace;
    std::string cmp_models = "baseline,stbpu,flush_ibpb,partition_stibp,conservative", cmp_out, cmp_format = "text";
    cmp_model.add(cmp);
    cmp_th.add(cmp);
    cmp_trace.add(cmp);
    cmp->add_option("--models", cmp_models, "Comma-separated model list");
    cmp->add_option("--out", cmp_out);
    cmp->add_option("--format", cmp_format)->check(CLI::IsMember({"text", "csv", "jsonl"}));

    auto* sweep = app.add_subcommand("sweep-r", "OAE as the re-randomization thresholds tighten");
    ModelOpts sw_model;
    TraceOpts sw_trace;
    std::string sw_model_name = "stbpu", sw_r = "1,0.1,0.05,0.01", sw_out;
    std::uint64_t sw_seed = 1;
    sw_model.add(sweep);
    sw_trace.add(sweep);
    sweep->add_option("--model", sw_model_name);
    sweep->add_option("--r", sw_r, "Comma-separated r values");
    sweep->add_option("--seed", sw_seed);
    sweep->add_option("--out", sw_out);

    // analyze
    auto* an = app.add_subcommand("analyze", "Analytic attack costs and thresholds");
    std::string an_geom = "full", an_attack = "all", an_format = "text";
    double an_r = 0.05, an_p = 0.5;
    bool an_pht = false;
    an->add_option("--geom", an_geom, "I,W,T,O[,omega], full or scaled");
    an->add_option("--attack", an_attack, "all, reuse, pht-reuse, gem, injection, guess");
    an->add_option("--r", an_r)->check(CLI::Range(1e-12, 1.0));
    an->add_option("--P", an_p, "GEM fraction of sets targeted");
    an->add_flag("--pht", an_pht, "Include the published PHT reuse constant");
    an->add_option("--format", an_format)->check(CLI::IsMember({"text", "csv"}));

    // attack
    auto* at = app.add_subcommand("attack", "Run an attack scenario against a model");
    std::string at_scenario = "btb-rb-he", at_models = "stbpu", at_geom = "scaled", at_out;
    std::size_t at_seeds = 20, at_trials = 100, at_budget = 2048;
    double at_r = 0.05;
    std::optional<std::uint64_t> at_misp, at_evict;
    at->add_option("--scenario", at_scenario, "Scenario name, 'collision', 'gem' or 'list'");
    at->add_option("--model", at_models, "Comma-separated models");
    at->add_option("--geom", at_geom)->check(CLI::IsMember({"full", "scaled"}));
    at->add_option("--seeds", at_seeds);
    at->add_option("--trials", at_trials);
    at->add_option("--search-budget", at_budget);
    at->add_option("--r", at_r)->check(CLI::Range(1e-12, 1.0));
    at->add_option("--misp-threshold", at_misp);
    at->add_option("--evict-threshold", at_evict);
    at->add_option("--out", at_out);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const Role role = parse_role(gen_role);
            const auto& spec = role_spec(role);
            std::filesystem::create_directories(gen_out);
            const auto net_path = (std::filesystem::path(gen_out) / (std::string(spec.name) + ".net")).string();
            const auto ledger_path = (std::filesystem::path(gen_out) / (std::string(spec.name) + "_ledger.csv")).string();
            gen_eval.seed = gen_seed;
            std::vector<LayeredFunction> cands;
            if (gen_reference) {
                if (role != Role::R1)
                    throw std::invalid_argument("--reference is only defined for R1");
                cands.push_back(reference_r1());
            } else {
                cands = generate_candidates(default_constraints(role, gen_seed), PrimitivePool::defaults(), gen_count,
                                            std::string(spec.name));
            }
            auto sel = select_remaps(role, cands, {1, 1, 1, 1}, gen_eval);
            LayeredFunction chosen(std::string(spec.name), sel.chosen.input_width(), sel.chosen.layers());
            save_netlist_file(chosen, net_path);
            emit(ledger_csv(sel.ledger), ledger_path);
            const auto c = cost_of(chosen);
            std::printf("%s: candidate %zu of %zu, critical path %u, transistors %u -> %s\n", gen_role.c_str(),
                        sel.chosen_index, cands.size(), c.critical_path_transistors, c.total_transistors, net_path.c_str());
        } else if (*syn) {
            emit(serialize_trace(syn_trace.load()), syn_out);
        } else if (*eval) {
            const auto f = load_netlist_file(eval_netlist);
            std::vector<FieldSpec> fields;
            if (!eval_role.empty())
                fields = role_spec(parse_role(eval_role)).fields;
            else if (f.output_width() <= 24)
                fields = {{"out", f.output_width()}};
            else
                throw std::invalid_argument("outputs over 24 bits need --role to split into fields");
            const auto q = evaluate_quality(f, fields, eval_samples, eval_uniformity, eval_seed);
            const double score = score_candidate(q);
            if (eval_format == "csv") {
                std::cout << "name,in,out,critical_path,transistors,avalanche_mean,avalanche_cv,per_bit_spread,"
                             "uniformity_cv,uniformity_bins,samples,score\n"
                          << quality_row(f.name(), f, q, score);
                std::cout << "field,lo,bits,cv,ideal_cv\n";
                for (const auto& fl : q.fields)
                    std::cout << fl.name << ',' << fl.lo << ',' << fl.bits << ',' << fl.cv << ',' << fl.ideal_cv
                              << '\n';
            } else {
                nlohmann::json j;
                const auto c = cost_of(f);
                j["name"] = f.name();
                j["critical_path"] = c.critical_path_transistors;
                j["transistors"] = c.total_transistors;
                j["avalanche_mean"] = q.avalanche_mean;
                j["avalanche_cv"] = q.avalanche_cv;
                j["per_bit_spread"] = q.per_bit_spread;
                j["uniformity_cv"] = q.uniformity_cv;
                j["samples"] = q.sample_count;
                j["score"] = score;
                for (const auto& fl : q.fields)
                    j["fields"].push_back({{"name", fl.name}, {"cv", fl.cv}, {"ideal_cv", fl.ideal_cv}});
                std::cout << j.dump() << '\n';
            }
        } else if (*simc) {
            const auto cfg = sim_model.build(parse_model(sim_model_name));
            const auto trace = sim_trace.load();
            const auto rep = simulate(trace, cfg, sim_th.build(cfg), sim_model.remaps());
            const std::string fmt = sim_out.empty() ? sim_format : (sim_format == "text" ? "csv" : sim_format);
            emit(render({rep}, fmt, false), sim_out);
        } else if (*cmp) {
            std::vector<PredictorConfig> cfgs;
            for (const auto& m : split(cmp_models, ','))
                cfgs.push_back(cmp_model.build(parse_model(m)));
            const auto trace = cmp_trace.load();
            const auto reps = compare_models(trace, cfgs, cmp_th.build(cfgs.front()), cmp_model.remaps());
            const std::string fmt = cmp_out.empty() ? cmp_format : (cmp_format == "text" ? "csv" : cmp_format);
            emit(render(reps, fmt, true), cmp_out);
        } else if (*sweep) {
            const auto cfg = sw_model.build(parse_model(sw_model_name));
            std::vector<double> rs;
            for (const auto& v : split(sw_r, ','))
                rs.push_back(std::stod(v));
            const auto rows = sweep_r(sw_trace.load(), cfg, rs, sw_seed, sw_model.remaps());
            emit(sweep_csv(rows), sw_out);
        } else if (*an) {
            const auto g = parse_geom(an_geom);
            const auto reports = cost_reports(g, an_attack, an_p, an_pht);
            const auto th = an_attack == "all" ? derive_thresholds(an_r, reports) : ThresholdConfig{};
            if (an_format == "csv") {
                std::cout << "attack,expected_misp,expected_evict,collision_prob,bounds_misp,bounds_evict,notes\n";
                for (const auto& r : reports)
                    std::cout << r.attack << ',' << r.expected_misp << ',' << r.expected_evict << ','
                              << r.collision_prob << ',' << r.bounds_misp << ',' << r.bounds_evict << ",\""
                              << r.notes << "\"\n";
            } else {
                std::printf("geometry I=%llu W=%u T=%u O=%u omega=%u\n", static_cast<unsigned long long>(g.I), g.W,
                            g.T, g.O, g.omega);
                std::printf("%-18s %14s %14s %12s\n", "attack", "misp", "evict", "p_collide");
                for (const auto& r : reports)
                    std::printf("%-18s %14.4g %14.4g %12.4g  %s\n", r.attack.c_str(), r.expected_misp,
                                r.expected_evict, r.collision_prob, r.notes.c_str());
            }
            if (an_attack == "all") {
                const char* pre = an_format == "csv" ? "# " : "";
                const auto pub = published_thresholds(an_r);
                std::printf("%sderived   r=%g misp_threshold=%llu evict_threshold=%llu\n", pre, an_r,
                            static_cast<unsigned long long>(th.misp), static_cast<unsigned long long>(th.evict));
                std::printf("%spublished r=%g misp_threshold=%llu evict_threshold=%llu\n", pre, an_r,
                            static_cast<unsigned long long>(pub.misp), static_cast<unsigned long long>(pub.evict));
            }
        } else if (*at) {
            if (at_scenario == "list") {
                for (const auto& n : attack_names())
                    std::cout << n << '\n';
                std::cout << "collision\ngem\n";
                return 0;
            }
            std::ostringstream os;
            os << outcomes_csv_header();
            for (const auto& mname : split(at_models, ',')) {
                const Model m = parse_model(mname);
                const auto cfg = at_geom == "scaled" ? scaled_config(m) : default_config(m);
                ThresholdConfig th = is_st_model(m) ? thresholds_for(cfg, at_r) : ThresholdConfig{};
                if (at_misp)
                    th.misp = *at_misp;
                if (at_evict)
                    th.evict = *at_evict;
                for (std::size_t seed = 1; seed <= at_seeds; ++seed) {
                    AttackOutcome o;
                    if (at_scenario == "collision") {
                        const auto cs = collision_trials(cfg, at_trials, seed);
                        o.rate = cs.frequency;
                        o.wall_trials = cs.trials;
                        o.success = cs.hits > 0;
                    } else if (at_scenario == "gem") {
                        o = gem_find_eviction_sets(cfg, th, 0.25, seed).outcome;
                    } else {
                        AttackScenario s = parse_attack_name(at_scenario);
                        s.config = cfg;
                        s.thresholds = th;
                        s.trials = at_trials;
                        s.search_budget = at_budget;
                        s.seed = seed;
                        o = run_scenario(s);
                    }
                    os << outcome_csv_row(at_scenario, mname, seed, o);
                }
            }
            emit(os.str(), at_out);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stbpu: %s\n", e.what());
        return 1;
    }
    return 0;
}
