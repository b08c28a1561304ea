#include "stbpu/sim.hpp"

#include "parallel.hpp"

#include <json.hpp>

#include <cstdio>
#include <iomanip>
#include <sstream>

namespace stbpu {

ThresholdConfig thresholds_for(const PredictorConfig& cfg, double r)
{
    const PredictorConfig s = scaled_config(cfg.model);
    if (cfg.btb_sets == s.btb_sets && cfg.btb_ways == s.btb_ways && cfg.btb_tag_bits == s.btb_tag_bits &&
        cfg.btb_offset_bits == s.btb_offset_bits)
        return scaled_thresholds(r);
    return published_thresholds(r);
}

namespace {

double ratio(std::uint64_t a, std::uint64_t b) { return b == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(b); }

} // namespace

double SimReport::direction_accuracy() const { return ratio(direction_correct, conditionals); }
double SimReport::target_accuracy() const { return ratio(target_correct, target_required); }
double SimReport::oae() const { return ratio(oae_correct, branches); }

Simulator::Simulator(PredictorConfig cfg, SimOptions opts, std::shared_ptr<const RemapSet> remaps)
    : cfg_(std::move(cfg)), opts_(std::move(opts)), bpu_(cfg_, std::move(remaps))
{
    if (is_st_model(cfg_.model))
        st_.emplace(opts_.thresholds, opts_.seed);
    report_.model = std::string(model_name(cfg_.model));
}

ContextKey Simulator::ensure_context(const BranchRecord& r)
{
    const ContextKey key{r.context_id, r.privilege};
    if (st_->registered(key))
        return key;
    auto it = opts_.share.find(r.context_id);
    if (it != opts_.share.end() && it->second != r.context_id) {
        const ContextKey owner{it->second, r.privilege};
        if (!st_->registered(owner))
            st_->assign_token(owner);
        st_->assign_token(key, owner);
    } else {
        st_->assign_token(key);
    }
    return key;
}

SecretToken Simulator::context_token(std::uint32_t ctx, Privilege p)
{
    if (!st_)
        return {};
    BranchRecord r;
    r.context_id = ctx;
    r.privilege = p;
    return st_->token(ensure_context(r));
}

void Simulator::hooks(const BranchRecord& r)
{
    auto it = last_.find(r.thread_id);
    if (it == last_.end())
        return;
    const BranchRecord& prev = it->second;
    bool flush = false;
    if (cfg_.model == Model::flush_ibpb && prev.context_id != r.context_id)
        flush = true;
    if (cfg_.model == Model::flush_ibrs && prev.privilege == Privilege::user && r.privilege == Privilege::kernel)
        flush = true;
    if (flush) {
        bpu_.flush();
        ++report_.flushes;
    }
}

StepResult Simulator::step(const BranchRecord& r)
{
    hooks(r);
    last_[r.thread_id] = r;

    SecretToken tok;
    ContextKey key{r.context_id, r.privilege};
    if (st_) {
        key = ensure_context(r);
        if (st_->active(r.thread_id) != key)
            st_->activate(r.thread_id, key);
        tok = st_->token(key);
    }

    StepResult out;
    out.prediction = bpu_.predict(r, tok);
    bpu_.update(r, out.prediction, tok, out.events);
    out.correct = prediction_correct(r, out.prediction);

    auto& cs = report_.contexts[key];
    ++report_.branches;
    ++cs.branches;
    if (out.correct) {
        ++report_.oae_correct;
        ++cs.oae_correct;
    }
    if (r.branch_type == BranchType::conditional) {
        ++report_.conditionals;
        if (out.prediction.direction == r.taken)
            ++report_.direction_correct;
    }
    if (r.taken) {
        ++report_.target_required;
        if (out.prediction.target == r.target)
            ++report_.target_correct;
    }

    const std::size_t n = out.events.size();
    for (std::size_t i = 0; i < n; ++i) {
        const BpuEvent e = out.events[i];
        ++report_.events[static_cast<std::size_t>(e.kind)];
        const ContextKey ek{e.context_id, e.privilege};
        auto& ecs = report_.contexts[ek];
        std::optional<CounterKind> kind;
        if (e.kind == EventKind::direction_misp || e.kind == EventKind::target_misp) {
            ++ecs.mispredictions;
            kind = e.tagged_component ? CounterKind::tage : CounterKind::misp;
        } else if (e.kind == EventKind::btb_eviction) {
            ++ecs.evictions;
            kind = CounterKind::evict;
        }
        if (!st_ || !kind)
            continue;
        if (auto notice = st_->on_event(ek, *kind)) {
            ++report_.rerandomizations;
            ++report_.events[static_cast<std::size_t>(EventKind::st_rerandomized)];
            ++ecs.rerandomizations;
            out.events.push_back({EventKind::st_rerandomized, e.context_id, e.privilege, e.thread_id, false});
        }
    }
    return out;
}

void Simulator::run(const TraceStream& t)
{
    for (const auto& r : t.records)
        step(r);
}

SimReport simulate(const TraceStream& trace, const PredictorConfig& cfg, const SimOptions& opts,
                   std::shared_ptr<const RemapSet> remaps)
{
    if (trace.empty())
        throw std::invalid_argument("empty trace");
    Simulator sim(cfg, opts, std::move(remaps));
    sim.run(trace);
    SimReport rep = sim.report();
    rep.trace = trace.source;
    return rep;
}

std::vector<SimReport> compare_models(const TraceStream& trace, const std::vector<PredictorConfig>& configs,
                                      const SimOptions& opts, std::shared_ptr<const RemapSet> remaps)
{
    if (configs.size() < 2)
        throw std::invalid_argument("need >= 2 models");
    std::vector<SimReport> out(configs.size());
    detail::parallel_chunks(configs.size(), [&](std::size_t i) { out[i] = simulate(trace, configs[i], opts, remaps); });
    return out;
}

std::vector<SweepRow> sweep_r(const TraceStream& trace, const PredictorConfig& cfg, const std::vector<double>& r_values,
                              std::uint64_t seed, std::shared_ptr<const RemapSet> remaps)
{
    if (!is_st_model(cfg.model))
        throw std::invalid_argument("sweep_r needs an ST model, got " + std::string(model_name(cfg.model)));
    for (double r : r_values)
        if (!(r > 0))
            throw std::invalid_argument("r must be positive");
    std::vector<SweepRow> rows(r_values.size());
    detail::parallel_chunks(r_values.size(), [&](std::size_t i) {
        SimOptions o;
        o.seed = seed;
        o.thresholds = thresholds_for(cfg, r_values[i]);
        const auto rep = simulate(trace, cfg, o, remaps);
        rows[i] = {r_values[i], o.thresholds, rep.oae(), rep.rerandomizations, rep.branches};
    });
    return rows;
}

namespace {

std::string fmt(double v, int prec = 6)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

const SimReport* baseline_of(const std::vector<SimReport>& reports)
{
    for (const auto& r : reports)
        if (r.model == "baseline")
            return &r;
    return reports.empty() ? nullptr : &reports.front();
}

} // namespace

std::string reports_csv(const std::vector<SimReport>& reports, bool with_delta)
{
    std::ostringstream os;
    os << "model,trace,branches,direction_accuracy,target_accuracy,oae";
    for (std::size_t k = 0; k < kEventKinds; ++k)
        os << ',' << event_name(static_cast<EventKind>(k));
    os << ",flushes,rerandomizations";
    if (with_delta)
        os << ",oae_delta";
    os << '\n';
    const SimReport* base = baseline_of(reports);
    for (const auto& r : reports) {
        os << r.model << ',' << r.trace << ',' << r.branches << ',' << fmt(r.direction_accuracy()) << ','
           << fmt(r.target_accuracy()) << ',' << fmt(r.oae());
        for (auto e : r.events)
            os << ',' << e;
        os << ',' << r.flushes << ',' << r.rerandomizations;
        if (with_delta)
            os << ',' << fmt(r.oae() - base->oae());
        os << '\n';
    }
    return os.str();
}

std::string reports_text(const std::vector<SimReport>& reports, bool with_delta)
{
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %10s %8s %8s %8s %10s %10s %8s%s\n", "model", "branches", "dir", "tgt",
                  "oae", "misp", "evict", "rerand", with_delta ? "  d_oae" : "");
    os << line;
    const SimReport* base = baseline_of(reports);
    for (const auto& r : reports) {
        const auto misp = r.events[0] + r.events[1];
        std::snprintf(line, sizeof line, "%-16s %10llu %8.4f %8.4f %8.4f %10llu %10llu %8llu", r.model.c_str(),
                      static_cast<unsigned long long>(r.branches), r.direction_accuracy(), r.target_accuracy(), r.oae(),
                      static_cast<unsigned long long>(misp), static_cast<unsigned long long>(r.events[2]),
                      static_cast<unsigned long long>(r.rerandomizations));
        os << line;
        if (with_delta) {
            std::snprintf(line, sizeof line, " %+8.4f", r.oae() - base->oae());
            os << line;
        }
        os << '\n';
    }
    return os.str();
}

std::string reports_jsonl(const std::vector<SimReport>& reports)
{
    std::ostringstream os;
    for (const auto& r : reports) {
        nlohmann::json j;
        j["model"] = r.model;
        j["trace"] = r.trace;
        j["branches"] = r.branches;
        j["direction_accuracy"] = r.direction_accuracy();
        j["target_accuracy"] = r.target_accuracy();
        j["oae"] = r.oae();
        j["flushes"] = r.flushes;
        j["rerandomizations"] = r.rerandomizations;
        for (std::size_t k = 0; k < kEventKinds; ++k)
            j["events"][std::string(event_name(static_cast<EventKind>(k)))] = r.events[k];
        for (const auto& [key, cs] : r.contexts)
            j["contexts"][to_string(key)] = {{"branches", cs.branches},
                                             {"oae", ratio(cs.oae_correct, cs.branches)},
                                             {"mispredictions", cs.mispredictions},
                                             {"evictions", cs.evictions},
                                             {"rerandomizations", cs.rerandomizations}};
        os << j.dump() << '\n';
    }
    return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows)
{
    std::ostringstream os;
    os << "r,misp_threshold,evict_threshold,oae,rerandomizations,branches\n";
    for (const auto& r : rows)
        os << r.r << ',' << r.thresholds.misp << ',' << r.thresholds.evict << ',' << fmt(r.oae) << ','
           << r.rerandomizations << ',' << r.branches << '\n';
    return os.str();
}

} // namespace stbpu
