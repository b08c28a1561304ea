#include "stbpu/trace.hpp"

#include "stbpu/bits.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace stbpu {

char type_tag(BranchType t)
{
    switch (t) {
    case BranchType::conditional: return 'c';
    case BranchType::direct_jump: return 'j';
    case BranchType::indirect_jump: return 'J';
    case BranchType::indirect_call: return 'C';
    case BranchType::direct_call: return 'l';
    case BranchType::return_: return 'r';
    }
    return '?';
}

std::string_view type_name(BranchType t)
{
    switch (t) {
    case BranchType::conditional: return "conditional";
    case BranchType::direct_jump: return "direct_jump";
    case BranchType::indirect_jump: return "indirect_jump";
    case BranchType::indirect_call: return "indirect_call";
    case BranchType::direct_call: return "direct_call";
    case BranchType::return_: return "return";
    }
    return "?";
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
            ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r')
            ++j;
        if (j > i)
            out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

std::uint32_t parse_uint(std::string_view s, std::size_t line, const char* field)
{
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw TraceParseError(line, std::string("bad ") + field + " '" + std::string(s) + "'");
    return v;
}

std::uint64_t parse_addr(std::string_view s, std::size_t line)
{
    if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X'))
        throw TraceParseError(line, "address '" + std::string(s) + "' is not 0x-prefixed hex");
    s.remove_prefix(2);
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec == std::errc::result_out_of_range)
        throw TraceParseError(line, "address exceeds 48 bits");
    if (ec != std::errc() || p != s.data() + s.size())
        throw TraceParseError(line, "non-hex address '0x" + std::string(s) + "'");
    if (v > kAddrMask48)
        throw TraceParseError(line, "address exceeds 48 bits");
    return v;
}

BranchType parse_type(std::string_view s, std::size_t line)
{
    if (s.size() == 1) {
        switch (s[0]) {
        case 'c': return BranchType::conditional;
        case 'j': return BranchType::direct_jump;
        case 'J': return BranchType::indirect_jump;
        case 'C': return BranchType::indirect_call;
        case 'l': return BranchType::direct_call;
        case 'r': return BranchType::return_;
        default: break;
        }
    }
    throw TraceParseError(line, "unknown type tag '" + std::string(s) + "'");
}

} // namespace

TraceStream parse_trace(std::string_view text)
{
    TraceStream out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos)
            nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;

        auto fields = split_ws(line);
        if (fields.empty() || fields[0].front() == '#')
            continue;
        if (fields.size() != 7)
            throw TraceParseError(line_no, "expected 7 fields, got " + std::to_string(fields.size()));

        BranchRecord r;
        r.thread_id = parse_uint(fields[0], line_no, "thread");
        r.context_id = parse_uint(fields[1], line_no, "context");
        if (fields[2] == "u")
            r.privilege = Privilege::user;
        else if (fields[2] == "k")
            r.privilege = Privilege::kernel;
        else
            throw TraceParseError(line_no, "privilege must be u or k");
        r.branch_type = parse_type(fields[3], line_no);
        r.pc = parse_addr(fields[4], line_no);
        if (fields[5] == "1")
            r.taken = true;
        else if (fields[5] != "0")
            throw TraceParseError(line_no, "taken must be 0 or 1");
        r.target = parse_addr(fields[6], line_no);
        out.records.push_back(r);
    }
    return out;
}

std::string serialize_trace(const TraceStream& stream)
{
    std::ostringstream os;
    if (!stream.source.empty())
        os << "# " << stream.source << '\n';
    os << std::hex;
    for (const auto& r : stream.records) {
        os << std::dec << r.thread_id << ' ' << r.context_id << ' '
           << (r.privilege == Privilege::kernel ? 'k' : 'u') << ' ' << type_tag(r.branch_type) << " 0x"
           << std::hex << r.pc << ' ' << (r.taken ? '1' : '0') << " 0x" << r.target << '\n';
    }
    return os.str();
}

TraceStream load_trace_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open trace file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    TraceStream t = parse_trace(ss.str());
    t.source = path;
    return t;
}

void save_trace_file(const TraceStream& stream, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write trace file " + path);
    out << serialize_trace(stream);
}

Scenario parse_scenario(std::string_view name)
{
    if (name == "loop") return Scenario::loop;
    if (name == "alternating") return Scenario::alternating;
    if (name == "context_switch_heavy") return Scenario::context_switch_heavy;
    if (name == "gadget_victim") return Scenario::gadget_victim;
    if (name == "smt_pair") return Scenario::smt_pair;
    throw std::invalid_argument("unknown scenario '" + std::string(name) + "'");
}

std::string_view scenario_name(Scenario s)
{
    switch (s) {
    case Scenario::loop: return "loop";
    case Scenario::alternating: return "alternating";
    case Scenario::context_switch_heavy: return "context_switch_heavy";
    case Scenario::gadget_victim: return "gadget_victim";
    case Scenario::smt_pair: return "smt_pair";
    }
    return "?";
}

namespace {

class ParamReader {
public:
    ParamReader(const ScenarioParams& p, std::set<std::string> allowed) : params_(p)
    {
        for (const auto& [k, v] : p)
            if (!allowed.count(k))
                throw std::invalid_argument("unknown scenario parameter '" + k + "'");
    }

    std::uint64_t u64(const std::string& key, std::uint64_t def, std::uint64_t min = 1) const
    {
        auto it = params_.find(key);
        if (it == params_.end())
            return def;
        std::uint64_t v = 0;
        const auto& s = it->second;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
            throw std::invalid_argument("parameter " + key + " is not an integer");
        if (v < min)
            throw std::invalid_argument("parameter " + key + " must be >= " + std::to_string(min));
        return v;
    }

    std::string str(const std::string& key, const std::string& def) const
    {
        auto it = params_.find(key);
        return it == params_.end() ? def : it->second;
    }

private:
    const ScenarioParams& params_;
};

// A randomly shaped program: functions with branch sites whose behaviour mixes
// biased, periodic, loop-like and history-correlated conditionals with
// direct/indirect calls, jumps and returns.
class SyntheticProgram {
public:
    SyntheticProgram(std::uint64_t seed, unsigned functions, unsigned sites, std::uint64_t base)
        : rng_(seed)
    {
        funcs_.resize(functions);
        for (unsigned f = 0; f < functions; ++f) {
            auto& fn = funcs_[f];
            fn.entry = base + std::uint64_t{f} * 0x1000 + 0x10 * rng_.below(16);
            fn.sites.resize(sites);
            for (unsigned k = 0; k < sites; ++k)
                fn.sites[k] = make_site(f, k, functions, fn.entry);
            fn.ret_pc = fn.entry + 0x20 * (sites + 1);
        }
        driver_pc_ = base - 0x100;
    }

    void run(std::vector<BranchRecord>& out, std::size_t total, std::uint32_t thread, std::uint32_t ctx,
             Privilege priv)
    {
        proto_.thread_id = thread;
        proto_.context_id = ctx;
        proto_.privilege = priv;
        while (out.size() < total) {
            emit(out, BranchType::direct_call, driver_pc_, true, funcs_[0].entry);
            exec_function(out, total, 0, driver_pc_ + kInstrBytes, 0);
            emit(out, BranchType::conditional, driver_pc_ + 0x10, true, driver_pc_);
        }
        out.resize(total);
    }

private:
    enum class Behaviour { always, never, biased_taken, biased_not, periodic, loop, correlated };

    struct Site {
        BranchType type = BranchType::conditional;
        std::uint64_t pc = 0;
        Behaviour beh = Behaviour::always;
        double p = 0.5;
        std::vector<bool> pattern;
        std::size_t phase = 0;
        std::vector<std::uint64_t> targets; // indirect targets or callee indexes
        bool flip = false;
    };

    struct Function {
        std::uint64_t entry = 0;
        std::uint64_t ret_pc = 0;
        std::vector<Site> sites;
    };

    Site make_site(unsigned f, unsigned k, unsigned functions, std::uint64_t entry)
    {
        Site s;
        s.pc = entry + 0x20 * (k + 1) + 4 * rng_.below(4);
        const bool can_call = f + 1 < functions;
        const double u = rng_.uniform();
        if (u < 0.66 || (!can_call && u >= 0.79)) {
            s.type = BranchType::conditional;
            const double b = rng_.uniform();
            if (b < 0.15) {
                s.beh = Behaviour::always;
            } else if (b < 0.30) {
                s.beh = Behaviour::never;
            } else if (b < 0.50) {
                s.beh = Behaviour::biased_taken;
                s.p = 0.9 + 0.09 * rng_.uniform();
            } else if (b < 0.60) {
                s.beh = Behaviour::biased_not;
                s.p = 0.02 + 0.08 * rng_.uniform();
            } else if (b < 0.78) {
                s.beh = Behaviour::periodic;
                s.pattern.resize(2 + rng_.below(5));
                for (std::size_t i = 0; i < s.pattern.size(); ++i)
                    s.pattern[i] = rng_.below(2);
            } else if (b < 0.93) {
                s.beh = Behaviour::loop;
                s.pattern.assign(3 + rng_.below(8), true);
                s.pattern.back() = false;
            } else {
                s.beh = Behaviour::correlated;
                s.flip = rng_.below(2);
            }
        } else if (u < 0.72) {
            s.type = BranchType::direct_jump;
        } else if (u < 0.76) {
            s.type = BranchType::indirect_jump;
            const std::size_t m = 1 + rng_.below(3);
            for (std::size_t i = 0; i < m; ++i)
                s.targets.push_back(entry + 0x800 + 0x40 * rng_.below(16));
        } else if (u < 0.93) {
            s.type = BranchType::direct_call;
            s.targets.push_back(f + 1 + rng_.below(std::min<unsigned>(3, functions - f - 1)));
        } else {
            s.type = BranchType::indirect_call;
            const unsigned span = std::min<unsigned>(4, functions - f - 1);
            s.targets.push_back(f + 1 + rng_.below(span));
            s.targets.push_back(f + 1 + rng_.below(span));
        }
        return s;
    }

    void emit(std::vector<BranchRecord>& out, BranchType t, std::uint64_t pc, bool taken, std::uint64_t target)
    {
        BranchRecord r = proto_;
        r.branch_type = t;
        r.pc = pc & kAddrMask48;
        r.taken = taken;
        r.target = (taken ? target : pc + kInstrBytes) & kAddrMask48;
        out.push_back(r);
    }

    bool outcome(Site& s)
    {
        switch (s.beh) {
        case Behaviour::always: return true;
        case Behaviour::never: return false;
        case Behaviour::biased_taken:
        case Behaviour::biased_not: return rng_.chance(s.p);
        case Behaviour::periodic:
        case Behaviour::loop: {
            bool t = s.pattern[s.phase];
            s.phase = (s.phase + 1) % s.pattern.size();
            return t;
        }
        case Behaviour::correlated: return last_cond_ != s.flip;
        }
        return false;
    }

    void exec_function(std::vector<BranchRecord>& out, std::size_t total, unsigned f, std::uint64_t ret_addr,
                       unsigned depth)
    {
        auto& fn = funcs_[f];
        for (auto& s : fn.sites) {
            if (out.size() >= total)
                return;
            switch (s.type) {
            case BranchType::conditional: {
                bool t = outcome(s);
                last_cond_ = t;
                history_ = (history_ << 1) | (t ? 1 : 0);
                emit(out, s.type, s.pc, t, s.pc + 0x40);
                break;
            }
            case BranchType::direct_jump: emit(out, s.type, s.pc, true, s.pc + 0x80); break;
            case BranchType::indirect_jump: {
                const auto pick = (history_ & 3) % s.targets.size();
                emit(out, s.type, s.pc, true, s.targets[pick]);
                break;
            }
            case BranchType::direct_call:
            case BranchType::indirect_call: {
                unsigned callee = static_cast<unsigned>(
                    s.type == BranchType::direct_call ? s.targets[0] : s.targets[s.phase++ % s.targets.size()]);
                if (depth >= 5)
                    break;
                emit(out, s.type, s.pc, true, funcs_[callee].entry);
                exec_function(out, total, callee, s.pc + kInstrBytes, depth + 1);
                break;
            }
            default: break;
            }
        }
        if (out.size() < total)
            emit(out, BranchType::return_, fn.ret_pc, true, ret_addr);
    }

    Rng rng_;
    std::vector<Function> funcs_;
    std::uint64_t driver_pc_ = 0;
    BranchRecord proto_;
    bool last_cond_ = false;
    std::uint64_t history_ = 0;
};

constexpr std::uint64_t kUserBase = 0x400000;
constexpr std::uint64_t kKernelBase = 0xffff81000000ULL;

std::vector<BranchRecord> program_stream(std::uint64_t seed, unsigned sites, std::size_t n, std::uint32_t thread,
                                         std::uint32_t ctx, Privilege priv)
{
    const std::uint64_t base = priv == Privilege::kernel ? kKernelBase : kUserBase;
    SyntheticProgram prog(seed, 24, sites, base);
    std::vector<BranchRecord> out;
    out.reserve(n);
    prog.run(out, n, thread, ctx, priv);
    return out;
}

TraceStream synth_loop(const ParamReader& p)
{
    const auto n = p.u64("n", 7);
    const auto reps = p.u64("reps", 100);
    constexpr std::uint64_t pc = 0x400100;
    TraceStream t;
    for (std::uint64_t r = 0; r < reps; ++r) {
        for (std::uint64_t i = 0; i <= n; ++i) {
            const bool taken = i < n;
            t.records.push_back({0, 0, Privilege::user, BranchType::conditional, pc, taken,
                                 taken ? pc - 0x40 : pc + kInstrBytes});
        }
    }
    return t;
}

TraceStream synth_alternating(const ParamReader& p)
{
    const auto total = p.u64("total", 1000);
    constexpr std::uint64_t pc = 0x400200;
    TraceStream t;
    for (std::uint64_t i = 0; i < total; ++i) {
        const bool taken = (i % 2) == 0;
        t.records.push_back({0, 0, Privilege::user, BranchType::conditional, pc, taken,
                             taken ? pc + 0x40 : pc + kInstrBytes});
    }
    return t;
}

TraceStream synth_context_switch(const ParamReader& p, std::uint64_t seed)
{
    const auto k = p.u64("k", 2);
    const auto s = p.u64("s", 100);
    const auto total = p.u64("total", 10000);
    const auto sites = static_cast<unsigned>(p.u64("sites", 12));
    const auto kernel_every = p.u64("kernel_every", 0, 0);
    const auto kernel_len = p.u64("kernel_len", 24);

    std::vector<std::vector<BranchRecord>> user(k);
    const std::size_t per_ctx = total / k + s + 1;
    for (std::uint64_t c = 0; c < k; ++c)
        user[c] = program_stream(mix_seed(seed, c), sites, per_ctx, 0, static_cast<std::uint32_t>(c + 1),
                                 Privilege::user);
    std::vector<BranchRecord> kernel;
    if (kernel_every > 0)
        kernel = program_stream(mix_seed(seed, 1000), sites, total, 0, 0, Privilege::kernel);

    TraceStream t;
    t.records.reserve(total);
    std::vector<std::size_t> cursor(k, 0);
    std::size_t kcur = 0;
    std::uint64_t since_kernel = 0;
    for (std::uint64_t turn = 0; t.records.size() < total; ++turn) {
        const auto c = turn % k;
        for (std::uint64_t i = 0; i < s && t.records.size() < total; ++i) {
            t.records.push_back(user[c][cursor[c]++]);
            if (kernel_every > 0 && ++since_kernel == kernel_every) {
                since_kernel = 0;
                for (std::uint64_t j = 0; j < kernel_len && t.records.size() < total; ++j) {
                    BranchRecord r = kernel[kcur++ % kernel.size()];
                    r.context_id = static_cast<std::uint32_t>(c + 1);
                    t.records.push_back(r);
                }
            }
        }
    }
    return t;
}

TraceStream synth_gadget_victim(const ParamReader& p, std::uint64_t seed)
{
    const auto total = p.u64("total", 2000);
    const auto chunk = p.u64("chunk", 8);
    Rng rng(seed);
    constexpr std::uint64_t victim_cond = 0x401040;
    constexpr std::uint64_t victim_ind = 0x401080;
    constexpr std::uint64_t victim_target = 0x402000;
    TraceStream t;
    bool victim_turn = true;
    while (t.records.size() < total) {
        if (victim_turn) {
            const bool secret = rng.below(2);
            t.records.push_back({0, 2, Privilege::user, BranchType::conditional, victim_cond, secret,
                                 secret ? victim_cond + 0x20 : victim_cond + kInstrBytes});
            t.records.push_back(
                {0, 2, Privilege::user, BranchType::indirect_jump, victim_ind, true, victim_target});
        } else {
            for (std::uint64_t i = 0; i < chunk; ++i) {
                const std::uint64_t pc = (0x7f0000000000ULL | (rng.next() & 0xFFFFFFFFFULL)) & ~3ULL;
                t.records.push_back({0, 1, Privilege::user, BranchType::direct_jump, pc, true, pc + 0x100});
            }
        }
        victim_turn = !victim_turn;
    }
    t.records.resize(total);
    return t;
}

TraceStream synth_smt_pair(const ParamReader& p, std::uint64_t seed)
{
    const auto total = p.u64("total", 10000);
    const auto sites = static_cast<unsigned>(p.u64("sites", 12));
    const std::string sched = p.str("schedule", "1:1");
    const auto colon = sched.find(':');
    if (colon == std::string::npos)
        throw std::invalid_argument("schedule must be a:b");
    const std::uint64_t a = std::stoull(sched.substr(0, colon));
    const std::uint64_t b = std::stoull(sched.substr(colon + 1));
    if (a == 0 || b == 0)
        throw std::invalid_argument("schedule entries must be > 0");

    auto t0 = program_stream(mix_seed(seed, 0), sites, total, 0, 1, Privilege::user);
    auto t1 = program_stream(mix_seed(seed, 1), sites, total, 1, 2, Privilege::user);
    TraceStream t;
    std::size_t i0 = 0, i1 = 0;
    while (t.records.size() < total) {
        for (std::uint64_t i = 0; i < a && t.records.size() < total; ++i)
            t.records.push_back(t0[i0++]);
        for (std::uint64_t i = 0; i < b && t.records.size() < total; ++i)
            t.records.push_back(t1[i1++]);
    }
    return t;
}

} // namespace

TraceStream synth_trace(Scenario scenario, const ScenarioParams& params, std::uint64_t seed)
{
    TraceStream t;
    switch (scenario) {
    case Scenario::loop: t = synth_loop(ParamReader(params, {"n", "reps"})); break;
    case Scenario::alternating: t = synth_alternating(ParamReader(params, {"total"})); break;
    case Scenario::context_switch_heavy:
        t = synth_context_switch(ParamReader(params, {"k", "s", "total", "sites", "kernel_every", "kernel_len"}),
                                 seed);
        break;
    case Scenario::gadget_victim: t = synth_gadget_victim(ParamReader(params, {"total", "chunk"}), seed); break;
    case Scenario::smt_pair: t = synth_smt_pair(ParamReader(params, {"total", "schedule", "sites"}), seed); break;
    }
    std::ostringstream src;
    src << "synth " << scenario_name(scenario) << " seed=" << seed;
    for (const auto& [k, v] : params)
        src << ' ' << k << '=' << v;
    t.source = src.str();
    return t;
}

std::vector<NamedTrace> synthetic_suite(std::size_t scale)
{
    const auto n = [scale](std::uint64_t v) { return std::to_string(v * scale); };
    std::vector<NamedTrace> suite;
    suite.push_back({"loop", synth_trace(Scenario::loop, {{"n", "7"}, {"reps", n(2000)}}, 1)});
    suite.push_back({"alternating", synth_trace(Scenario::alternating, {{"total", n(10000)}}, 1)});
    suite.push_back({"program", synth_trace(Scenario::context_switch_heavy,
                                            {{"k", "1"}, {"s", "1000"}, {"total", n(60000)}}, 11)});
    suite.push_back({"context_switch_heavy",
                     synth_trace(Scenario::context_switch_heavy, {{"k", "2"}, {"s", "100"}, {"total", n(60000)}}, 5)});
    suite.push_back({"syscall_heavy", synth_trace(Scenario::context_switch_heavy,
                                                  {{"k", "2"}, {"s", "500"}, {"total", n(60000)}, {"kernel_every", "150"}},
                                                  7)});
    suite.push_back({"smt_pair", synth_trace(Scenario::smt_pair, {{"total", n(60000)}, {"schedule", "1:1"}}, 3)});
    suite.push_back({"gadget_victim", synth_trace(Scenario::gadget_victim, {{"total", n(20000)}}, 9)});
    return suite;
}

} // namespace stbpu
