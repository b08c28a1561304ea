#include "stbpu/predictor.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#ifndef STBPU_DATA_DIR
#define STBPU_DATA_DIR "data"
#endif

namespace stbpu {

namespace {

const std::vector<std::pair<Model, std::string_view>>& model_names()
{
    static const std::vector<std::pair<Model, std::string_view>> names = {
        {Model::baseline, "baseline"},
        {Model::stbpu, "stbpu"},
        {Model::flush_ibpb, "flush_ibpb"},
        {Model::flush_ibrs, "flush_ibrs"},
        {Model::partition_stibp, "partition_stibp"},
        {Model::conservative, "conservative"},
        {Model::tage_lite, "tage_lite"},
        {Model::st_tage_lite, "st_tage_lite"},
        {Model::perceptron, "perceptron"},
        {Model::st_perceptron, "st_perceptron"},
    };
    return names;
}

} // namespace

Model parse_model(std::string_view name)
{
    for (const auto& [m, n] : model_names())
        if (n == name)
            return m;
    throw ConfigError("unknown model '" + std::string(name) + "'");
}

std::string_view model_name(Model m)
{
    for (const auto& [mm, n] : model_names())
        if (mm == m)
            return n;
    return "?";
}

const std::vector<Model>& all_models()
{
    static const std::vector<Model> models = [] {
        std::vector<Model> v;
        for (const auto& [m, n] : model_names())
            v.push_back(m);
        return v;
    }();
    return models;
}

bool is_st_model(Model m) { return m == Model::stbpu || m == Model::st_tage_lite || m == Model::st_perceptron; }

DirectionScheme direction_scheme(Model m)
{
    switch (m) {
    case Model::tage_lite:
    case Model::st_tage_lite: return DirectionScheme::tage;
    case Model::perceptron:
    case Model::st_perceptron: return DirectionScheme::perceptron;
    default: return DirectionScheme::gshare;
    }
}

std::string_view event_name(EventKind k)
{
    switch (k) {
    case EventKind::direction_misp: return "direction_misp";
    case EventKind::target_misp: return "target_misp";
    case EventKind::btb_eviction: return "btb_eviction";
    case EventKind::rsb_underflow: return "rsb_underflow";
    case EventKind::st_rerandomized: return "st_rerandomized";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Configuration

PredictorConfig conservative_geometry(PredictorConfig c)
{
    // Keep the payload bit budget: entries x (tag + offset + target) is
    // spread over entries storing a full 48-bit address plus the target.
    const std::uint64_t budget = std::uint64_t{c.btb_sets} * c.btb_ways *
                                 (c.btb_tag_bits + c.btb_offset_bits + c.btb_target_bits);
    std::uint64_t entries = budget / (48 + c.btb_target_bits);
    std::uint64_t p = 1;
    while (p * 2 <= entries)
        p *= 2;
    entries = std::max<std::uint64_t>(p, c.btb_ways);
    c.btb_sets = static_cast<unsigned>(entries / c.btb_ways);
    return c;
}

PredictorConfig default_config(Model m)
{
    PredictorConfig c;
    c.model = m;
    if (is_st_model(m))
        c.ghr_bits = 16;
    if (m == Model::conservative)
        c = conservative_geometry(c);
    return c;
}

PredictorConfig scaled_config(Model m)
{
    PredictorConfig c;
    c.model = m;
    c.btb_sets = 64;
    c.btb_ways = 4;
    c.btb_tag_bits = 6;
    c.btb_offset_bits = 4;
    c.btb_target_bits = 8;
    if (is_st_model(m))
        c.ghr_bits = 16;
    if (m == Model::conservative)
        c = conservative_geometry(c);
    return c;
}

PredictorConfig identity_config()
{
    PredictorConfig c = default_config(Model::baseline);
    c.model = Model::stbpu;
    c.identity_remap = true;
    return c;
}

void validate(const PredictorConfig& c)
{
    const auto pow2 = [](unsigned v, const char* what) {
        if (!is_pow2(v))
            throw ConfigError(std::string(what) + " must be a power of two");
    };
    pow2(c.btb_sets, "btb_sets");
    pow2(c.pht_entries, "pht_entries");
    pow2(c.tage_bank_entries, "tage_bank_entries");
    pow2(c.perceptron_entries, "perceptron_entries");
    if (c.btb_ways == 0 || c.btb_ways > 64)
        throw ConfigError("btb_ways must be in 1..64");
    if (c.btb_offset_bits > 8 || c.btb_target_bits == 0 || c.btb_target_bits > 32)
        throw ConfigError("btb_offset_bits must be <= 8 and btb_target_bits in 1..32");
    if (c.pht_counter_bits < 1 || c.pht_counter_bits > 7)
        throw ConfigError("pht_counter_bits must be in 1..7");
    if (c.ghr_bits > 64 || c.bhb_bits == 0 || c.bhb_bits > 58)
        throw ConfigError("ghr_bits must be <= 64 and bhb_bits in 1..58");
    if (c.rsb_entries == 0)
        throw ConfigError("rsb_entries must be positive");
    if (c.perceptron_history == 0 || c.perceptron_history > 64)
        throw ConfigError("perceptron_history must be in 1..64");
    for (auto h : c.tage_history)
        if (h == 0 || h > 64)
            throw ConfigError("tage history lengths must be in 1..64");
    if (c.tage_tag_bits == 0 || c.tage_tag_bits > 16)
        throw ConfigError("tage_tag_bits must be in 1..16");
    const unsigned ib = log2_exact(c.btb_sets);
    if (c.model != Model::conservative && c.btb_offset_bits + ib >= 30)
        throw ConfigError("btb index and offset bits leave no tag bits below bit 30");
    if (c.model == Model::partition_stibp && (c.btb_sets < 2 || c.pht_entries < 2))
        throw ConfigError("partitioning needs at least two sets");
    if (c.identity_remap && c.model != Model::stbpu)
        throw ConfigError("identity_remap applies to the stbpu model only");

    if (is_st_model(c.model) && !c.identity_remap) {
        const auto& r1 = role_spec(Role::R1).fields;
        if (ib > r1[0].bits || c.btb_tag_bits > r1[1].bits || c.btb_offset_bits > r1[2].bits)
            throw ConfigError("BTB geometry exceeds the R1 field widths (9 index, 8 tag, 5 offset bits)");
        if (c.btb_tag_bits > role_spec(Role::R2).output_width)
            throw ConfigError("BTB tag exceeds the R2 output width");
        if (log2_exact(c.pht_entries) > role_spec(Role::R3).output_width)
            throw ConfigError("PHT index exceeds the R3/R4 output width");
        if (c.ghr_bits > 16)
            throw ConfigError("ST models take at most 16 GHR bits");
        if (log2_exact(c.tage_bank_entries) > 13 || c.tage_tag_bits > 12)
            throw ConfigError("TAGE geometry exceeds the Rt field widths");
        if (log2_exact(c.perceptron_entries) > role_spec(Role::Rp).output_width)
            throw ConfigError("perceptron table exceeds the Rp output width");
    }
}

namespace {

unsigned to_unsigned(std::string_view key, std::string_view v)
{
    unsigned out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError("setting " + std::string(key) + ": expected a non-negative integer, got '" +
                          std::string(v) + "'");
    return out;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

} // namespace

void apply_setting(PredictorConfig& c, std::string_view key, std::string_view value)
{
    key = trim(key);
    value = trim(value);
    if (key == "model") {
        c.model = parse_model(value);
        return;
    }
    if (key == "preset") {
        if (value == "scaled")
            c = scaled_config(c.model);
        else if (value == "full")
            c = default_config(c.model);
        else
            throw ConfigError("unknown preset '" + std::string(value) + "'");
        return;
    }
    if (key == "identity_remap") {
        c.identity_remap = value == "1" || value == "true";
        return;
    }
    if (key == "tage_history") {
        std::array<unsigned, 4> h{};
        std::size_t i = 0, start = 0;
        for (std::size_t pos = 0; pos <= value.size(); ++pos) {
            if (pos == value.size() || value[pos] == ',') {
                if (i >= 4)
                    throw ConfigError("tage_history takes four lengths");
                h[i++] = to_unsigned(key, trim(value.substr(start, pos - start)));
                start = pos + 1;
            }
        }
        if (i != 4)
            throw ConfigError("tage_history takes four lengths");
        c.tage_history = h;
        return;
    }
    static const std::map<std::string_view, unsigned PredictorConfig::*> fields = {
        {"btb_sets", &PredictorConfig::btb_sets},
        {"btb_ways", &PredictorConfig::btb_ways},
        {"btb_tag_bits", &PredictorConfig::btb_tag_bits},
        {"btb_offset_bits", &PredictorConfig::btb_offset_bits},
        {"btb_target_bits", &PredictorConfig::btb_target_bits},
        {"pht_entries", &PredictorConfig::pht_entries},
        {"pht_counter_bits", &PredictorConfig::pht_counter_bits},
        {"ghr_bits", &PredictorConfig::ghr_bits},
        {"bhb_bits", &PredictorConfig::bhb_bits},
        {"rsb_entries", &PredictorConfig::rsb_entries},
        {"tage_bank_entries", &PredictorConfig::tage_bank_entries},
        {"tage_tag_bits", &PredictorConfig::tage_tag_bits},
        {"perceptron_entries", &PredictorConfig::perceptron_entries},
        {"perceptron_history", &PredictorConfig::perceptron_history},
    };
    auto it = fields.find(key);
    if (it == fields.end())
        throw ConfigError("unknown setting '" + std::string(key) + "'");
    c.*(it->second) = to_unsigned(key, value);
}

PredictorConfig load_config_text(std::string_view text, PredictorConfig base)
{
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        auto line = trim(text.substr(start, end - start));
        ++line_no;
        start = end + 1;
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        try {
            apply_setting(base, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return base;
}

PredictorConfig load_config_file(const std::string& path, PredictorConfig base)
{
    std::ifstream is(path);
    if (!is)
        throw ConfigError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return load_config_text(ss.str(), base);
}

std::string config_text(const PredictorConfig& c)
{
    std::ostringstream os;
    os << "model = " << model_name(c.model) << '\n'
       << "btb_sets = " << c.btb_sets << '\n'
       << "btb_ways = " << c.btb_ways << '\n'
       << "btb_tag_bits = " << c.btb_tag_bits << '\n'
       << "btb_offset_bits = " << c.btb_offset_bits << '\n'
       << "btb_target_bits = " << c.btb_target_bits << '\n'
       << "pht_entries = " << c.pht_entries << '\n'
       << "pht_counter_bits = " << c.pht_counter_bits << '\n'
       << "ghr_bits = " << c.ghr_bits << '\n'
       << "bhb_bits = " << c.bhb_bits << '\n'
       << "rsb_entries = " << c.rsb_entries << '\n'
       << "tage_bank_entries = " << c.tage_bank_entries << '\n'
       << "tage_tag_bits = " << c.tage_tag_bits << '\n'
       << "tage_history = " << c.tage_history[0] << ',' << c.tage_history[1] << ',' << c.tage_history[2] << ','
       << c.tage_history[3] << '\n'
       << "perceptron_entries = " << c.perceptron_entries << '\n'
       << "perceptron_history = " << c.perceptron_history << '\n'
       << "identity_remap = " << (c.identity_remap ? 1 : 0) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Netlists

const LayeredFunction& RemapSet::get(Role r) const
{
    const auto& f = fn[static_cast<std::size_t>(r)];
    if (!f)
        throw ConfigError("missing netlist for " + std::string(role_spec(r).name));
    return *f;
}

bool RemapSet::complete() const
{
    return std::all_of(fn.begin(), fn.end(), [](const auto& f) { return f != nullptr; });
}

RemapSet RemapSet::load_dir(const std::string& dir)
{
    RemapSet s;
    for (auto r : all_roles()) {
        const auto& spec = role_spec(r);
        const auto path = (std::filesystem::path(dir) / (std::string(spec.name) + ".net")).string();
        if (!std::filesystem::exists(path))
            throw ConfigError("missing netlist " + path);
        auto f = load_netlist_file(path);
        if (f.input_width() != spec.input_width || f.output_width() != spec.output_width)
            throw ConfigError("netlist " + path + ": width mismatch for role " + std::string(spec.name));
        s.fn[static_cast<std::size_t>(r)] = std::make_shared<const LayeredFunction>(std::move(f));
    }
    return s;
}

std::string default_netlist_dir()
{
    if (const char* env = std::getenv("STBPU_NETLIST_DIR"))
        return env;
    return std::string(STBPU_DATA_DIR) + "/netlists";
}

std::shared_ptr<const RemapSet> shipped_remaps()
{
    static std::mutex mu;
    static std::shared_ptr<const RemapSet> cached;
    std::lock_guard lock(mu);
    if (!cached)
        cached = std::make_shared<const RemapSet>(RemapSet::load_dir(default_netlist_dir()));
    return cached;
}

// ---------------------------------------------------------------------------
// Prediction helpers

bool prediction_correct(const BranchRecord& r, const Prediction& p)
{
    if (r.branch_type == BranchType::conditional) {
        if (!p.direction || *p.direction != r.taken)
            return false;
        return !r.taken || p.target == r.target;
    }
    return p.target == r.target;
}

namespace {

// Packs (value, width) pieces from bit 0 upwards.
BitVec pack(std::initializer_list<std::pair<std::uint64_t, unsigned>> parts)
{
    std::uint64_t lo = 0, hi = 0;
    unsigned pos = 0;
    for (auto [v, w] : parts) {
        v &= low_mask(w);
        if (pos < 64) {
            lo |= v << pos;
            if (pos + w > 64)
                hi |= v >> (64 - pos);
        } else {
            hi |= v << (pos - 64);
        }
        pos += w;
    }
    return BitVec(pos, lo, hi);
}

std::uint64_t remap(const RemapSet& rs, Role role, const BitVec& in) { return rs.get(role).apply(in).lo(); }

} // namespace

Bpu::Bpu(PredictorConfig cfg, std::shared_ptr<const RemapSet> remaps) : cfg_(std::move(cfg)), remaps_(std::move(remaps))
{
    validate(cfg_);
    if (st_keyed()) {
        if (!remaps_)
            remaps_ = shipped_remaps();
        if (!remaps_->complete())
            throw ConfigError("ST model needs all six netlists");
    }
    index_bits_ = log2_exact(cfg_.btb_sets);
    pht_bits_ = log2_exact(cfg_.pht_entries);
    btb_.resize(std::size_t{cfg_.btb_sets} * cfg_.btb_ways);
    pht_.resize(cfg_.pht_entries);
    if (direction_scheme(cfg_.model) == DirectionScheme::tage)
        for (auto& bank : tage_)
            bank.resize(cfg_.tage_bank_entries);
    if (direction_scheme(cfg_.model) == DirectionScheme::perceptron)
        perceptron_.resize(std::size_t{cfg_.perceptron_entries} * (cfg_.perceptron_history + 1));
    flush();
}

bool Bpu::st_keyed() const { return is_st_model(cfg_.model) && !cfg_.identity_remap; }

void Bpu::flush()
{
    for (std::size_t i = 0; i < btb_.size(); ++i)
        btb_[i] = BtbEntry{false, 0, 0, 0, static_cast<unsigned>(i % cfg_.btb_ways)};
    std::fill(pht_.begin(), pht_.end(), static_cast<std::uint8_t>((1u << (cfg_.pht_counter_bits - 1)) - 1));
    for (auto& bank : tage_)
        std::fill(bank.begin(), bank.end(), TageEntry{});
    std::fill(perceptron_.begin(), perceptron_.end(), 0);
    threads_.clear();
}

Bpu::ThreadState& Bpu::thread(std::uint32_t t)
{
    auto it = threads_.find(t);
    if (it == threads_.end()) {
        ThreadState s;
        s.rsb.assign(cfg_.rsb_entries, 0);
        it = threads_.emplace(t, std::move(s)).first;
    }
    return it->second;
}

const Bpu::ThreadState* Bpu::thread_ptr(std::uint32_t t) const
{
    auto it = threads_.find(t);
    return it == threads_.end() ? nullptr : &it->second;
}

std::uint64_t Bpu::bhb(std::uint32_t t) const
{
    const auto* s = thread_ptr(t);
    return s ? s->bhb : 0;
}

std::uint64_t Bpu::history(std::uint32_t t) const
{
    const auto* s = thread_ptr(t);
    return s ? s->hist : 0;
}

unsigned Bpu::rsb_depth(std::uint32_t t) const
{
    const auto* s = thread_ptr(t);
    return s ? s->rsb_depth : 0;
}

std::size_t Bpu::btb_occupancy() const
{
    return static_cast<std::size_t>(std::count_if(btb_.begin(), btb_.end(), [](const BtbEntry& e) { return e.valid; }));
}

BtbKey Bpu::btb_key(std::uint64_t pc, bool mode_two, std::uint64_t bhb, std::uint32_t thread,
                    const SecretToken& tok) const
{
    pc &= kAddrMask48;
    const unsigned ob = cfg_.btb_offset_bits, tb = cfg_.btb_tag_bits;
    BtbKey k;
    if (st_keyed()) {
        const auto out = remap(*remaps_, Role::R1, pack({{tok.psi, 32}, {pc, 48}}));
        k.set = static_cast<unsigned>(bit_slice(out, 0, index_bits_));
        k.tag = bit_slice(out, 9, tb);
        k.offset = static_cast<std::uint32_t>(bit_slice(out, 17, ob));
        if (mode_two)
            k.tag ^= bit_slice(remap(*remaps_, Role::R2, pack({{tok.psi, 32}, {bhb, 58}})), 0, tb);
        return k;
    }
    k.offset = static_cast<std::uint32_t>(bit_slice(pc, 0, ob));
    k.set = static_cast<unsigned>(bit_slice(pc, ob, index_bits_));
    const unsigned tag_lo = ob + index_bits_;
    if (cfg_.model == Model::conservative) {
        k.tag = pc >> tag_lo;
        if (mode_two)
            k.tag = (k.tag << 9) | (1u << 8) | xor_fold(bhb, cfg_.bhb_bits, 8);
        return k;
    }
    k.tag = xor_fold(pc >> tag_lo, 30 - tag_lo, tb);
    if (mode_two)
        k.tag ^= xor_fold(bhb, cfg_.bhb_bits, tb);
    if (cfg_.model == Model::partition_stibp)
        k.set = ((thread & 1u) << (index_bits_ - 1)) | (k.set & static_cast<unsigned>(low_mask(index_bits_ - 1)));
    return k;
}

std::uint32_t Bpu::pht_index(std::uint64_t pc, std::uint64_t ghr, std::uint32_t thread, const SecretToken& tok) const
{
    pc &= kAddrMask48;
    ghr &= low_mask(cfg_.ghr_bits);
    std::uint64_t idx;
    if (st_keyed()) {
        idx = cfg_.ghr_bits == 0 ? remap(*remaps_, Role::R3, pack({{tok.psi, 32}, {pc, 48}}))
                                 : remap(*remaps_, Role::R4, pack({{tok.psi, 32}, {ghr, 16}, {pc, 48}}));
        return static_cast<std::uint32_t>(idx & low_mask(pht_bits_));
    }
    idx = xor_fold(pc & 0xFFFFFFFFu, 32, pht_bits_);
    if (cfg_.ghr_bits > 0)
        idx ^= xor_fold(ghr, cfg_.ghr_bits, pht_bits_);
    if (cfg_.model == Model::partition_stibp)
        idx = (std::uint64_t{thread & 1u} << (pht_bits_ - 1)) | (idx & low_mask(pht_bits_ - 1));
    return static_cast<std::uint32_t>(idx);
}

std::uint32_t Bpu::base_index(std::uint64_t pc, std::uint32_t, const SecretToken& tok) const
{
    pc &= kAddrMask48;
    if (st_keyed())
        return static_cast<std::uint32_t>(remap(*remaps_, Role::R3, pack({{tok.psi, 32}, {pc, 48}})) &
                                          low_mask(pht_bits_));
    return static_cast<std::uint32_t>(xor_fold(pc & 0xFFFFFFFFu, 32, pht_bits_));
}

std::uint32_t Bpu::tage_index(unsigned bank, std::uint64_t pc, std::uint64_t hist, const SecretToken& tok) const
{
    const unsigned len = cfg_.tage_history[bank];
    const unsigned bits = log2_exact(cfg_.tage_bank_entries);
    if (st_keyed()) {
        const auto out = remap(*remaps_, Role::Rt, pack({{tok.psi, 32}, {pc, 48}, {xor_fold(hist, len, 16), 16}}));
        return static_cast<std::uint32_t>(bit_slice(out, 0, bits));
    }
    const std::uint64_t a = (pc & kAddrMask48) >> 2;
    return static_cast<std::uint32_t>((a ^ (a >> bits) ^ xor_fold(hist, len, bits)) & low_mask(bits));
}

std::uint16_t Bpu::tage_tag(unsigned bank, std::uint64_t pc, std::uint64_t hist, const SecretToken& tok) const
{
    const unsigned len = cfg_.tage_history[bank];
    const unsigned tb = cfg_.tage_tag_bits;
    if (st_keyed()) {
        const auto out = remap(*remaps_, Role::Rt, pack({{tok.psi, 32}, {pc, 48}, {xor_fold(hist, len, 16), 16}}));
        return static_cast<std::uint16_t>(bit_slice(out, 13, tb));
    }
    const std::uint64_t a = (pc & kAddrMask48) >> 2;
    const std::uint64_t h1 = xor_fold(hist, len, tb), h2 = xor_fold(hist, len, tb - 1);
    return static_cast<std::uint16_t>((a ^ h1 ^ (h2 << 1)) & low_mask(tb));
}

std::uint32_t Bpu::perceptron_index(std::uint64_t pc, const SecretToken& tok) const
{
    const unsigned bits = log2_exact(cfg_.perceptron_entries);
    if (st_keyed())
        return static_cast<std::uint32_t>(
            bit_slice(remap(*remaps_, Role::Rp, pack({{tok.psi, 32}, {pc & kAddrMask48, 48}})), 0, bits));
    return static_cast<std::uint32_t>(xor_fold(((pc & kAddrMask48) >> 2) & 0xFFFFFFFFu, 32, bits));
}

std::uint64_t Bpu::encrypt_target(std::uint64_t target, const SecretToken& tok) const
{
    const std::uint64_t m = low_mask(cfg_.btb_target_bits);
    return (target & m) ^ (st_keyed() ? (tok.phi & m) : 0);
}

std::uint64_t Bpu::decrypt_target(std::uint64_t pc, std::uint64_t stored, const SecretToken& tok) const
{
    const std::uint64_t m = low_mask(cfg_.btb_target_bits);
    const std::uint64_t plain = (stored ^ (st_keyed() ? (tok.phi & m) : 0)) & m;
    return ((pc & kAddrMask48) & ~m) | plain;
}

// RSB entries keep 32 bits whatever the BTB target width.
std::uint64_t Bpu::encrypt_return(std::uint64_t target, const SecretToken& tok) const
{
    return (target & kRsbMask) ^ (st_keyed() ? tok.phi : 0);
}

std::uint64_t Bpu::decrypt_return(std::uint64_t pc, std::uint64_t stored, const SecretToken& tok) const
{
    return ((pc & kAddrMask48) & ~kRsbMask) | ((stored ^ (st_keyed() ? tok.phi : 0)) & kRsbMask);
}

std::optional<std::uint64_t> Bpu::btb_lookup(const BtbKey& k, std::uint64_t pc, const SecretToken& tok) const
{
    const std::size_t base = std::size_t{k.set} * cfg_.btb_ways;
    for (unsigned w = 0; w < cfg_.btb_ways; ++w) {
        const auto& e = btb_[base + w];
        if (e.valid && e.tag == k.tag && e.offset == k.offset)
            return decrypt_target(pc, e.stored_target, tok);
    }
    return std::nullopt;
}

void Bpu::touch(unsigned set, unsigned way)
{
    const std::size_t base = std::size_t{set} * cfg_.btb_ways;
    const unsigned rank = btb_[base + way].lru_rank;
    for (unsigned w = 0; w < cfg_.btb_ways; ++w)
        if (btb_[base + w].lru_rank < rank)
            ++btb_[base + w].lru_rank;
    btb_[base + way].lru_rank = 0;
}

void Bpu::btb_insert(const BtbKey& k, std::uint64_t target, const SecretToken& tok, const BranchRecord& r,
                     std::vector<BpuEvent>& events)
{
    const std::size_t base = std::size_t{k.set} * cfg_.btb_ways;
    const std::uint64_t stored = encrypt_target(target, tok);
    for (unsigned w = 0; w < cfg_.btb_ways; ++w) {
        auto& e = btb_[base + w];
        if (e.valid && e.tag == k.tag && e.offset == k.offset) {
            e.stored_target = stored;
            touch(k.set, w);
            ++btb_stats_.insert_hits;
            return;
        }
    }
    ++btb_stats_.insert_misses;
    unsigned victim = cfg_.btb_ways;
    for (unsigned w = 0; w < cfg_.btb_ways && victim == cfg_.btb_ways; ++w)
        if (!btb_[base + w].valid)
            victim = w;
    if (victim == cfg_.btb_ways) {
        for (unsigned w = 0; w < cfg_.btb_ways; ++w)
            if (btb_[base + w].lru_rank == cfg_.btb_ways - 1)
                victim = w;
        ++btb_stats_.evictions;
        events.push_back({EventKind::btb_eviction, r.context_id, r.privilege, r.thread_id, false});
    }
    auto& e = btb_[base + victim];
    e.valid = true;
    e.tag = k.tag;
    e.offset = k.offset;
    e.stored_target = stored;
    touch(k.set, victim);
}

void Bpu::plant(const BtbKey& k, std::uint64_t stored_target)
{
    const std::size_t base = std::size_t{k.set} * cfg_.btb_ways;
    unsigned way = cfg_.btb_ways;
    for (unsigned w = 0; w < cfg_.btb_ways && way == cfg_.btb_ways; ++w)
        if (btb_[base + w].valid && btb_[base + w].tag == k.tag && btb_[base + w].offset == k.offset)
            way = w;
    for (unsigned w = 0; w < cfg_.btb_ways && way == cfg_.btb_ways; ++w)
        if (btb_[base + w].lru_rank == cfg_.btb_ways - 1)
            way = w;
    auto& e = btb_[base + way];
    e = {true, k.tag, k.offset, stored_target & low_mask(cfg_.btb_target_bits), e.lru_rank};
    touch(k.set, way);
}

void Bpu::train_counter(std::uint8_t& c, bool taken, unsigned bits) const
{
    const unsigned max = (1u << bits) - 1;
    if (taken && c < max)
        ++c;
    else if (!taken && c > 0)
        --c;
}

void Bpu::predict_direction(const BranchRecord& r, const SecretToken& tok, Prediction& p) const
{
    const std::uint64_t hist = history(r.thread_id);
    switch (direction_scheme(cfg_.model)) {
    case DirectionScheme::gshare:
        p.direction = counter_taken(pht_[pht_index(r.pc, hist, r.thread_id, tok)]);
        p.direction_source = DirectionSource::pht;
        break;
    case DirectionScheme::tage: {
        const bool base = counter_taken(pht_[base_index(r.pc, r.thread_id, tok)]);
        int provider = -1, alt = -1;
        for (int b = 3; b >= 0; --b) {
            const auto& e = tage_[b][tage_index(b, r.pc, hist, tok)];
            if (e.tag == tage_tag(b, r.pc, hist, tok)) {
                if (provider < 0)
                    provider = b;
                else if (alt < 0)
                    alt = b;
            }
        }
        p.tage_provider = provider;
        p.tage_alt = alt;
        p.alt_direction = alt >= 0 ? tage_[alt][tage_index(alt, r.pc, hist, tok)].ctr >= 4 : base;
        if (provider >= 0) {
            p.direction = tage_[provider][tage_index(provider, r.pc, hist, tok)].ctr >= 4;
            p.direction_source = DirectionSource::tage_bank;
        } else {
            p.direction = base;
            p.direction_source = DirectionSource::tage_base;
        }
        break;
    }
    case DirectionScheme::perceptron: {
        const unsigned h = cfg_.perceptron_history;
        const std::int16_t* w = &perceptron_[std::size_t{perceptron_index(r.pc, tok)} * (h + 1)];
        int y = w[0];
        for (unsigned i = 0; i < h; ++i)
            y += ((hist >> i) & 1) ? w[i + 1] : -w[i + 1];
        p.perceptron_sum = y;
        p.direction = y >= 0;
        p.direction_source = DirectionSource::perceptron;
        break;
    }
    }
}

void Bpu::update_direction(const BranchRecord& r, const Prediction& p, const SecretToken& tok)
{
    const std::uint64_t hist = history(r.thread_id);
    const bool taken = r.taken;
    switch (direction_scheme(cfg_.model)) {
    case DirectionScheme::gshare:
        train_counter(pht_[pht_index(r.pc, hist, r.thread_id, tok)], taken, cfg_.pht_counter_bits);
        break;
    case DirectionScheme::tage: {
        const int provider = p.tage_provider;
        if (provider >= 0) {
            auto& e = tage_[provider][tage_index(provider, r.pc, hist, tok)];
            const bool pred = e.ctr >= 4;
            if (pred != p.alt_direction) {
                if (pred == taken && e.u < 3)
                    ++e.u;
                else if (pred != taken && e.u > 0)
                    --e.u;
            }
            train_counter(e.ctr, taken, 3);
        } else {
            train_counter(pht_[base_index(r.pc, r.thread_id, tok)], taken, cfg_.pht_counter_bits);
        }
        if (p.direction != taken && provider < 3) {
            int slot = -1;
            for (int b = provider + 1; b < 4 && slot < 0; ++b)
                if (tage_[b][tage_index(b, r.pc, hist, tok)].u == 0)
                    slot = b;
            if (slot >= 0) {
                auto& e = tage_[slot][tage_index(slot, r.pc, hist, tok)];
                e.tag = tage_tag(slot, r.pc, hist, tok);
                e.ctr = taken ? 4 : 3;
                e.u = 0;
            } else {
                for (int b = provider + 1; b < 4; ++b) {
                    auto& e = tage_[b][tage_index(b, r.pc, hist, tok)];
                    if (e.u > 0)
                        --e.u;
                }
            }
        }
        break;
    }
    case DirectionScheme::perceptron: {
        const unsigned h = cfg_.perceptron_history;
        const int theta = static_cast<int>(1.93 * h + 14);
        if (p.direction != taken || std::abs(p.perceptron_sum) <= theta) {
            std::int16_t* w = &perceptron_[std::size_t{perceptron_index(r.pc, tok)} * (h + 1)];
            const auto adj = [](std::int16_t& x, int d) { x = static_cast<std::int16_t>(std::clamp(x + d, -128, 127)); };
            const int t = taken ? 1 : -1;
            adj(w[0], t);
            for (unsigned i = 0; i < h; ++i)
                adj(w[i + 1], ((hist >> i) & 1) ? t : -t);
        }
        break;
    }
    }
}

Prediction Bpu::predict(const BranchRecord& r, const SecretToken& tok) const
{
    Prediction p;
    const std::uint64_t bhb_now = bhb(r.thread_id);
    const auto direct = [&] {
        if (auto t = btb_lookup(btb_key(r.pc, false, 0, r.thread_id, tok), r.pc, tok)) {
            p.target = t;
            p.target_source = TargetSource::btb_direct;
        }
    };
    const auto indirect = [&] {
        if (auto t = btb_lookup(btb_key(r.pc, true, bhb_now, r.thread_id, tok), r.pc, tok)) {
            p.target = t;
            p.target_source = TargetSource::btb_indirect;
        } else {
            direct();
        }
    };
    switch (r.branch_type) {
    case BranchType::conditional:
        predict_direction(r, tok, p);
        if (*p.direction)
            direct();
        break;
    case BranchType::direct_jump:
    case BranchType::direct_call: direct(); break;
    case BranchType::indirect_jump:
    case BranchType::indirect_call: indirect(); break;
    case BranchType::return_: {
        const auto* ts = thread_ptr(r.thread_id);
        if (ts && ts->rsb_depth > 0) {
            const unsigned slot = (ts->rsb_top + cfg_.rsb_entries - 1) % cfg_.rsb_entries;
            p.target = decrypt_return(r.pc, ts->rsb[slot], tok);
            p.target_source = TargetSource::rsb;
        } else {
            p.rsb_underflow = true;
            indirect();
        }
        break;
    }
    }
    return p;
}

void Bpu::update(const BranchRecord& r, const Prediction& p, const SecretToken& tok, std::vector<BpuEvent>& events)
{
    const auto emit = [&](EventKind k, bool tagged = false) {
        events.push_back({k, r.context_id, r.privilege, r.thread_id, tagged});
    };
    ThreadState& ts = thread(r.thread_id);
    const std::uint64_t bhb_before = ts.bhb;
    const auto bhb_mix = [&] {
        ts.bhb = ((ts.bhb << 2) ^ xor_fold(r.pc & 0xFFFFFFFFu, 32, 20)) & low_mask(cfg_.bhb_bits);
    };
    const auto push_return = [&] {
        ts.rsb[ts.rsb_top] = encrypt_return(r.pc + kInstrBytes, tok);
        ts.rsb_top = (ts.rsb_top + 1) % cfg_.rsb_entries;
        ts.rsb_depth = std::min(ts.rsb_depth + 1, cfg_.rsb_entries);
    };

    switch (r.branch_type) {
    case BranchType::conditional: {
        const bool dir = p.direction.value_or(false);
        if (dir != r.taken)
            emit(EventKind::direction_misp, p.direction_source == DirectionSource::tage_bank);
        else if (r.taken && p.target != r.target)
            emit(EventKind::target_misp);
        update_direction(r, p, tok);
        if (r.taken) {
            btb_insert(btb_key(r.pc, false, 0, r.thread_id, tok), r.target, tok, r, events);
            bhb_mix();
        }
        ts.hist = (ts.hist << 1) | (r.taken ? 1 : 0);
        break;
    }
    case BranchType::direct_jump:
    case BranchType::direct_call:
        if (p.target != r.target)
            emit(EventKind::target_misp);
        btb_insert(btb_key(r.pc, false, 0, r.thread_id, tok), r.target, tok, r, events);
        bhb_mix();
        if (r.branch_type == BranchType::direct_call)
            push_return();
        break;
    case BranchType::indirect_jump:
    case BranchType::indirect_call:
        if (p.target != r.target)
            emit(EventKind::target_misp);
        btb_insert(btb_key(r.pc, true, bhb_before, r.thread_id, tok), r.target, tok, r, events);
        btb_insert(btb_key(r.pc, false, 0, r.thread_id, tok), r.target, tok, r, events);
        if (r.branch_type == BranchType::indirect_call)
            push_return();
        break;
    case BranchType::return_:
        if (p.target != r.target)
            emit(EventKind::target_misp);
        if (ts.rsb_depth == 0) {
            emit(EventKind::rsb_underflow);
            btb_insert(btb_key(r.pc, true, bhb_before, r.thread_id, tok), r.target, tok, r, events);
        } else {
            ts.rsb_top = (ts.rsb_top + cfg_.rsb_entries - 1) % cfg_.rsb_entries;
            --ts.rsb_depth;
        }
        break;
    }
}

} // namespace stbpu
