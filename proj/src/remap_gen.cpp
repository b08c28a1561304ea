#include "stbpu/remap_gen.hpp"

#include "parallel.hpp"

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>

namespace stbpu {

PrimitivePool PrimitivePool::defaults()
{
    PrimitivePool p;
    p.sbox4 = {kPresentSbox, kSpongentSbox};
    p.sbox3 = default_sbox3_pool();
    return p;
}

namespace {

enum class LayerKind { none, sbox, pbox, csbox };

struct Attempt {
    const GenConstraints& c;
    const PrimitivePool& pool;
    Rng& rng;

    unsigned min_sbox_depth() const
    {
        const CostTable t;
        if (!pool.sbox3.empty())
            return t.sbox3_depth;
        return pool.sbox4.empty() ? 0 : t.sbox4_depth;
    }

    std::optional<LayeredFunction> run(const std::string& name)
    {
        std::vector<Layer> layers;
        unsigned width = c.input_width;
        HardwareCost cost;
        LayerKind prev = LayerKind::none;
        bool compressed = false;
        bool mixed_since_xor = true; // no two XOR layers without substitution between
        const bool have_sbox = !pool.sbox4.empty() || !pool.sbox3.empty();

        for (unsigned k = 0; k < c.max_layers; ++k) {
            const unsigned remaining = c.max_layers - k;
            const unsigned deficit = width - c.output_width;
            if (deficit == 0 && compressed && (prev == LayerKind::sbox || !have_sbox))
                break; // accept

            // Selection weights; compression is boosted as the width budget
            // gets tight relative to the layers left.
            double ws = 0, wp = 0, wc = 0;
            if (have_sbox)
                ws = prev == LayerKind::sbox ? 0.1 : 2.0;
            if (pool.pbox)
                wp = prev == LayerKind::sbox ? 2.0 : (prev == LayerKind::pbox ? 0.0 : 0.3);
            if (pool.csbox && deficit > 0 && mixed_since_xor)
                wc = 0.25 + static_cast<double>(deficit) / c.input_width * c.max_layers / remaining;
            const double total = ws + wp + wc;
            if (total <= 0)
                return std::nullopt;
            double pick = rng.uniform() * total;
            LayerKind kind = pick < ws ? LayerKind::sbox : (pick < ws + wp ? LayerKind::pbox : LayerKind::csbox);
            if (kind == LayerKind::csbox && wc <= 0)
                kind = LayerKind::pbox;

            Layer layer;
            switch (kind) {
            case LayerKind::sbox: {
                const bool prefer3 = pool.sbox4.empty() || (!pool.sbox3.empty() && rng.chance(0.3));
                layer = sbox_layer(width, pool.sbox4, pool.sbox3, prefer3, rng);
                if (layer.parts.empty())
                    return std::nullopt;
                mixed_since_xor = true;
                break;
            }
            case LayerKind::pbox: {
                auto perm = width <= c.max_wire_crossover + 1
                                ? random_permutation(width, rng)
                                : windowed_permutation(width, c.max_wire_crossover / 2 + 1, rng);
                layer = pbox_layer(std::move(perm));
                break;
            }
            case LayerKind::csbox: {
                unsigned next = remaining <= 2 ? c.output_width
                                               : c.output_width + static_cast<unsigned>(rng.below(deficit / 2 + 1));
                if (next >= width)
                    next = c.output_width;
                const unsigned need = std::max(2u, (width + next - 1) / next);
                const unsigned reserve = min_sbox_depth();
                const unsigned left = c.max_critical_path > cost.critical_path_transistors + reserve
                                          ? c.max_critical_path - cost.critical_path_transistors - reserve
                                          : 0;
                const unsigned levels = std::min(left / CostTable{}.xor_level_depth, 16u);
                const unsigned max_fan = std::min(pool.max_csbox_fanin, 1u << levels);
                if (max_fan < need)
                    return std::nullopt;
                const unsigned fan = need + static_cast<unsigned>(rng.below(max_fan - need + 1));
                layer = csbox_layer(width, random_xor_taps(width, next, fan, rng));
                compressed = true;
                mixed_since_xor = false;
                break;
            }
            case LayerKind::none: break;
            }

            const auto lc = layer_cost(layer);
            cost.critical_path_transistors += lc.critical_path_transistors;
            cost.total_transistors += lc.total_transistors;
            if (cost.critical_path_transistors > c.max_critical_path || cost.total_transistors > c.max_total_transistors ||
                lc.max_breadth > c.max_breadth || lc.wire_crossovers > c.max_wire_crossover)
                return std::nullopt; // discard
            width = layer.out_width();
            layers.push_back(std::move(layer));
            prev = kind;
        }
        if (width != c.output_width || !compressed || (have_sbox && prev != LayerKind::sbox))
            return std::nullopt;
        try {
            return LayeredFunction(name, c.input_width, std::move(layers));
        } catch (const RemapError&) {
            return std::nullopt;
        }
    }
};

} // namespace

std::vector<LayeredFunction> generate_candidates(const GenConstraints& c, const PrimitivePool& pool,
                                                 std::size_t count, const std::string& name)
{
    if (pool.empty())
        throw RemapError("empty primitive pool");
    if (count == 0)
        throw RemapError("candidate count must be positive");
    if (c.input_width == 0 || c.output_width == 0 || c.output_width >= c.input_width || c.max_layers == 0 ||
        c.input_width > BitVec::kMaxWidth)
        throw RemapError("constraints need 0 < output_width < input_width <= 128 and max_layers > 0");

    Rng rng(c.seed);
    std::vector<LayeredFunction> out;
    std::size_t attempts = 0, total_attempts = 0;
    while (out.size() < count) {
        ++attempts;
        ++total_attempts;
        Attempt a{c, pool, rng};
        if (auto f = a.run(name + "_" + std::to_string(out.size()))) {
            out.push_back(std::move(*f));
            attempts = 0;
        } else if (attempts >= kMaxGenAttempts) {
            throw RemapError("unsatisfiable: no candidate met the constraints after " + std::to_string(attempts) +
                             " attempts (" + std::to_string(total_attempts) + " total, " +
                             std::to_string(out.size()) + " accepted)");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quality metrics

namespace {

constexpr std::size_t kChunks = 16;

std::size_t chunk_len(std::size_t total, std::size_t chunk)
{
    return total / kChunks + (chunk < total % kChunks ? 1 : 0);
}

std::vector<std::uint64_t> sample_outputs(const LayeredFunction& f, std::size_t samples, std::uint64_t seed)
{
    if (f.output_width() > 64)
        throw RemapError("output wider than 64 bits; evaluate a truncated output slice");
    std::vector<std::uint64_t> out(samples);
    std::vector<std::size_t> start(kChunks + 1, 0);
    for (std::size_t ch = 0; ch < kChunks; ++ch)
        start[ch + 1] = start[ch] + chunk_len(samples, ch);
    detail::parallel_chunks(kChunks, [&](std::size_t ch) {
        Rng rng(mix_seed(seed, ch));
        for (std::size_t i = start[ch]; i < start[ch + 1]; ++i)
            out[i] = f.apply(rng.bits(f.input_width())).lo();
    });
    return out;
}

double bins_cv(const std::vector<std::uint64_t>& outputs, unsigned lo, unsigned bits)
{
    const std::size_t bins = std::size_t{1} << bits;
    std::vector<std::uint32_t> counts(bins, 0);
    for (auto v : outputs)
        ++counts[bit_slice(v, lo, bits)];
    const double mean = static_cast<double>(outputs.size()) / static_cast<double>(bins);
    double ss = 0;
    for (auto n : counts)
        ss += (n - mean) * (n - mean);
    return std::sqrt(ss / static_cast<double>(bins)) / mean;
}

void check_bins(unsigned bits)
{
    if (bits > 24)
        throw RemapError("bin space too large; evaluate a truncated output slice");
}

} // namespace

double ideal_uniformity_cv(std::uint64_t bins, std::uint64_t samples)
{
    return std::sqrt(static_cast<double>(bins - 1) / static_cast<double>(samples));
}

double eval_uniformity(const LayeredFunction& f, std::size_t samples, std::uint64_t seed)
{
    return eval_uniformity_slice(f, 0, f.output_width(), samples, seed);
}

double eval_uniformity_slice(const LayeredFunction& f, unsigned lo, unsigned bits, std::size_t samples,
                             std::uint64_t seed)
{
    check_bins(bits);
    if (lo + bits > f.output_width() || bits == 0)
        throw RemapError("output slice out of range");
    if (samples == 0)
        throw RemapError("need at least one sample");
    return bins_cv(sample_outputs(f, samples, seed), lo, bits);
}

QualityReport eval_avalanche(const LayeredFunction& f, std::size_t samples, std::uint64_t seed)
{
    if (samples == 0)
        throw RemapError("need at least one sample");
    const unsigned in = f.input_width(), out = f.output_width();
    struct Acc {
        double sum = 0, sum_sq = 0;
        std::vector<std::uint64_t> bit_flips;
    };
    std::vector<Acc> acc(kChunks);
    detail::parallel_chunks(kChunks, [&](std::size_t ch) {
        Rng rng(mix_seed(seed, 0x100 + ch));
        Acc& a = acc[ch];
        a.bit_flips.assign(out, 0);
        const std::size_t n = chunk_len(samples, ch);
        for (std::size_t s = 0; s < n; ++s) {
            const BitVec x = rng.bits(in);
            const BitVec y = f.apply(x);
            unsigned flips = 0;
            for (unsigned i = 0; i < in; ++i) {
                BitVec xi = x;
                xi.flip(i);
                const BitVec d = f.apply(xi) ^ y;
                flips += d.popcount();
                for (std::uint64_t w = d.lo(); w; w &= w - 1)
                    ++a.bit_flips[std::countr_zero(w)];
                for (std::uint64_t w = d.hi(); w; w &= w - 1)
                    ++a.bit_flips[64 + std::countr_zero(w)];
            }
            const double m = static_cast<double>(flips) / (static_cast<double>(in) * out);
            a.sum += m;
            a.sum_sq += m * m;
        }
    });

    double sum = 0, sum_sq = 0;
    std::vector<std::uint64_t> bit_flips(out, 0);
    for (const auto& a : acc) {
        sum += a.sum;
        sum_sq += a.sum_sq;
        for (unsigned b = 0; b < out; ++b)
            bit_flips[b] += a.bit_flips[b];
    }
    QualityReport q;
    q.sample_count = samples;
    const double n = static_cast<double>(samples);
    q.avalanche_mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - q.avalanche_mean * q.avalanche_mean);
    q.avalanche_cv = q.avalanche_mean > 0 ? std::sqrt(var) / q.avalanche_mean : 0.0;
    double lo = 1, hi = 0;
    for (auto c : bit_flips) {
        const double frac = static_cast<double>(c) / (n * in);
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
    }
    q.per_bit_spread = hi - lo;
    return q;
}

QualityReport evaluate_quality(const LayeredFunction& f, const std::vector<FieldSpec>& fields,
                               std::size_t avalanche_samples, std::size_t uniformity_samples, std::uint64_t seed)
{
    QualityReport q = eval_avalanche(f, avalanche_samples, seed);
    q.uniformity_samples = uniformity_samples;
    std::vector<FieldSpec> use = fields;
    if (use.empty())
        use.push_back({"out", f.output_width()});
    unsigned total = 0;
    for (const auto& fs : use) {
        check_bins(fs.bits);
        total += fs.bits;
    }
    if (total != f.output_width())
        throw RemapError("field widths do not add up to the output width of " + f.name());

    const auto outputs = sample_outputs(f, uniformity_samples, mix_seed(seed, 0xB105));
    double worst = -1;
    unsigned lo = 0;
    for (const auto& fs : use) {
        const double cv = bins_cv(outputs, lo, fs.bits);
        const std::uint64_t bins = std::uint64_t{1} << fs.bits;
        q.fields.push_back({fs.name, lo, fs.bits, cv, ideal_uniformity_cv(bins, uniformity_samples)});
        const double norm = bins > 1 ? cv / std::sqrt(static_cast<double>(bins - 1)) : 0.0;
        if (norm > worst) {
            worst = norm;
            q.uniformity_cv = cv;
            q.uniformity_bins = static_cast<unsigned>(bins);
        }
        lo += fs.bits;
    }
    return q;
}

double score_candidate(const QualityReport& q, const ScoreWeights& w)
{
    for (double x : w)
        if (x < 0 || std::isnan(x))
            throw RemapError("score weights must be non-negative");
    const double uni = q.uniformity_bins > 1 ? q.uniformity_cv / std::sqrt(q.uniformity_bins - 1.0) : 0.0;
    return w[0] * std::abs(q.avalanche_mean - 0.5) * 2 + w[1] * q.avalanche_cv + w[2] * q.per_bit_spread +
           w[3] * uni;
}

// ---------------------------------------------------------------------------
// Roles

const RoleSpec& role_spec(Role r)
{
    static const std::vector<RoleSpec> specs = {
        {Role::R1, "R1", 80, 22, {{"ind", 9}, {"tag", 8}, {"offs", 5}}},
        {Role::R2, "R2", 90, 8, {{"tag", 8}}},
        {Role::R3, "R3", 80, 14, {{"ind", 14}}},
        {Role::R4, "R4", 96, 14, {{"ind", 14}}},
        {Role::Rt, "Rt", 96, 25, {{"ind", 13}, {"tag", 12}}},
        {Role::Rp, "Rp", 80, 10, {{"ind", 10}}},
    };
    return specs[static_cast<std::size_t>(r)];
}

Role parse_role(std::string_view name)
{
    for (auto r : all_roles())
        if (role_spec(r).name == name)
            return r;
    throw RemapError("unknown role '" + std::string(name) + "'");
}

const std::vector<Role>& all_roles()
{
    static const std::vector<Role> roles = {Role::R1, Role::R2, Role::R3, Role::R4, Role::Rt, Role::Rp};
    return roles;
}

GenConstraints default_constraints(Role r, std::uint64_t seed)
{
    const auto& s = role_spec(r);
    GenConstraints c;
    c.input_width = s.input_width;
    c.output_width = s.output_width;
    c.seed = seed;
    return c;
}

Selection select_remaps(Role role, const std::vector<LayeredFunction>& candidates, const ScoreWeights& w,
                        const EvalOptions& opts)
{
    const auto& spec = role_spec(role);
    if (candidates.empty())
        throw RemapError("no candidates for role " + std::string(spec.name));
    for (const auto& f : candidates)
        if (f.input_width() != spec.input_width || f.output_width() != spec.output_width)
            throw RemapError("width mismatch for role " + std::string(spec.name));

    Selection sel;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& f = candidates[i];
        auto q = evaluate_quality(f, spec.fields, opts.avalanche_samples, opts.uniformity_samples, opts.seed);
        sel.ledger.push_back({i, f.name(), cost_of(f), q, score_candidate(q, w)});
    }
    const auto better = [](const LedgerRow& a, const LedgerRow& b) {
        if (a.score != b.score)
            return a.score < b.score;
        if (a.cost.critical_path_transistors != b.cost.critical_path_transistors)
            return a.cost.critical_path_transistors < b.cost.critical_path_transistors;
        if (a.cost.total_transistors != b.cost.total_transistors)
            return a.cost.total_transistors < b.cost.total_transistors;
        return a.index < b.index;
    };
    const auto best = std::min_element(sel.ledger.begin(), sel.ledger.end(), better);
    sel.chosen_index = best->index;
    sel.chosen = candidates[best->index];
    return sel;
}

std::string ledger_csv(const std::vector<LedgerRow>& rows)
{
    std::ostringstream os;
    os << "index,name,critical_path,total_transistors,max_breadth,wire_crossovers,avalanche_mean,avalanche_cv,"
          "per_bit_spread,uniformity_cv,uniformity_bins,samples,score\n";
    os << std::setprecision(6);
    for (const auto& r : rows) {
        os << r.index << ',' << r.name << ',' << r.cost.critical_path_transistors << ',' << r.cost.total_transistors
           << ',' << r.cost.max_breadth << ',' << r.cost.wire_crossovers << ',' << r.quality.avalanche_mean << ','
           << r.quality.avalanche_cv << ',' << r.quality.per_bit_spread << ',' << r.quality.uniformity_cv << ','
           << r.quality.uniformity_bins << ',' << r.quality.sample_count << ',' << r.score << '\n';
    }
    return os.str();
}

} // namespace stbpu
