#include "stbpu/remap.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

namespace stbpu {

std::string_view prim_name(PrimKind k)
{
    switch (k) {
    case PrimKind::sbox4: return "sbox4";
    case PrimKind::sbox3: return "sbox3";
    case PrimKind::pbox: return "pbox";
    case PrimKind::csbox: return "csbox";
    case PrimKind::xor_fold: return "xor_fold";
    }
    return "?";
}

Primitive Primitive::sbox(std::span<const std::uint8_t> table)
{
    Primitive p;
    if (table.size() == 16) {
        p.kind_ = PrimKind::sbox4;
        p.in_ = p.out_ = 4;
    } else if (table.size() == 8) {
        p.kind_ = PrimKind::sbox3;
        p.in_ = p.out_ = 3;
    } else {
        throw RemapError("S-box table must have 8 or 16 entries (at most 4 inputs)");
    }
    std::vector<bool> seen(table.size(), false);
    for (auto v : table) {
        if (v >= table.size() || seen[v])
            throw RemapError("S-box table is not a bijection");
        seen[v] = true;
    }
    p.table_.assign(table.begin(), table.end());
    return p;
}

Primitive Primitive::pbox(std::vector<unsigned> perm)
{
    if (perm.empty())
        throw RemapError("empty P-box");
    std::vector<bool> seen(perm.size(), false);
    for (auto v : perm) {
        if (v >= perm.size() || seen[v])
            throw RemapError("P-box is not a permutation of pin indices");
        seen[v] = true;
    }
    Primitive p;
    p.kind_ = PrimKind::pbox;
    p.in_ = p.out_ = static_cast<unsigned>(perm.size());
    p.perm_ = std::move(perm);
    return p;
}

Primitive Primitive::csbox(unsigned in_width, std::vector<std::vector<unsigned>> taps)
{
    if (taps.empty() || taps.size() >= in_width)
        throw RemapError("csbox output width must be non-zero and below its input width");
    std::vector<bool> used(in_width, false);
    for (const auto& t : taps) {
        if (t.empty())
            throw RemapError("csbox output with no inputs");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (t[i] >= in_width)
                throw RemapError("csbox tap out of range");
            if (std::find(t.begin(), t.begin() + i, t[i]) != t.begin() + i)
                throw RemapError("csbox tap repeated within one XOR tree");
            used[t[i]] = true;
        }
    }
    if (std::find(used.begin(), used.end(), false) != used.end())
        throw RemapError("csbox leaves an input bit unconsumed");
    Primitive p;
    p.kind_ = PrimKind::csbox;
    p.in_ = in_width;
    p.out_ = static_cast<unsigned>(taps.size());
    p.taps_ = std::move(taps);
    return p;
}

Primitive Primitive::xor_fold(unsigned in_width)
{
    if (in_width < 2 || in_width % 2 != 0)
        throw RemapError("xor_fold needs an even input width >= 2");
    Primitive p;
    p.kind_ = PrimKind::xor_fold;
    p.in_ = in_width;
    p.out_ = in_width / 2;
    return p;
}

std::uint64_t Primitive::eval_small(std::uint64_t in) const { return table_[in]; }

unsigned Layer::out_width() const
{
    unsigned covered = 0, out = 0;
    for (const auto& p : parts) {
        covered += p.prim.in_width();
        out += p.prim.out_width();
    }
    return out + (in_width - covered);
}

namespace {

unsigned ceil_log2(unsigned v)
{
    unsigned l = 0;
    while ((1u << l) < v)
        ++l;
    return l;
}

} // namespace

HardwareCost primitive_cost(const Primitive& p, const CostTable& t)
{
    HardwareCost c;
    switch (p.kind()) {
    case PrimKind::sbox4:
        c.critical_path_transistors = t.sbox4_depth;
        c.total_transistors = t.sbox4_total;
        break;
    case PrimKind::sbox3:
        c.critical_path_transistors = t.sbox3_depth;
        c.total_transistors = t.sbox3_total;
        break;
    case PrimKind::pbox: c.wire_crossovers = max_wire_crossover(p.perm()); break;
    case PrimKind::csbox: {
        unsigned fan = 0, gates = 0;
        for (const auto& tap : p.taps()) {
            fan = std::max<unsigned>(fan, static_cast<unsigned>(tap.size()));
            gates += static_cast<unsigned>(tap.size()) - 1;
        }
        c.critical_path_transistors = t.xor_level_depth * ceil_log2(fan);
        c.total_transistors = t.xor_gate_total * gates;
        break;
    }
    case PrimKind::xor_fold:
        c.critical_path_transistors = t.xor_level_depth;
        c.total_transistors = t.xor_gate_total * p.out_width();
        break;
    }
    c.max_breadth = c.total_transistors;
    c.satisfies_c1 = c.critical_path_transistors <= t.c1_limit;
    return c;
}

HardwareCost layer_cost(const Layer& l, const CostTable& t)
{
    HardwareCost c;
    for (const auto& part : l.parts) {
        auto pc = primitive_cost(part.prim, t);
        c.critical_path_transistors = std::max(c.critical_path_transistors, pc.critical_path_transistors);
        c.total_transistors += pc.total_transistors;
        c.wire_crossovers = std::max(c.wire_crossovers, pc.wire_crossovers);
    }
    c.max_breadth = c.total_transistors;
    c.satisfies_c1 = c.critical_path_transistors <= t.c1_limit;
    return c;
}

HardwareCost cost_of(const LayeredFunction& f, const CostTable& t)
{
    HardwareCost c;
    for (const auto& l : f.layers()) {
        auto lc = layer_cost(l, t);
        c.critical_path_transistors += lc.critical_path_transistors;
        c.total_transistors += lc.total_transistors;
        c.max_breadth = std::max(c.max_breadth, lc.max_breadth);
        c.wire_crossovers = std::max(c.wire_crossovers, lc.wire_crossovers);
    }
    c.satisfies_c1 = c.critical_path_transistors <= t.c1_limit;
    return c;
}

LayeredFunction::LayeredFunction(std::string name, unsigned input_width, std::vector<Layer> layers)
    : name_(std::move(name)), in_(input_width), layers_(std::move(layers))
{
    if (input_width == 0 || input_width > BitVec::kMaxWidth)
        throw RemapError("input width must be in 1..128");
    if (layers_.empty())
        throw RemapError("no layers");

    // consumed[w]: wire w has passed through at least one primitive.
    std::vector<bool> consumed(in_, false);
    unsigned width = in_;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
        auto& layer = layers_[k];
        const std::string where = "layer L" + std::to_string(k) + ": ";
        if (layer.in_width != width)
            throw RemapError(where + "input width " + std::to_string(layer.in_width) +
                             " does not match previous output width " + std::to_string(width));
        std::vector<bool> covered(width, false);
        for (const auto& part : layer.parts) {
            const unsigned hi = part.lo + part.prim.in_width();
            if (hi > width)
                throw RemapError(where + "bit range " + std::to_string(part.lo) + "-" + std::to_string(hi - 1) +
                                 " exceeds layer input width " + std::to_string(width));
            for (unsigned b = part.lo; b < hi; ++b) {
                if (covered[b])
                    throw RemapError(where + "overlapping placements at bit " + std::to_string(b));
                covered[b] = true;
            }
        }
        std::vector<bool> next;
        for (const auto& part : layer.parts)
            next.insert(next.end(), part.prim.out_width(), true);
        for (unsigned b = 0; b < width; ++b)
            if (!covered[b])
                next.push_back(consumed[b]);
        consumed = std::move(next);
        width = layer.out_width();
        if (width > BitVec::kMaxWidth)
            throw RemapError(where + "output wider than 128 bits");
    }
    if (std::find(consumed.begin(), consumed.end(), false) != consumed.end())
        throw RemapError("layer L" + std::to_string(layers_.size() - 1) +
                         ": input bits reach the output without passing any primitive");
    out_ = width;
    compile();
}

void LayeredFunction::compile()
{
    compiled_.clear();
    for (const auto& layer : layers_) {
        CompiledLayer cl;
        cl.out_width = layer.out_width();
        // wire[a] = output position fed directly by input bit a, or -1.
        std::vector<int> wire(layer.in_width, -1);
        std::vector<bool> covered(layer.in_width, false);
        unsigned pos = 0;
        for (const auto& part : layer.parts) {
            const auto& p = part.prim;
            CompiledPart cp{p.kind(), part.lo, p.in_width(), pos, nullptr, {}};
            const auto add_mask = [&](std::span<const unsigned> bits) {
                std::array<std::uint64_t, 2> m{0, 0};
                for (auto b : bits) {
                    const unsigned a = part.lo + b;
                    m[a >> 6] |= std::uint64_t{1} << (a & 63);
                }
                cp.masks.push_back(m);
            };
            switch (p.kind()) {
            case PrimKind::sbox4:
            case PrimKind::sbox3:
                cp.table = p.table().data();
                cl.parts.push_back(std::move(cp));
                break;
            case PrimKind::pbox:
                for (unsigned i = 0; i < p.perm().size(); ++i)
                    wire[part.lo + p.perm()[i]] = static_cast<int>(pos + i);
                break;
            case PrimKind::csbox:
                for (const auto& t : p.taps())
                    add_mask(t);
                cl.parts.push_back(std::move(cp));
                break;
            case PrimKind::xor_fold: {
                const unsigned k = p.out_width();
                for (unsigned i = 0; i < k; ++i) {
                    const unsigned pair[2] = {i, i + k};
                    add_mask(pair);
                }
                cl.parts.push_back(std::move(cp));
                break;
            }
            }
            for (unsigned b = part.lo; b < part.lo + p.in_width(); ++b)
                covered[b] = true;
            pos += p.out_width();
        }
        for (unsigned b = 0; b < layer.in_width; ++b)
            if (!covered[b])
                wire[b] = static_cast<int>(pos++);

        int first = -1, last = -1;
        for (unsigned a = 0; a < layer.in_width; ++a) {
            if (wire[a] < 0)
                continue;
            if (first < 0)
                first = static_cast<int>(a / 8);
            last = static_cast<int>(a / 8);
        }
        if (first >= 0) {
            cl.first_byte = static_cast<unsigned>(first);
            const unsigned nbytes = static_cast<unsigned>(last - first + 1);
            cl.gather.assign(std::size_t{nbytes} * 256, {0, 0});
            for (unsigned a = 0; a < layer.in_width; ++a) {
                if (wire[a] < 0)
                    continue;
                const unsigned byte = a / 8 - cl.first_byte, bit = a % 8;
                const unsigned o = static_cast<unsigned>(wire[a]);
                for (unsigned v = 0; v < 256; ++v)
                    if ((v >> bit) & 1)
                        cl.gather[byte * 256 + v][o >> 6] |= std::uint64_t{1} << (o & 63);
            }
        }
        compiled_.push_back(std::move(cl));
    }
}

BitVec LayeredFunction::apply(const BitVec& input) const
{
    if (input.width() != in_)
        throw RemapError("width mismatch: function " + name_ + " expects " + std::to_string(in_) +
                         " input bits, got " + std::to_string(input.width()));
    std::uint64_t in0 = input.lo(), in1 = input.hi();
    for (const auto& cl : compiled_) {
        std::uint64_t w0 = 0, w1 = 0;
        const auto put = [&](unsigned pos, std::uint64_t v) {
            if (pos < 64) {
                w0 |= v << pos;
                if (pos > 0)
                    w1 |= v >> (64 - pos);
            } else {
                w1 |= v << (pos - 64);
            }
        };
        const auto slice = [&](unsigned lo, unsigned n) {
            std::uint64_t v;
            if (lo >= 64)
                v = in1 >> (lo - 64);
            else if (lo == 0)
                v = in0;
            else
                v = (in0 >> lo) | (in1 << (64 - lo));
            return v & low_mask(n);
        };
        for (const auto& p : cl.parts) {
            if (p.table) {
                put(p.out_pos, p.table[slice(p.lo, p.in)]);
                continue;
            }
            for (unsigned base = 0; base < p.masks.size(); base += 64) {
                const unsigned n = std::min<unsigned>(64, static_cast<unsigned>(p.masks.size()) - base);
                std::uint64_t bits = 0;
                for (unsigned j = 0; j < n; ++j) {
                    const auto& m = p.masks[base + j];
                    bits |= static_cast<std::uint64_t>(std::popcount((in0 & m[0]) ^ (in1 & m[1])) & 1) << j;
                }
                put(p.out_pos + base, bits);
            }
        }
        if (!cl.gather.empty()) {
            const unsigned nbytes = static_cast<unsigned>(cl.gather.size() / 256);
            for (unsigned i = 0; i < nbytes; ++i) {
                const auto& g = cl.gather[i * 256 + slice(8 * (cl.first_byte + i), 8)];
                w0 |= g[0];
                w1 |= g[1];
            }
        }
        in0 = w0;
        in1 = w1;
    }
    return BitVec(out_, in0, in1);
}

BitVec apply(const LayeredFunction& f, const BitVec& input) { return f.apply(input); }

// ---------------------------------------------------------------------------
// Netlist text format

namespace {

char hex_digit(unsigned v) { return "0123456789ABCDEF"[v & 0xF]; }

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

unsigned to_uint(std::string_view s, const std::string& where)
{
    s = trim(s);
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
        throw RemapError(where + "expected integer, got '" + std::string(s) + "'");
    return v;
}

Primitive parse_primitive(std::string_view kind, std::string_view params, const std::string& where)
{
    if (kind == "sbox4" || kind == "sbox3") {
        const std::size_t n = kind == "sbox4" ? 16 : 8;
        if (params.size() != n)
            throw RemapError(where + std::string(kind) + " needs " + std::to_string(n) + " hex digits");
        std::vector<std::uint8_t> t;
        for (char c : params) {
            unsigned v = 0;
            auto [p, ec] = std::from_chars(&c, &c + 1, v, 16);
            if (ec != std::errc())
                throw RemapError(where + "bad S-box digit '" + std::string(1, c) + "'");
            t.push_back(static_cast<std::uint8_t>(v));
        }
        return Primitive::sbox(t);
    }
    if (kind == "pbox") {
        std::vector<unsigned> perm;
        for (auto tok : split(params, ','))
            perm.push_back(to_uint(tok, where));
        return Primitive::pbox(std::move(perm));
    }
    if (kind == "csbox") {
        const auto colon = params.find(':');
        if (colon == std::string_view::npos)
            throw RemapError(where + "csbox params must be m,n:taps");
        auto dims = split(params.substr(0, colon), ',');
        if (dims.size() != 2)
            throw RemapError(where + "csbox params must be m,n:taps");
        const unsigned m = to_uint(dims[0], where), n = to_uint(dims[1], where);
        std::vector<std::vector<unsigned>> taps;
        for (auto tree : split(params.substr(colon + 1), '|')) {
            std::vector<unsigned> t;
            for (auto tok : split(tree, '+'))
                t.push_back(to_uint(tok, where));
            taps.push_back(std::move(t));
        }
        if (taps.size() != n)
            throw RemapError(where + "csbox declares " + std::to_string(n) + " outputs but wires " +
                             std::to_string(taps.size()));
        return Primitive::csbox(m, std::move(taps));
    }
    if (kind == "xor_fold")
        return Primitive::xor_fold(to_uint(params, where));
    throw RemapError(where + "unknown primitive '" + std::string(kind) + "'");
}

} // namespace

std::string serialize_netlist(const LayeredFunction& f)
{
    std::ostringstream os;
    os << "REMAP " << f.name() << " in=" << f.input_width() << " out=" << f.output_width() << '\n';
    for (std::size_t k = 0; k < f.layers().size(); ++k) {
        os << 'L' << k << ':';
        const auto& parts = f.layers()[k].parts;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const auto& p = parts[i].prim;
            os << (i ? " ; " : " ") << prim_name(p.kind()) << '(';
            switch (p.kind()) {
            case PrimKind::sbox4:
            case PrimKind::sbox3:
                for (auto v : p.table())
                    os << hex_digit(v);
                break;
            case PrimKind::pbox:
                for (std::size_t j = 0; j < p.perm().size(); ++j)
                    os << (j ? "," : "") << p.perm()[j];
                break;
            case PrimKind::csbox:
                os << p.in_width() << ',' << p.out_width() << ':';
                for (std::size_t j = 0; j < p.taps().size(); ++j) {
                    os << (j ? "|" : "");
                    for (std::size_t q = 0; q < p.taps()[j].size(); ++q)
                        os << (q ? "+" : "") << p.taps()[j][q];
                }
                break;
            case PrimKind::xor_fold: os << p.in_width(); break;
            }
            os << ")@" << parts[i].lo << '-' << parts[i].lo + p.in_width() - 1;
        }
        os << '\n';
    }
    return os.str();
}

LayeredFunction parse_netlist(std::string_view text)
{
    std::string name;
    unsigned in = 0, out = 0;
    bool have_header = false;
    std::vector<Layer> layers;
    unsigned width = 0;

    for (auto raw : split(text, '\n')) {
        auto line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        if (!have_header) {
            auto toks = split(line, ' ');
            std::erase_if(toks, [](std::string_view t) { return t.empty(); });
            if (toks.size() != 4 || toks[0] != "REMAP" || toks[2].substr(0, 3) != "in=" ||
                toks[3].substr(0, 4) != "out=")
                throw RemapError("netlist header must be 'REMAP <name> in=<w> out=<w>'");
            name = std::string(toks[1]);
            in = to_uint(toks[2].substr(3), "header: ");
            out = to_uint(toks[3].substr(4), "header: ");
            width = in;
            have_header = true;
            continue;
        }
        const std::size_t k = layers.size();
        const std::string where = "layer L" + std::to_string(k) + ": ";
        const auto colon = line.find(':');
        if (line.front() != 'L' || colon == std::string_view::npos)
            throw RemapError(where + "expected 'L<k>: ...'");
        if (to_uint(line.substr(1, colon - 1), where) != k)
            throw RemapError(where + "layers must be numbered consecutively from L0");

        Layer layer;
        layer.in_width = width;
        for (auto part_text : split(line.substr(colon + 1), ';')) {
            part_text = trim(part_text);
            const auto open = part_text.find('(');
            const auto close = part_text.rfind(')');
            const auto at = part_text.rfind('@');
            if (open == std::string_view::npos || close == std::string_view::npos || at == std::string_view::npos ||
                close < open || at < close)
                throw RemapError(where + "malformed placement '" + std::string(part_text) + "'");
            auto prim = parse_primitive(part_text.substr(0, open), part_text.substr(open + 1, close - open - 1),
                                        where);
            auto range = split(part_text.substr(at + 1), '-');
            if (range.size() != 2)
                throw RemapError(where + "bit range must be lo-hi");
            const unsigned lo = to_uint(range[0], where), hi = to_uint(range[1], where);
            if (hi < lo || hi - lo + 1 != prim.in_width())
                throw RemapError(where + "bit range " + std::to_string(lo) + "-" + std::to_string(hi) +
                                 " does not match " + std::string(prim_name(prim.kind())) + " input width " +
                                 std::to_string(prim.in_width()));
            if (hi >= width)
                throw RemapError(where + "bit range " + std::to_string(lo) + "-" + std::to_string(hi) +
                                 " exceeds layer input width " + std::to_string(width));
            layer.parts.push_back({std::move(prim), lo});
        }
        width = layer.out_width();
        layers.push_back(std::move(layer));
    }
    if (!have_header)
        throw RemapError("no layers");
    if (layers.empty())
        throw RemapError("no layers");
    if (width != out)
        throw RemapError("layer L" + std::to_string(layers.size() - 1) + ": output width " + std::to_string(width) +
                         " does not match declared out=" + std::to_string(out));
    return LayeredFunction(std::move(name), in, std::move(layers));
}

LayeredFunction load_netlist_file(const std::string& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw RemapError("cannot open netlist " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_netlist(ss.str());
}

void save_netlist_file(const LayeredFunction& f, const std::string& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw RemapError("cannot write netlist " + path);
    os << serialize_netlist(f);
}

// ---------------------------------------------------------------------------
// Construction helpers

Layer sbox_layer(unsigned width, std::span<const std::array<std::uint8_t, 16>> boxes4,
                 std::span<const std::array<std::uint8_t, 8>> boxes3, bool prefer3, Rng& rng)
{
    Layer l;
    l.in_width = width;
    unsigned pos = 0;
    if (!prefer3 && !boxes4.empty()) {
        for (; pos + 4 <= width; pos += 4)
            l.parts.push_back({Primitive::sbox(boxes4[rng.below(boxes4.size())]), pos});
    }
    if (!boxes3.empty()) {
        for (; pos + 3 <= width; pos += 3)
            l.parts.push_back({Primitive::sbox(boxes3[rng.below(boxes3.size())]), pos});
    }
    return l;
}

Layer pbox_layer(std::vector<unsigned> perm)
{
    Layer l;
    l.in_width = static_cast<unsigned>(perm.size());
    l.parts.push_back({Primitive::pbox(std::move(perm)), 0});
    return l;
}

Layer csbox_layer(unsigned in_width, std::vector<std::vector<unsigned>> taps)
{
    Layer l;
    l.in_width = in_width;
    l.parts.push_back({Primitive::csbox(in_width, std::move(taps)), 0});
    return l;
}

std::vector<unsigned> random_permutation(unsigned n, Rng& rng)
{
    std::vector<unsigned> p(n);
    std::iota(p.begin(), p.end(), 0u);
    shuffle(p, rng);
    return p;
}

std::vector<unsigned> windowed_permutation(unsigned n, unsigned window, Rng& rng)
{
    std::vector<unsigned> p(n);
    std::iota(p.begin(), p.end(), 0u);
    window = std::max(window, 2u);
    for (unsigned start = 0; start < n; start += window) {
        const unsigned len = std::min(window, n - start);
        for (unsigned i = len; i > 1; --i)
            std::swap(p[start + i - 1], p[start + rng.below(i)]);
    }
    return p;
}

unsigned max_wire_crossover(const std::vector<unsigned>& perm)
{
    unsigned worst = 0;
    const std::size_t n = perm.size();
    for (std::size_t i = 0; i < n; ++i) {
        unsigned c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const bool before_out = j < i;
            const bool before_in = perm[j] < perm[i];
            c += before_out != before_in;
        }
        worst = std::max(worst, c);
    }
    return worst;
}

namespace {

std::vector<std::vector<unsigned>> xor_taps_once(unsigned in_width, unsigned out_width, unsigned min_fanin,
                                                 unsigned max_fanin, Rng& rng)
{
    std::vector<unsigned> target(out_width);
    for (auto& t : target)
        t = min_fanin + static_cast<unsigned>(rng.below(max_fanin - min_fanin + 1));

    std::vector<std::vector<unsigned>> taps(out_width);
    std::vector<unsigned> inputs(in_width);
    std::iota(inputs.begin(), inputs.end(), 0u);
    shuffle(inputs, rng);
    // Cover every input once, spreading over outputs with spare capacity.
    std::size_t o = 0;
    for (auto b : inputs) {
        while (taps[o].size() >= max_fanin)
            o = (o + 1) % out_width;
        taps[o].push_back(b);
        o = (o + 1) % out_width;
    }
    for (unsigned j = 0; j < out_width; ++j) {
        auto& t = taps[j];
        while (t.size() < target[j]) {
            const unsigned b = static_cast<unsigned>(rng.below(in_width));
            if (std::find(t.begin(), t.end(), b) == t.end())
                t.push_back(b);
        }
        std::sort(t.begin(), t.end());
    }
    return taps;
}

} // namespace

std::vector<std::vector<unsigned>> random_xor_taps(unsigned in_width, unsigned out_width, unsigned max_fanin,
                                                   Rng& rng)
{
    if (out_width == 0 || out_width >= in_width)
        throw RemapError("XOR compression needs 0 < out < in");
    max_fanin = std::min(max_fanin, in_width);
    if (max_fanin < 2 || std::uint64_t{out_width} * max_fanin < in_width)
        throw RemapError("fan-in too small to consume every input");
    const unsigned min_fanin = std::max(2u, std::min(max_fanin, (max_fanin / 2) + 1));

    for (int attempt = 0; attempt < 64; ++attempt) {
        auto taps = xor_taps_once(in_width, out_width, min_fanin, max_fanin, rng);
        if (xor_rank(taps) == out_width)
            return taps;
    }
    throw RemapError("could not draw linearly independent XOR trees");
}

unsigned xor_rank(const std::vector<std::vector<unsigned>>& taps)
{
    std::vector<std::array<std::uint64_t, 2>> rows;
    for (const auto& t : taps) {
        std::array<std::uint64_t, 2> r{0, 0};
        for (auto b : t)
            r[b >> 6] ^= std::uint64_t{1} << (b & 63);
        rows.push_back(r);
    }
    unsigned rank = 0;
    for (unsigned col = 0; col < 128 && rank < rows.size(); ++col) {
        const auto bit = [col](const std::array<std::uint64_t, 2>& r) { return (r[col >> 6] >> (col & 63)) & 1; };
        std::size_t pivot = rank;
        while (pivot < rows.size() && !bit(rows[pivot]))
            ++pivot;
        if (pivot == rows.size())
            continue;
        std::swap(rows[rank], rows[pivot]);
        for (std::size_t i = 0; i < rows.size(); ++i)
            if (i != rank && bit(rows[i])) {
                rows[i][0] ^= rows[rank][0];
                rows[i][1] ^= rows[rank][1];
            }
        ++rank;
    }
    return rank;
}

unsigned sbox3_nonlinearity(const std::array<std::uint8_t, 8>& box)
{
    int best = 8;
    for (unsigned b = 1; b < 8; ++b) {
        for (unsigned a = 0; a < 8; ++a) {
            int walsh = 0;
            for (unsigned x = 0; x < 8; ++x) {
                const unsigned bit = (std::popcount(b & box[x]) + std::popcount(a & x)) & 1;
                walsh += bit ? -1 : 1;
            }
            best = std::min(best, (8 - std::abs(walsh)) / 2);
        }
    }
    return static_cast<unsigned>(best);
}

const std::vector<std::array<std::uint8_t, 8>>& default_sbox3_pool()
{
    static const auto pool = [] {
        std::vector<std::array<std::uint8_t, 8>> out;
        Rng rng(0x53b3);
        while (out.size() < 4) {
            std::array<std::uint8_t, 8> box{0, 1, 2, 3, 4, 5, 6, 7};
            shuffle(box, rng);
            if (sbox3_nonlinearity(box) == 2 && std::find(out.begin(), out.end(), box) == out.end())
                out.push_back(box);
        }
        return out;
    }();
    return pool;
}

LayeredFunction reference_r1()
{
    Rng rng(0x52310001);
    const std::array<std::array<std::uint8_t, 16>, 2> s4{kPresentSbox, kSpongentSbox};
    const auto& s3 = default_sbox3_pool();

    std::vector<Layer> layers;
    Layer l0;
    l0.in_width = 80;
    for (unsigned i = 0; i < 20; ++i)
        l0.parts.push_back({Primitive::sbox(s4[i % 2]), 4 * i});
    layers.push_back(std::move(l0));
    layers.push_back(pbox_layer(random_permutation(80, rng)));
    layers.push_back(sbox_layer(80, {}, s3, true, rng));
    layers.push_back(pbox_layer(random_permutation(80, rng)));
    layers.push_back(csbox_layer(80, random_xor_taps(80, 22, 32, rng)));
    layers.push_back(sbox_layer(22, {}, s3, true, rng));
    return LayeredFunction("R1", 80, std::move(layers));
}

} // namespace stbpu
