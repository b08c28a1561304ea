#pragma once

#include "stbpu/bits.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stbpu {

enum class PrimKind : std::uint8_t { sbox4, sbox3, pbox, csbox, xor_fold };

std::string_view prim_name(PrimKind k);

/// Published 4-bit S-boxes shipped as defaults for substitution layers.
inline constexpr std::array<std::uint8_t, 16> kPresentSbox = {0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD,
                                                              0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2};
inline constexpr std::array<std::uint8_t, 16> kSpongentSbox = {0xE, 0xD, 0xB, 0x0, 0x2, 0x1, 0x4, 0xF,
                                                               0x7, 0xA, 0x8, 0x5, 0x9, 0xC, 0x3, 0x6};

/// One hardware building block. Construct through the named factories, which
/// validate the structural invariants (bijective S-/P-boxes, strict csbox
/// compression, S-boxes no wider than 4 bits).
class Primitive {
public:
    static Primitive sbox(std::span<const std::uint8_t> table);
    static Primitive pbox(std::vector<unsigned> perm);
    static Primitive csbox(unsigned in_width, std::vector<std::vector<unsigned>> taps);
    static Primitive xor_fold(unsigned in_width);

    PrimKind kind() const { return kind_; }
    unsigned in_width() const { return in_; }
    unsigned out_width() const { return out_; }
    const std::vector<std::uint8_t>& table() const { return table_; }
    // pbox: output bit i takes input bit perm[i].
    const std::vector<unsigned>& perm() const { return perm_; }
    // csbox: output bit j is the XOR of input bits taps[j].
    const std::vector<std::vector<unsigned>>& taps() const { return taps_; }

    std::uint64_t eval_small(std::uint64_t in) const; // sbox only

    bool operator==(const Primitive&) const = default;

private:
    Primitive() = default;
    PrimKind kind_ = PrimKind::pbox;
    unsigned in_ = 0;
    unsigned out_ = 0;
    std::vector<std::uint8_t> table_;
    std::vector<unsigned> perm_;
    std::vector<std::vector<unsigned>> taps_;
};

struct Placement {
    Primitive prim;
    unsigned lo = 0; // first covered input bit of the layer

    bool operator==(const Placement&) const = default;
};

/// A parallel block of primitives. Output bits are the primitive outputs in
/// placement order, followed by uncovered input bits (pass-through wires) in
/// ascending order.
struct Layer {
    unsigned in_width = 0;
    std::vector<Placement> parts;

    unsigned out_width() const;
    bool operator==(const Layer&) const = default;
};

/// Transistor cost model; every field is a configuration choice.
struct CostTable {
    unsigned sbox4_depth = 6;
    unsigned sbox4_total = 28;
    unsigned sbox3_depth = 5;
    unsigned sbox3_total = 18;
    unsigned xor_level_depth = 4;
    unsigned xor_gate_total = 6;
    unsigned c1_limit = 45;
};

struct HardwareCost {
    unsigned critical_path_transistors = 0;
    unsigned total_transistors = 0;
    unsigned max_breadth = 0;
    unsigned wire_crossovers = 0; // worst single-wire crossover count over all P-boxes
    bool satisfies_c1 = true;
};

HardwareCost primitive_cost(const Primitive& p, const CostTable& t = {});
HardwareCost layer_cost(const Layer& l, const CostTable& t = {});

class RemapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Keyed compression function built from stacked primitive layers.
class LayeredFunction {
public:
    LayeredFunction() = default;
    LayeredFunction(std::string name, unsigned input_width, std::vector<Layer> layers);

    const std::string& name() const { return name_; }
    unsigned input_width() const { return in_; }
    unsigned output_width() const { return out_; }
    const std::vector<Layer>& layers() const { return layers_; }

    BitVec apply(const BitVec& input) const;

    bool operator==(const LayeredFunction& o) const
    {
        return name_ == o.name_ && in_ == o.in_ && layers_ == o.layers_;
    }

private:
    struct CompiledPart {
        PrimKind kind;
        unsigned lo, in, out_pos;
        const std::uint8_t* table;
        std::vector<std::array<std::uint64_t, 2>> masks; // csbox/xor_fold taps (absolute)
    };
    struct CompiledLayer {
        std::vector<CompiledPart> parts; // substitution and XOR parts
        // Pure wiring (P-boxes and pass-through) as per-byte gather tables.
        unsigned first_byte = 0;
        std::vector<std::array<std::uint64_t, 2>> gather; // [byte - first_byte][value]
        unsigned out_width = 0;
    };

    void compile();

    std::string name_;
    unsigned in_ = 0;
    unsigned out_ = 0;
    std::vector<Layer> layers_;
    std::vector<CompiledLayer> compiled_;
};

BitVec apply(const LayeredFunction& f, const BitVec& input);
HardwareCost cost_of(const LayeredFunction& f, const CostTable& t = {});

std::string serialize_netlist(const LayeredFunction& f);
LayeredFunction parse_netlist(std::string_view text);

LayeredFunction load_netlist_file(const std::string& path);
void save_netlist_file(const LayeredFunction& f, const std::string& path);

/// Helpers for building layers.
Layer sbox_layer(unsigned width, std::span<const std::array<std::uint8_t, 16>> boxes4,
                 std::span<const std::array<std::uint8_t, 8>> boxes3, bool prefer3, Rng& rng);
Layer pbox_layer(std::vector<unsigned> perm);
Layer csbox_layer(unsigned in_width, std::vector<std::vector<unsigned>> taps);

std::vector<unsigned> random_permutation(unsigned n, Rng& rng);
std::vector<unsigned> windowed_permutation(unsigned n, unsigned window, Rng& rng);
unsigned max_wire_crossover(const std::vector<unsigned>& perm);

/// Dense random XOR trees: every input is used at least once, each output
/// has fan-in in [max_fanin/2 + 1, max_fanin], rows linearly independent.
std::vector<std::vector<unsigned>> random_xor_taps(unsigned in_width, unsigned out_width, unsigned max_fanin,
                                                   Rng& rng);
/// GF(2) rank of the XOR rows.
unsigned xor_rank(const std::vector<std::vector<unsigned>>& taps);

/// Bijective 3-bit S-boxes with no affine structure (nonlinearity 2).
const std::vector<std::array<std::uint8_t, 8>>& default_sbox3_pool();
/// 3-bit S-box nonlinearity by exhaustive Walsh spectrum.
unsigned sbox3_nonlinearity(const std::array<std::uint8_t, 8>& box);

/// Hand-assembled 80->22 reference layout for the BTB index/tag/offset role:
/// S4 | P | S3 | P | CS(5 XOR levels) | S3, critical path 36 transistors.
LayeredFunction reference_r1();

} // namespace stbpu
