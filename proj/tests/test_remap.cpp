#include "doctest.h"

#include "stbpu/remap.hpp"

#include <numeric>

using namespace stbpu;

namespace {

LayeredFunction single(unsigned width, Primitive p)
{
    Layer l;
    l.in_width = width;
    l.parts.push_back({std::move(p), 0});
    return LayeredFunction("t", width, {l});
}

} // namespace

TEST_CASE("identity pbox passes bits unchanged")
{
    auto f = single(4, Primitive::pbox({0, 1, 2, 3}));
    CHECK(f.apply(BitVec(4, 0b1011)).lo() == 0b1011);
}

TEST_CASE("PRESENT S-box lookup")
{
    auto f = single(4, Primitive::sbox(kPresentSbox));
    // Published table, read directly rather than through the layer code.
    const std::uint8_t present[16] = {0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2};
    for (unsigned x = 0; x < 16; ++x)
        CHECK(f.apply(BitVec(4, x)).lo() == present[x]);
    CHECK(f.apply(BitVec(4, 0)).lo() == 0xC);
}

TEST_CASE("xor_fold 8 to 4")
{
    auto f = single(8, Primitive::xor_fold(8));
    CHECK(f.output_width() == 4);
    CHECK(f.apply(BitVec(8, 0b11001010)).lo() == 0b0110);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto x = rng.below(256);
        CHECK(f.apply(BitVec(8, x)).lo() == ((x & 0xF) ^ (x >> 4)));
    }
}

TEST_CASE("pbox routes output i from input perm[i]")
{
    auto f = single(5, Primitive::pbox({4, 0, 3, 1, 2}));
    const std::uint64_t x = 0b10110;
    auto y = f.apply(BitVec(5, x)).lo();
    const unsigned perm[5] = {4, 0, 3, 1, 2};
    for (unsigned i = 0; i < 5; ++i)
        CHECK(((y >> i) & 1) == ((x >> perm[i]) & 1));
}

TEST_CASE("csbox outputs are parities of their taps")
{
    std::vector<std::vector<unsigned>> taps = {{0, 1, 2}, {3, 4, 5, 6, 7}, {1, 7}};
    auto f = single(8, Primitive::csbox(8, taps));
    for (unsigned x = 0; x < 256; ++x) {
        auto y = f.apply(BitVec(8, x)).lo();
        for (unsigned j = 0; j < taps.size(); ++j) {
            unsigned par = 0;
            for (auto b : taps[j])
                par ^= (x >> b) & 1;
            CHECK(((y >> j) & 1) == par);
        }
    }
}

TEST_CASE("pass-through wires follow primitive outputs")
{
    Layer l;
    l.in_width = 10;
    l.parts.push_back({Primitive::sbox(kSpongentSbox), 3});
    Layer l2;
    l2.in_width = 10;
    l2.parts.push_back({Primitive::pbox({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), 0});
    LayeredFunction f("t", 10, {l, l2});
    // bits 3..6 -> S-box -> out 0..3; bits 0,1,2,7,8,9 -> out 4..9
    const std::uint64_t x = 0b1011010110;
    auto y = f.apply(BitVec(10, x)).lo();
    CHECK((y & 0xF) == kSpongentSbox[(x >> 3) & 0xF]);
    const unsigned pass[6] = {0, 1, 2, 7, 8, 9};
    for (unsigned i = 0; i < 6; ++i)
        CHECK(((y >> (4 + i)) & 1) == ((x >> pass[i]) & 1));
}

TEST_CASE("primitive validation")
{
    std::array<std::uint8_t, 16> dup{};
    CHECK_THROWS_AS(Primitive::sbox(dup), RemapError);
    std::array<std::uint8_t, 32> wide{};
    CHECK_THROWS_AS(Primitive::sbox(wide), RemapError);
    CHECK_THROWS_AS(Primitive::pbox({0, 0, 1}), RemapError);
    CHECK_THROWS_AS(Primitive::csbox(4, {{0, 1}, {2}, {3}, {0}}), RemapError); // not compressing
    CHECK_THROWS_AS(Primitive::csbox(4, {{0, 1}, {2}}), RemapError);           // bit 3 unused
    CHECK_THROWS_AS(Primitive::xor_fold(7), RemapError);
}

TEST_CASE("S-box layers are bijections on covered bits")
{
    for (const auto& box : {kPresentSbox, kSpongentSbox}) {
        auto f = single(4, Primitive::sbox(box));
        std::vector<bool> seen(16, false);
        for (unsigned x = 0; x < 16; ++x)
            seen[f.apply(BitVec(4, x)).lo()] = true;
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
    }
    for (const auto& box : default_sbox3_pool()) {
        auto f = single(3, Primitive::sbox(box));
        std::vector<bool> seen(8, false);
        for (unsigned x = 0; x < 8; ++x)
            seen[f.apply(BitVec(3, x)).lo()] = true;
        CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
        CHECK(sbox3_nonlinearity(box) == 2);
    }
}

TEST_CASE("nonlinearity of affine and identity boxes is zero")
{
    CHECK(sbox3_nonlinearity({0, 1, 2, 3, 4, 5, 6, 7}) == 0);
    CHECK(sbox3_nonlinearity({7, 6, 5, 4, 3, 2, 1, 0}) == 0);
}

TEST_CASE("cost composition")
{
    CHECK(cost_of(LayeredFunction{}).critical_path_transistors == 0);
    CHECK(cost_of(LayeredFunction{}).total_transistors == 0);
    CHECK(cost_of(LayeredFunction{}).satisfies_c1);

    std::vector<Layer> layers;
    for (int i = 0; i < 10; ++i) {
        Layer l;
        l.in_width = 8;
        l.parts.push_back({Primitive::sbox(kPresentSbox), 0});
        l.parts.push_back({Primitive::sbox(kSpongentSbox), 4});
        layers.push_back(l);
    }
    LayeredFunction deep("deep", 8, layers);
    auto c = cost_of(deep);
    CHECK(c.critical_path_transistors == 60);
    CHECK(c.total_transistors == 10 * 2 * 28);
    CHECK_FALSE(c.satisfies_c1);

    // 32-input XOR tree: 5 levels, 31 gates.
    std::vector<unsigned> all(32);
    std::iota(all.begin(), all.end(), 0u);
    auto cs = primitive_cost(Primitive::csbox(32, {all}));
    CHECK(cs.critical_path_transistors == 20);
    CHECK(cs.total_transistors == 31 * 6);
    CHECK(primitive_cost(Primitive::xor_fold(16)).total_transistors == 48);
    CHECK(primitive_cost(Primitive::xor_fold(16)).critical_path_transistors == 4);
}

TEST_CASE("appending a layer never lowers any cost field")
{
    Rng rng(11);
    std::vector<Layer> layers;
    HardwareCost prev;
    unsigned w = 40;
    const std::array<std::array<std::uint8_t, 16>, 1> s4{kPresentSbox};
    for (int i = 0; i < 6; ++i) {
        if (i % 3 == 0)
            layers.push_back(sbox_layer(w, s4, default_sbox3_pool(), false, rng));
        else if (i % 3 == 1)
            layers.push_back(pbox_layer(random_permutation(w, rng)));
        else {
            layers.push_back(csbox_layer(w, random_xor_taps(w, w - 6, 4, rng)));
            w -= 6;
        }
        auto c = cost_of(LayeredFunction("m", 40, layers));
        CHECK(c.critical_path_transistors >= prev.critical_path_transistors);
        CHECK(c.total_transistors >= prev.total_transistors);
        CHECK(c.max_breadth >= prev.max_breadth);
        CHECK(c.wire_crossovers >= prev.wire_crossovers);
        prev = c;
    }
}

TEST_CASE("crossover count")
{
    CHECK(max_wire_crossover({0, 1, 2, 3}) == 0);
    CHECK(max_wire_crossover({3, 2, 1, 0}) == 3);
    CHECK(max_wire_crossover({1, 0, 2, 3}) == 1);
}

TEST_CASE("reference R1 layout")
{
    auto r1 = reference_r1();
    CHECK(r1.input_width() == 80);
    CHECK(r1.output_width() == 22);
    auto c = cost_of(r1);
    CHECK(c.critical_path_transistors == 36);
    CHECK(c.satisfies_c1);
    for (const auto& l : r1.layers())
        for (const auto& p : l.parts)
            CHECK(p.prim.in_width() <= (p.prim.kind() == PrimKind::sbox4 || p.prim.kind() == PrimKind::sbox3 ? 4u : 128u));
}

TEST_CASE("netlist round trip")
{
    auto r1 = reference_r1();
    const auto text = serialize_netlist(r1);
    CHECK(text.rfind("REMAP R1 in=80 out=22\n", 0) == 0);
    auto back = parse_netlist(text);
    CHECK(back == r1);
    CHECK(serialize_netlist(back) == text);
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
        auto x = rng.bits(80);
        REQUIRE(back.apply(x) == r1.apply(x));
    }
}

TEST_CASE("netlist errors")
{
    CHECK_THROWS_WITH_AS(parse_netlist(""), "no layers", RemapError);
    CHECK_THROWS_WITH_AS(parse_netlist("REMAP x in=8 out=4\n"), "no layers", RemapError);

    // L1 addresses bits beyond the 4-bit output of L0.
    const char* bad = "REMAP x in=8 out=4\n"
                      "L0: xor_fold(8)@0-7\n"
                      "L1: pbox(0,1,2,3,4,5,6,7)@0-7\n";
    try {
        parse_netlist(bad);
        FAIL("expected error");
    } catch (const RemapError& e) {
        CHECK(std::string(e.what()).find("L1") != std::string::npos);
    }

    const char* wrong_out = "REMAP x in=8 out=3\nL0: xor_fold(8)@0-7\n";
    try {
        parse_netlist(wrong_out);
        FAIL("expected error");
    } catch (const RemapError& e) {
        CHECK(std::string(e.what()).find("L0") != std::string::npos);
    }

    // Bits 4..7 never pass through a primitive.
    CHECK_THROWS_AS(parse_netlist("REMAP x in=8 out=8\nL0: sbox4(C56B90AD3EF84712)@0-3\n"), RemapError);
    CHECK_THROWS_AS(parse_netlist("REMAP x in=4 out=4\nL0: sbox4(C56B90AD3EF8471)@0-3\n"), RemapError);
    CHECK_THROWS_AS(parse_netlist("REMAP x in=4 out=4\nL0: frob(1)@0-3\n"), RemapError);
}

TEST_CASE("apply rejects wrong input width")
{
    auto r1 = reference_r1();
    CHECK_THROWS_AS(r1.apply(BitVec(79, 1)), RemapError);
}
