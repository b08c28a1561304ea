#include "doctest.h"

#include "stbpu/st_manager.hpp"

#include <set>

using namespace stbpu;

namespace {

const ContextKey A{1, Privilege::user};
const ContextKey B{2, Privilege::user};
const ContextKey Ak{1, Privilege::kernel};

ThresholdConfig th(std::uint64_t m, std::uint64_t e) { return {m, e, 0.05, 0}; }

} // namespace

TEST_CASE("every third misprediction re-keys the context")
{
    StManager st(th(3, 5), 42);
    st.assign_token(A);
    st.assign_token(B);
    const SecretToken b0 = st.token(B);

    std::vector<std::size_t> fired;
    for (std::size_t i = 1; i <= 12; ++i) {
        const SecretToken before = st.token(A);
        auto n = st.on_event(A, CounterKind::misp);
        if (n) {
            fired.push_back(i);
            CHECK(n->old_token == before);
            CHECK(n->new_token == st.token(A));
            CHECK_FALSE(n->new_token == before);
            CHECK(st.entry(A).misp_counter == 3);
            CHECK(st.entry(A).evict_counter == 5);
        } else {
            CHECK(st.token(A) == before);
        }
    }
    CHECK(fired == std::vector<std::size_t>{3, 6, 9, 12});
    CHECK(st.entry(A).rerandomization_count == 4);
    // B untouched throughout
    CHECK(st.token(B) == b0);
    CHECK(st.entry(B).misp_counter == 3);
    CHECK(st.entry(B).rerandomization_count == 0);
}

TEST_CASE("either counter resets both")
{
    StManager st(th(3, 4), 1);
    st.assign_token(A);
    st.on_event(A, CounterKind::misp);
    st.on_event(A, CounterKind::misp);
    CHECK(st.entry(A).misp_counter == 1);
    for (int i = 0; i < 3; ++i)
        CHECK_FALSE(st.on_event(A, CounterKind::evict));
    CHECK(st.on_event(A, CounterKind::evict));
    CHECK(st.entry(A).misp_counter == 3);
    CHECK(st.entry(A).evict_counter == 4);
}

TEST_CASE("zero threshold disables a counter")
{
    StManager st(th(0, 2), 1);
    st.assign_token(A);
    for (int i = 0; i < 100; ++i)
        CHECK_FALSE(st.on_event(A, CounterKind::misp));
    CHECK_FALSE(st.on_event(A, CounterKind::evict));
    CHECK(st.on_event(A, CounterKind::evict));
}

TEST_CASE("threshold of one re-keys on every event")
{
    StManager st(th(1, 1), 9);
    st.assign_token(A);
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen{{st.token(A).psi, st.token(A).phi}};
    for (int i = 0; i < 50; ++i) {
        CHECK(st.on_event(A, i % 2 ? CounterKind::misp : CounterKind::evict));
        seen.insert({st.token(A).psi, st.token(A).phi});
    }
    CHECK(seen.size() == 51);
}

TEST_CASE("tage events fall back to the misprediction counter")
{
    StManager plain(th(2, 0), 1);
    plain.assign_token(A);
    CHECK_FALSE(plain.on_event(A, CounterKind::tage));
    CHECK(plain.on_event(A, CounterKind::misp));

    ThresholdConfig t = th(2, 0);
    t.tage = 3;
    StManager sep(t, 1);
    sep.assign_token(A);
    CHECK_FALSE(sep.on_event(A, CounterKind::tage));
    CHECK_FALSE(sep.on_event(A, CounterKind::tage));
    CHECK(sep.entry(A).misp_counter == 2);
    CHECK(sep.on_event(A, CounterKind::tage));
}

TEST_CASE("privilege levels are separate contexts")
{
    StManager st(th(3, 3), 5);
    st.assign_token(A);
    st.assign_token(Ak);
    CHECK_FALSE(st.token(A) == st.token(Ak));
}

TEST_CASE("shared tokens alias and re-key together")
{
    StManager st(th(2, 0), 5);
    st.assign_token(A);
    st.assign_token(B, A);
    CHECK(st.token(A) == st.token(B));
    st.on_event(B, CounterKind::misp);
    st.on_event(B, CounterKind::misp);
    CHECK(st.token(A) == st.token(B));
    CHECK(st.entry(B).rerandomization_count == 1);
    // counters stay per context
    CHECK(st.entry(A).misp_counter == 2);
}

TEST_CASE("switching away and back keeps the token and counters")
{
    StManager st(th(5, 5), 3);
    st.assign_token(A);
    st.assign_token(B);
    st.activate(0, A);
    st.on_event(A, CounterKind::misp);
    st.on_event(A, CounterKind::misp);
    const SecretToken a = st.token(A);
    st.context_switch(A, B);
    CHECK(st.active_token(0) == st.token(B));
    st.on_event(B, CounterKind::misp);
    st.context_switch(B, A);
    CHECK(st.active_token(0) == a);
    CHECK(st.entry(A).misp_counter == 3);
    CHECK(st.entry(B).misp_counter == 4);
}

TEST_CASE("registration errors")
{
    StManager st(th(3, 3), 1);
    st.assign_token(A);
    CHECK_THROWS_AS(st.assign_token(A), StError);
    CHECK_THROWS_AS(st.on_event(B, CounterKind::misp), StError);
    CHECK_THROWS_AS(st.active_token(0), StError);
    CHECK_THROWS_AS(st.assign_token(B, Ak), StError);
}

TEST_CASE("same seed, same tokens")
{
    StManager x(th(3, 3), 77), y(th(3, 3), 77), z(th(3, 3), 78);
    x.assign_token(A);
    y.assign_token(A);
    z.assign_token(A);
    CHECK(x.token(A) == y.token(A));
    CHECK_FALSE(x.token(A) == z.token(A));
}
