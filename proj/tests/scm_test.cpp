#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "iern/scm.hpp"

using namespace iern;

namespace {

DiscreteSCM d_independent_scm() {
    // P(Y|x,d) does not depend on d
    DiscreteSCM scm;
    scm.p_d = {0.3, 0.7};
    scm.p_x_given_d = {{0.6, 0.4}, {0.2, 0.8}};
    scm.p_y_given_xd = {
        {{0.25, 0.75}, {0.25, 0.75}},
        {{0.9, 0.1}, {0.9, 0.1}},
    };
    scm.validate();
    return scm;
}

}  // namespace

TEST_CASE("conditional equals the common row when Y does not depend on D") {
    const DiscreteSCM scm = d_independent_scm();
    const auto c = conditional(scm, 0);
    CHECK(c[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(c[1] == doctest::Approx(0.75).epsilon(1e-14));
    // and backdoor coincides with conditional: the backdoor path carries nothing
    const auto b = backdoor(scm, 0);
    CHECK(b[0] == doctest::Approx(c[0]).epsilon(1e-14));
    CHECK(b[1] == doctest::Approx(c[1]).epsilon(1e-14));
}

TEST_CASE("point-mass P(d|x) reduces the conditional to a single stratum") {
    DiscreteSCM scm;
    scm.p_d = {0.5, 0.5};
    scm.p_x_given_d = {{1.0, 0.0}, {0.0, 1.0}};  // x identifies d
    scm.p_y_given_xd = {
        {{0.8, 0.2}, {0.1, 0.9}},
        {{0.3, 0.7}, {0.55, 0.45}},
    };
    scm.validate();
    const auto c = conditional(scm, 0);  // observing x=0 implies d=0
    CHECK(c[0] == doctest::Approx(0.8));
    CHECK(c[1] == doctest::Approx(0.2));
}

TEST_CASE("uniform P(d) makes backdoor the plain stratum average") {
    DiscreteSCM scm = simpson_fixture();  // has uniform p_d
    const auto b = backdoor(scm, 1);
    CHECK(b[0] == doctest::Approx(0.5 * (0.1 + 0.6)).epsilon(1e-14));
    CHECK(b[1] == doctest::Approx(0.5 * (0.9 + 0.4)).epsilon(1e-14));
}

TEST_CASE("conditional is undefined for a zero-probability x") {
    DiscreteSCM scm;
    scm.p_d = {1.0};
    scm.p_x_given_d = {{1.0, 0.0}};
    scm.p_y_given_xd = {{{0.5, 0.5}}, {{0.5, 0.5}}};
    scm.validate();
    CHECK_THROWS_AS(conditional(scm, 1), ContractError);
    CHECK_NOTHROW(backdoor(scm, 1));  // defined for every x
}

TEST_CASE("random SCMs match the joint-table enumeration within 1e-12") {
    Rng rng(2024);
    for (int i = 0; i < 20; ++i) {
        const DiscreteSCM scm = random_scm(3, 3, 2, rng);
        for (int x = 0; x < 3; ++x) {
            const auto c1 = conditional(scm, x);
            const auto c2 = conditional_by_enumeration(scm, x);
            const auto b1 = backdoor(scm, x);
            const auto b2 = backdoor_by_enumeration(scm, x);
            for (int y = 0; y < 2; ++y) {
                CHECK(std::fabs(c1[y] - c2[y]) <= 1e-12);
                CHECK(std::fabs(b1[y] - b2[y]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("backdoor output is a proper distribution") {
    Rng rng(99);
    for (int i = 0; i < 20; ++i) {
        const DiscreteSCM scm = random_scm(4, 2, 3, rng);
        for (int x = 0; x < 2; ++x) {
            const auto b = backdoor(scm, x);
            double s = 0.0;
            for (double v : b) {
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("conditional == backdoor whenever X is independent of D") {
    Rng rng(7);
    DiscreteSCM scm = random_scm(3, 3, 3, rng);
    // overwrite P(X|D) with identical rows: P(d|x) == P(d)
    scm.p_x_given_d = {{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
    scm.validate();
    for (int x = 0; x < 3; ++x) {
        const auto c = conditional(scm, x);
        const auto b = backdoor(scm, x);
        for (int y = 0; y < 3; ++y) CHECK(c[y] == doctest::Approx(b[y]).epsilon(1e-13));
    }
}

TEST_CASE("grid search over small rational tables exhibits a Simpson reversal") {
    // enumeration over a coarse probability grid; the pinned fixture is one hit
    const double grid[] = {0.1, 0.3, 0.5, 0.7, 0.9};
    bool found = false;
    for (double skew : grid) {
        for (double a : grid) {
            for (double b : grid) {
                DiscreteSCM scm;
                scm.p_d = {0.5, 0.5};
                scm.p_x_given_d = {{skew, 1.0 - skew}, {1.0 - skew, skew}};
                scm.p_y_given_xd = {
                    {{1.0 - a, a}, {1.0 - b, b}},
                    {{a, 1.0 - a}, {b, 1.0 - b}},
                };
                scm.validate();
                for (int x = 0; x < 2 && !found; ++x) {
                    const auto c = conditional(scm, x);
                    const auto d = backdoor(scm, x);
                    if (argmax(std::span<const double>(c)) != argmax(std::span<const double>(d)))
                        found = true;
                }
            }
        }
    }
    CHECK(found);

    // the pinned fixture shows the reversal at x = 1
    const DiscreteSCM pinned = simpson_fixture();
    const auto c = conditional(pinned, 1);
    const auto b = backdoor(pinned, 1);
    CHECK(argmax(std::span<const double>(c)) == 0);
    CHECK(argmax(std::span<const double>(b)) == 1);
}

TEST_CASE("sample_do on a deterministic SCM is exact for any n") {
    DiscreteSCM scm;
    scm.p_d = {1.0};
    scm.p_x_given_d = {{1.0}};
    scm.p_y_given_xd = {{{0.0, 1.0, 0.0}}};
    scm.validate();
    Rng rng(5);
    const auto f = sample_do(scm, 0, 37, rng);
    CHECK(f[0] == 0.0);
    CHECK(f[1] == 1.0);
    CHECK(f[2] == 0.0);
}

TEST_CASE("sample_do with point-mass P(d) samples the single stratum") {
    DiscreteSCM scm;
    scm.p_d = {0.0, 1.0};
    scm.p_x_given_d = {{1.0}, {1.0}};
    scm.p_y_given_xd = {{{0.25, 0.75}, {1.0, 0.0}}};
    scm.validate();
    Rng rng(6);
    const auto f = sample_do(scm, 0, 200000, rng);
    CHECK(f[0] == doctest::Approx(1.0));  // only stratum 1's row, a point mass on y=0
    CHECK(f[1] == 0.0);
}

TEST_CASE("sample_do converges to backdoor, not to the conditional") {
    const DiscreteSCM scm = simpson_fixture();
    Rng rng(123);
    const std::int64_t n = 1000000;
    const auto f = sample_do(scm, 1, n, rng);
    const auto b = backdoor(scm, 1);
    const auto c = conditional(scm, 1);
    for (std::size_t y = 0; y < b.size(); ++y) {
        const double sigma = std::sqrt(b[y] * (1.0 - b[y]) / static_cast<double>(n));
        CHECK(std::fabs(f[y] - b[y]) <= 4.0 * sigma);
    }
    // conditional differs from backdoor by ~0.2 here; 1e6 draws resolve that
    CHECK(std::fabs(f[1] - c[1]) > 0.05);
}

TEST_CASE("scm text fixtures round-trip") {
    const DiscreteSCM scm = simpson_fixture();
    const std::string path = "scm_roundtrip.tmp";
    save_scm(scm, path);
    const DiscreteSCM loaded = load_scm(path);
    CHECK(loaded.p_d == scm.p_d);
    CHECK(loaded.p_x_given_d == scm.p_x_given_d);
    CHECK(loaded.p_y_given_xd == scm.p_y_given_xd);
    std::remove(path.c_str());
}

TEST_CASE("oracle battery passes with backdoor and fails with conditional") {
    auto checks = run_oracle_checks(17, 10, 100000);
    for (const auto& c : checks) {
        INFO(c.name << ": " << c.detail);
        CHECK(c.pass);
    }
    // mutation: wiring the observational conditional where the intervention
    // belongs must fail the Simpson fixture
    auto mutated = run_oracle_checks(17, 5, 10000, InterventionFn(
        [](const DiscreteSCM& scm, int x) { return conditional(scm, x); }));
    bool simpson_failed = false;
    for (const auto& c : mutated)
        if (c.name == "simpson_reversal" && !c.pass) simpson_failed = true;
    CHECK(simpson_failed);
}

TEST_CASE("oracle battery is deterministic under seed") {
    auto a = run_oracle_checks(3, 5, 20000);
    auto b = run_oracle_checks(3, 5, 20000);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pass == b[i].pass);
        CHECK(a[i].detail == b[i].detail);
    }
}
