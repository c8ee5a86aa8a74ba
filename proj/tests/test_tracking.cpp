#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "corpus.hpp"
#include "flatforge/tracking.hpp"

using namespace flatforge;
using flatforge::testing::academic;
using flatforge::testing::vehicle;
using flatforge::testing::vtol;

namespace {

struct Synth {
    LoadedSystem ls;
    FlatnessReport rep;
    Linearization lin;
    BrunovskyState b;
    GainSet gains;
    Controller ctrl;
};

Synth make(LoadedSystem ls, FeedbackVariant variant, std::vector<double> poles1,
           std::vector<double> poles2, std::mt19937_64& rng) {
    FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
    Linearization lin = linearize(ls.sys, ls.spec, rep, variant, rng);
    BrunovskyState b = build_brunovsky(lin.chain, variant);
    GainSet g = place_poles(b.kappa, poles1, poles2);
    Controller c = synthesize(ls.spec, b, g, ls.sys.params);
    return {std::move(ls), rep, std::move(lin), std::move(b), std::move(g), std::move(c)};
}

}  // namespace

TEST_CASE("pole placement expands characteristic polynomials") {
    GainSet g = place_poles(MultiIndex{0, 3}, {}, std::vector<double>{-1.0, -2.0, -3.0});
    CHECK(g.a[0].empty());
    REQUIRE(g.a[1].size() == 3);
    CHECK(g.a[1][0] == doctest::Approx(6.0));
    CHECK(g.a[1][1] == doctest::Approx(11.0));
    CHECK(g.a[1][2] == doctest::Approx(6.0));

    GainSet r = place_poles(MultiIndex{0, 3}, {}, std::vector<double>{-2.0, -2.0, -2.0});
    CHECK(r.a[1] == std::vector<double>{8.0, 12.0, 6.0});

    CHECK_THROWS_AS(place_poles(MultiIndex{1, 3}, {}, std::vector<double>{-1.0, -2.0, -3.0}),
                    CountMismatch);
    CHECK_THROWS_AS(
        place_poles(MultiIndex{0, 2}, {},
                    std::vector<double>{-1.0, std::numeric_limits<double>::infinity()}),
        CountMismatch);
}

TEST_CASE("v-chain for the vehicle matches the triangular solve") {
    std::mt19937_64 rng(41);
    auto s = make(vehicle(), FeedbackVariant::Primary, {}, {-1.0, -2.0, -3.0}, rng);
    REQUIRE(s.ctrl.chain.size() == 4);
    CHECK(s.ctrl.chain[0].v == VarId::new_input(1, 0));
    CHECK(s.ctrl.chain[0].rhs == parse_expr("yd1"));
    CHECK(s.ctrl.chain[1].rhs == parse_expr("yd1_1"));
    CHECK(s.ctrl.chain[2].rhs == parse_expr("yd1_2"));
    CHECK(s.ctrl.chain[3].v == VarId::new_input(2, 0));

    // v2 = yd2_3 - sum_beta a2[beta] (xB_beta - yd2_beta) with the v-form components
    Expr expected = parse_expr("yd2_3");
    for (int beta = 0; beta < 3; ++beta) {
        Expr err = s.b.v_form[1][beta] - var(VarId::ref(2, beta));
        expected = expected - scale(err, rational_from_double(s.gains.a[1][beta]));
    }
    CHECK(s.ctrl.chain[3].rhs == expected);
}

TEST_CASE("v-chain for the VTOL matches the worked equation system") {
    std::mt19937_64 rng(42);
    auto s = make(vtol(), FeedbackVariant::Primary, {}, std::vector<double>(6, -2.0), rng);
    REQUIRE(s.ctrl.chain.size() == 6);
    for (int lambda = 0; lambda <= 4; ++lambda) {
        CHECK(s.ctrl.chain[lambda].v == VarId::new_input(1, lambda));
        CHECK(s.ctrl.chain[lambda].rhs == var(VarId::ref(1, lambda)));
    }
    Expr expected = parse_expr("yd2_6");
    for (int beta = 0; beta < 6; ++beta) {
        Expr err = s.b.v_form[1][beta] - var(VarId::ref(2, beta));
        expected = expected - scale(err, rational_from_double(s.gains.a[1][beta]));
    }
    CHECK(s.ctrl.chain[5].rhs == expected);
}

TEST_CASE("lead channels with positive kappa back-substitute solved jets") {
    std::mt19937_64 rng(43);
    // alternate vehicle variant: kappa = (2, 1), lead channel 2
    auto s = make(vehicle(), FeedbackVariant::Alternate, {-1.0, -2.0}, {-3.0}, rng);
    REQUIRE(s.ctrl.chain.size() == 4);
    CHECK(s.ctrl.chain[0].v == VarId::new_input(2, 0));
    CHECK(s.ctrl.chain[1].v == VarId::new_input(2, 1));
    // v2_1 = yd2_2 - a^{2,0} (v2 - yd2_1)
    Expr expected = parse_expr("yd2_2") -
                    scale(var(VarId::new_input(2, 0)) - var(VarId::ref(2, 1)),
                          rational_from_double(s.gains.a[1][0]));
    CHECK(s.ctrl.chain[1].rhs == expected);
    // the final lead jet and the single channel-1 equation follow
    CHECK(s.ctrl.chain[2].v == VarId::new_input(2, 2));
    CHECK(s.ctrl.chain[3].v == VarId::new_input(1, 0));
}

TEST_CASE("the chain is strictly triangular for every corpus system") {
    std::mt19937_64 rng(44);
    for (auto loader : {vehicle, academic, vtol}) {
        for (auto variant : {FeedbackVariant::Primary, FeedbackVariant::Alternate}) {
            auto ls = loader();
            FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
            Linearization lin = linearize(ls.sys, ls.spec, rep, variant, rng);
            BrunovskyState b = build_brunovsky(lin.chain, variant);
            std::vector<double> p1(b.kappa.a1, -2.0), p2(b.kappa.a2, -2.0);
            GainSet g = place_poles(b.kappa, p1, p2);
            auto chain = build_v_chain(b, g);
            std::vector<VarId> solved;
            for (const auto& entry : chain) {
                for (const VarId& v : free_variables(entry.rhs)) {
                    if (v.kind != VarKind::NewInputJet) continue;
                    CHECK(std::find(solved.begin(), solved.end(), v) != solved.end());
                }
                solved.push_back(entry.v);
            }
        }
    }
}

TEST_CASE("zero gains reduce the chain to the reference jets") {
    std::mt19937_64 rng(45);
    auto ls = vehicle();
    FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
    Linearization lin = linearize(ls.sys, ls.spec, rep, FeedbackVariant::Primary, rng);
    BrunovskyState b = build_brunovsky(lin.chain, FeedbackVariant::Primary);
    GainSet zero;
    zero.a[1] = {0.0, 0.0, 0.0};
    auto chain = build_v_chain(b, zero);
    CHECK(chain[3].rhs == parse_expr("yd2_3"));
}

TEST_CASE("synthesized law depends on state, parameters and reference jets only") {
    std::mt19937_64 rng(46);
    for (auto loader : {vehicle, vtol}) {
        auto ls = loader();
        FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
        Linearization lin = linearize(ls.sys, ls.spec, rep, FeedbackVariant::Primary, rng);
        BrunovskyState b = build_brunovsky(lin.chain, FeedbackVariant::Primary);
        std::vector<double> p1(b.kappa.a1, -2.0), p2(b.kappa.a2, -2.0);
        Controller c = synthesize(ls.spec, b, place_poles(b.kappa, p1, p2), ls.sys.params);
        for (const auto& law : c.law) {
            for (const VarId& v : free_variables(law)) {
                bool ok = v.kind == VarKind::State || v.kind == VarKind::Param ||
                          (v.kind == VarKind::RefJet && v.order <= c.R[v.index]);
                CAPTURE(v.name());
                CHECK(ok);
            }
        }
    }
    auto ac = academic();
    FlatnessReport rep = analyze(ac.sys, ac.spec, rng);
    Linearization lin = linearize(ac.sys, ac.spec, rep, FeedbackVariant::Primary, rng);
    BrunovskyState b = build_brunovsky(lin.chain, FeedbackVariant::Primary);
    std::vector<double> p2(b.kappa.a2, -2.0);
    CHECK_THROWS_AS(synthesize(ac.spec, b, place_poles(b.kappa, {}, p2), ac.sys.params),
                    MissingParameterization);
}

TEST_CASE("on-reference states reproduce the open-loop input") {
    std::mt19937_64 rng(47);
    for (auto loader : {vehicle, vtol}) {
        auto s = [&] {
            auto ls = loader();
            FlatnessReport rep = analyze(ls.sys, ls.spec, rng);
            return make(std::move(ls), FeedbackVariant::Primary, {},
                        std::vector<double>(rep.R.a2, -2.0), rng);
        }();
        // sample a consistent jet trajectory point, put the state exactly on
        // the reference, and compare against F_u
        OutputJets jets = output_derivatives(s.ls.sys, s.ls.spec.phi, s.rep.R);
        std::vector<VarId> vars;
        for (int j = 0; j < 2; ++j) {
            for (const auto& e : jets.ch[j]) collect_free_variables(e, vars);
        }
        std::sort(vars.begin(), vars.end());
        vars.erase(std::unique(vars.begin(), vars.end()), vars.end());

        int checked = 0;
        for (int t = 0; t < 50 && checked < 20; ++t) {
            Point p = s.ls.sys.dom.sample(vars, rng);
            RefBundle ref;
            Point y = p;
            try {
                for (int j = 1; j <= 2; ++j) {
                    ref.yd[j - 1].resize(s.rep.R[j] + 1);
                    for (int alpha = 0; alpha <= s.rep.R[j]; ++alpha) {
                        double val = evaluate(jets.at(j, alpha), p);
                        ref.yd[j - 1][alpha] = val;
                        y[VarId::ref(j, alpha)] = val;
                    }
                }
                std::vector<double> x(s.ls.sys.n);
                for (int i = 0; i < s.ls.sys.n; ++i) {
                    x[i] = evaluate((*s.ls.spec.f_x)[i], y);
                }
                Eigen::Vector2d u = eval_control(s.ctrl, x, ref);
                for (int j = 0; j < 2; ++j) {
                    double exact = evaluate((*s.ls.spec.f_u)[j], y);
                    CHECK(std::abs(u(j) - exact) < 1e-12 * (1.0 + std::abs(exact)));
                }
            } catch (const DomainError&) {
                continue;
            }
            ++checked;
        }
        CHECK(checked == 20);
    }
}

TEST_CASE("hover equilibrium of the VTOL controller") {
    std::mt19937_64 rng(48);
    auto s = make(vtol(), FeedbackVariant::Primary, {}, std::vector<double>(6, -2.0), rng);
    const double eps = s.ls.sys.params.at("epsilon");
    RefBundle ref;
    ref.yd[0].assign(5, 0.0);
    ref.yd[1].assign(7, 0.0);
    ref.yd[1][0] = 1.0 + eps;  // constant altitude 1: y2 = z + epsilon at hover
    std::vector<double> x = {0.0, 0.0, 1.0, 0.0, 0.0, 0.0};
    Eigen::Vector2d u = eval_control(s.ctrl, x, ref);
    CHECK(u(0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(u(1)) < 1e-12);
}

TEST_CASE("the singularity guard trips near the heading pole") {
    std::mt19937_64 rng(49);
    auto s = make(vehicle(), FeedbackVariant::Primary, {}, {-1.0, -2.0, -3.0}, rng);
    RefBundle ref;
    ref.yd[0] = {0.0, 0.5, 0.0};
    ref.yd[1] = {0.0, 1.0, 0.0, 0.0};
    std::vector<double> x = {0.0, 0.0, std::numbers::pi / 2.0 - 1e-10};
    CHECK_THROWS_AS(eval_control(s.ctrl, x, ref), SingularityEncountered);

    // short reference bundles are rejected
    RefBundle shortref;
    shortref.yd[0] = {0.0};
    shortref.yd[1] = {0.0, 1.0, 0.0, 0.0};
    std::vector<double> ok = {0.0, 0.0, 0.3};
    CHECK_THROWS_AS(eval_control(s.ctrl, ok, shortref), CountMismatch);
}
