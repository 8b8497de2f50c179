#include "catch_amalgamated.hpp"

#include "consensus_opt/reference_cases.hpp"
#include "consensus_opt/stability.hpp"
#include "test_support.hpp"

using namespace consensus_opt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using reference::mat;
using reference::vec;

namespace {

// Hurwitz by eigenvalues, independent of the trace/determinant shortcut.
bool hurwitz_by_eigenvalues(const Matrix& z) {
    return Eigen::EigenSolver<Matrix>(z).eigenvalues().real().maxCoeff() < 0.0;
}

} // namespace

TEST_CASE("digraphs") {
    CHECK(digraph_of(Matrix::Zero(3, 3)).edges().empty());

    const auto sys = reference::three_agent_system();
    const auto g = digraph_of(ConsensusMatrix(sys.matrix(0)));
    // a_12 = 3 is the weight of the edge 2 -> 1
    CHECK(g.has_edge(1, 0));
    CHECK(g.has_edge(0, 1));
    CHECK(g.has_edge(1, 2));
    CHECK_FALSE(g.has_edge(2, 1));
    for (const auto& e : g.edges()) {
        CHECK(e.from != e.to);
        CHECK(e.weight == sys.matrix(0)(e.to, e.from));
    }
    CHECK(g.has_root());

    const auto four = reference::four_agent_system();
    const auto comps = digraph_of(ConsensusMatrix(four.matrix(0))).weak_components();
    REQUIRE(comps.size() == 2);
    CHECK(comps[0] == std::vector<Eigen::Index>{0, 1});
    CHECK(comps[1] == std::vector<Eigen::Index>{2, 3});

    CHECK(digraph_of(sys.matrix(0), 2.5).edges().size() == 1);
    CHECK_THROWS_AS(digraph_of(sys.matrix(0), -1.0), Error);
}

TEST_CASE("rank test on named matrices") {
    const auto sys = reference::three_agent_system();
    CHECK(has_rooted_out_branching(ConsensusMatrix(sys.matrix(0))));
    CHECK(has_rooted_out_branching(ConsensusMatrix(sys.matrix(1))));
    const auto four = reference::four_agent_system();
    CHECK_FALSE(has_rooted_out_branching(ConsensusMatrix(four.matrix(0))));
    CHECK_FALSE(has_rooted_out_branching(ConsensusMatrix(four.matrix(1))));
    CHECK_FALSE(has_rooted_out_branching(ConsensusMatrix(Matrix::Zero(3, 3))));
    CHECK(rank_test(Matrix::Zero(3, 3)).rank == 0);

    const auto near = rank_test(mat(3, {-1, 1, 0, 0, 0, 0, 0, 3e-9, -3e-9}));
    CHECK(near.marginal);
}

TEST_CASE("rank agrees with graph reachability and with the reduced determinant") {
    std::mt19937_64 rng(61);
    int with = 0;
    int without = 0;
    for (int k = 0; k < 500; ++k) {
        const Matrix a = testing_support::random_consensus(rng, 3, k % 2 ? 0.35 : 0.6);
        const ConsensusMatrix c(a);
        const bool rank = has_rooted_out_branching(c);
        CHECK(rank == digraph_of(c).has_root());

        const Matrix bar = reduce(reference::system_of({a})).bar_matrices[0];
        const double det = bar.determinant();
        const double t = bar.trace();
        CHECK(rank == (det > default_tolerances().rank * bar.squaredNorm()));
        // sign structure of the reduced trace and determinant
        CHECK(t <= 1e-14);
        CHECK(det >= -1e-12 * std::max(1.0, bar.squaredNorm()));
        if (a.cwiseAbs().maxCoeff() > 0.0) CHECK(t < 0.0);
        rank ? ++with : ++without;
    }
    CHECK(with > 50);
    CHECK(without > 50);

    for (Eigen::Index n = 2; n <= 6; ++n) {
        for (int k = 0; k < 100; ++k) {
            const ConsensusMatrix c(testing_support::random_consensus(rng, n, 0.3));
            CHECK(has_rooted_out_branching(c) == digraph_of(c).has_root());
        }
    }
}

TEST_CASE("reduced trace and determinant formulas") {
    std::mt19937_64 rng(62);
    for (int k = 0; k < 100; ++k) {
        const Matrix a = testing_support::random_consensus(rng, 3);
        const Matrix bar = reduce(reference::system_of({a})).bar_matrices[0];
        const double a12 = a(0, 1), a13 = a(0, 2), a21 = a(1, 0), a23 = a(1, 2), a31 = a(2, 0), a32 = a(2, 1);
        CHECK_THAT(bar.trace(), WithinAbs(-(a12 + a13 + a21 + a23 + a31 + a32), 1e-12));
        const double d = (a12 + a13 + a21) * (a23 + a31 + a32) - (a23 - a13) * (a21 - a31);
        CHECK_THAT(bar.determinant(), WithinAbs(d, 1e-10));
        CHECK(d >= -1e-12);

        const Matrix b = testing_support::random_consensus(rng, 3);
        const Matrix bar2 = reduce(reference::system_of({b})).bar_matrices[0];
        CHECK((bar2 * bar).trace() >= -1e-12);
    }
}

TEST_CASE("determinant quadratic") {
    std::mt19937_64 rng(63);
    for (int k = 0; k < 50; ++k) {
        const Matrix x = Matrix::Random(2, 2);
        const Matrix y = Matrix::Random(2, 2);
        const auto q = det_quadratic_2x2(x, y);
        for (double a : {-1.0, 0.0, 0.3, 1.0, 2.5}) CHECK_THAT(q(a), WithinAbs((x + a * y).determinant(), 1e-12));
        double brute = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 10000; ++i) brute = std::min(brute, q(i / 10000.0));
        CHECK(q.min_unit() <= brute + 1e-12);
        CHECK(q.min_unit() >= brute - 1e-7);
    }
}

TEST_CASE("hull check on the three-agent pair") {
    const auto sys = reference::three_agent_system();
    const auto h = hull_branching_check_n3(ConsensusMatrix(sys.matrix(0)), ConsensusMatrix(sys.matrix(1)));
    CHECK(h.all_branching);
    CHECK(h.min_value > 0.0);
    for (int i = 0; i <= 100; ++i) {
        const double a = i / 100.0;
        const Matrix m = a * sys.matrix(0) + (1 - a) * sys.matrix(1);
        CHECK(rank_test(m).rank == 2);
        CHECK_THAT(h.det_poly(a), WithinAbs((a * h.bar1 + (1 - a) * h.bar2).determinant(), 1e-12));
    }
}

TEST_CASE("hull check failures") {
    const ConsensusMatrix a(reference::three_agent_system().matrix(0));
    const ConsensusMatrix zero(Matrix::Zero(3, 3));
    const auto h = hull_branching_check_n3(a, zero);
    CHECK_FALSE(h.all_branching);
    CHECK(h.failure_alpha == 0.0);

    const ConsensusMatrix rank1(mat(3, {-1, 1, 0, 0, 0, 0, 0, 0, 0}));
    const auto same = hull_branching_check_n3(rank1, rank1);
    CHECK_FALSE(same.all_branching);
    CHECK(std::abs(same.det_poly.c0) < 1e-14);
    CHECK(std::abs(same.det_poly.c1) < 1e-14);
    CHECK(std::abs(same.det_poly.c2) < 1e-14);

    CHECK_THROWS_AS(hull_branching_check_n3(ConsensusMatrix(Matrix::Zero(2, 2)), ConsensusMatrix(Matrix::Zero(2, 2))),
                    Error);
}

TEST_CASE("hull check agrees with dense sampling on random pairs") {
    std::mt19937_64 rng(64);
    int failures = 0;
    for (int k = 0; k < 300; ++k) {
        const ConsensusMatrix a1(testing_support::random_consensus(rng, 3, 0.3));
        const ConsensusMatrix a2(testing_support::random_consensus(rng, 3, 0.3));
        const auto h = hull_branching_check_n3(a1, a2);
        bool sampled = true;
        for (int i = 0; i <= 200 && sampled; ++i) {
            const double a = i / 200.0;
            sampled = rank_test(a * a1.matrix() + (1 - a) * a2.matrix()).branching;
        }
        CHECK(h.all_branching == sampled);
        // nonnegative weights: interior hull graphs contain both endpoint graphs
        CHECK(h.all_branching == (has_rooted_out_branching(a1) && has_rooted_out_branching(a2)));
        if (!h.all_branching) ++failures;
    }
    CHECK(failures > 20);
}

TEST_CASE("Hurwitz segments") {
    const Matrix i2 = Matrix::Identity(2, 2);
    CHECK(hurwitz_segment_2x2(-i2, -i2));
    const auto red = reduce(reference::three_agent_system());
    CHECK(hurwitz_segment_2x2(red.bar_matrices[0], red.bar_matrices[1]));
    const Matrix z2 = mat(2, {1, 0, 0, -1});
    const auto s = check_hurwitz_segment_2x2(-i2, z2);
    CHECK_FALSE(s.hurwitz);
    CHECK(s.failing_alpha == 0.0);

    std::mt19937_64 rng(65);
    for (int k = 0; k < 200; ++k) {
        const Matrix a = Matrix::Random(2, 2) * 2.0 - Matrix::Identity(2, 2);
        const Matrix b = Matrix::Random(2, 2) * 2.0 - Matrix::Identity(2, 2);
        bool sampled = true;
        for (int i = 0; i <= 400 && sampled; ++i) {
            const double t = i / 400.0;
            sampled = hurwitz_by_eigenvalues(t * a + (1 - t) * b);
        }
        const auto c = check_hurwitz_segment_2x2(a, b);
        // sampling can miss a narrow dip; the exact check never claims more than sampling sees
        if (c.hurwitz) CHECK(sampled);
        if (!c.hurwitz && sampled) {
            const double t = c.failing_alpha;
            CHECK_FALSE(is_hurwitz_2x2(t * a + (1 - t) * b));
        }
    }
}

TEST_CASE("published certificate") {
    const auto red = reduce(reference::three_agent_system());
    const auto cert = evaluate_certificate(mat(2, {100, 0, 0, 4}), red.bar_matrices);
    CHECK((cert.q[0] - mat(2, {1000, -8, -8, 0.08})).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((cert.q[1] - mat(2, {600, -4, -4, 0.8})).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(cert.valid(1e-10));
    CHECK(evaluate_certificate(mat(2, {1, 0, 0, 0.04}), red.bar_matrices).valid(1e-10));
    CHECK_FALSE(evaluate_certificate(mat(2, {1, 0, 0, -1}), red.bar_matrices).valid(1e-10));
}

TEST_CASE("CQLF search") {
    const Matrix i2 = Matrix::Identity(2, 2);
    const auto trivial = cqlf_search(-i2, -i2);
    REQUIRE(trivial.found);
    CHECK(trivial.certificate.valid(1e-10));

    const auto red = reduce(reference::three_agent_system());
    const auto found = cqlf_search(red.bar_matrices[0], red.bar_matrices[1]);
    REQUIRE(found.found);
    CHECK(found.segment_conditions_hold);
    CHECK(found.inverse.has_value());
    CHECK(found.certificate.min_residual() > 1e-10);

    // co[Z1, Z2] is Hurwitz but co[Z1, Z2^-1] is not
    const Matrix z1 = mat(2, {-1, 3, -1, -2});
    const Matrix z2 = mat(2, {0, 1, -5, -1});
    CHECK(hurwitz_segment_2x2(z1, z2));
    const auto none = cqlf_search(z1, z2);
    CHECK_FALSE(none.found);
    CHECK_FALSE(none.segment_conditions_hold);
    REQUIRE(none.inverse.has_value());
    CHECK_FALSE(none.inverse->hurwitz);
    const double a = none.failing_alpha;
    CHECK_FALSE(hurwitz_by_eigenvalues(a * z1 + (1 - a) * z2.inverse()));

    try {
        (void)cqlf_search(i2, -i2);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NotHurwitz);
    }
}

TEST_CASE("CQLF search finds certificates whenever the segment conditions hold") {
    std::mt19937_64 rng(66);
    int found = 0;
    for (int k = 0; k < 200; ++k) {
        const ConsensusMatrix a1(testing_support::random_consensus(rng, 3, 0.8));
        const ConsensusMatrix a2(testing_support::random_consensus(rng, 3, 0.8));
        if (!has_rooted_out_branching(a1) || !has_rooted_out_branching(a2)) continue;
        const auto v = ucc_decide_n3_r2(a1, a2);
        REQUIRE(v.decision == UCCDecision::UCC);
        REQUIRE(v.certificate.has_value());
        if (v.certificate->cqlf.segment_conditions_hold) {
            CHECK(v.certificate->cqlf.found);
            found += v.certificate->cqlf.found;
        }
    }
    CHECK(found > 100);
}

TEST_CASE("UCC verdicts") {
    const auto sys = reference::three_agent_system();
    const auto v = ucc_decide_n3_r2(sys);
    CHECK(v.decision == UCCDecision::UCC);
    CHECK(v.certificate.has_value());
    CHECK_FALSE(v.counterexample.has_value());

    const ConsensusMatrix split(mat(3, {-1, 1, 0, 1, -1, 0, 0, 0, 0}));
    const auto bad = ucc_decide_n3_r2(split, split);
    CHECK(bad.decision == UCCDecision::NotUCC);
    REQUIRE(bad.counterexample.has_value());
    CHECK_FALSE(bad.certificate.has_value());
    const Vector w = bad.counterexample->witness_state;
    CHECK_THAT(w.norm(), WithinAbs(1.0, 1e-12));
    CHECK(std::abs(w.sum()) < 1e-12);
    CHECK((split.matrix() * w).norm() < 1e-10);

    CHECK_THROWS_AS(ucc_decide_n3_r2(reference::four_agent_system()), Error);
    CHECK_THROWS_AS(ucc_decide_n3_r2(reference::system_of({sys.matrix(0)})), Error);
}

TEST_CASE("UCC certificates are confirmed by simulation") {
    std::mt19937_64 rng(67);
    int certified = 0;
    for (int k = 0; k < 400 && certified < 100; ++k) {
        const ConsensusMatrix a1(testing_support::random_consensus(rng, 3, 0.6));
        const ConsensusMatrix a2(testing_support::random_consensus(rng, 3, 0.6));
        const auto v = ucc_decide_n3_r2(a1, a2);
        if (v.decision != UCCDecision::UCC || !v.certificate->cqlf.found) continue;
        ++certified;
        const Matrix& y = v.certificate->cqlf.certificate.y;
        const SwitchedSystem sys({a1, a2});
        const auto red = reduce(sys);
        const Vector x0 = testing_support::random_state(rng, 3);
        const auto u = testing_support::random_control(rng, 2, 3.0, 8, true);
        const auto traj = propagate(std::span<const Matrix>(red.bar_matrices), reduce_state(x0, red.basis), u, 16);
        double prev = std::numeric_limits<double>::infinity();
        for (const auto& z : traj.states) {
            const double nz = z.dot(y * z);
            REQUIRE(nz <= prev * (1.0 + 1e-12) + 1e-300);
            prev = nz;
        }
    }
    CHECK(certified == 100);
}

TEST_CASE("UCC counterexamples are confirmed by simulation") {
    std::mt19937_64 rng(68);
    int refuted = 0;
    for (int k = 0; k < 400 && refuted < 100; ++k) {
        const ConsensusMatrix a1(testing_support::random_consensus(rng, 3, 0.3));
        const ConsensusMatrix a2(testing_support::random_consensus(rng, 3, 0.3));
        const auto v = ucc_decide_n3_r2(a1, a2);
        if (v.decision != UCCDecision::NotUCC) continue;
        ++refuted;
        const auto& cx = *v.counterexample;
        const Matrix h = cx.alpha * a1.matrix() + (1 - cx.alpha) * a2.matrix();
        const double norm = std::max(std::max(a1.matrix().norm(), a2.matrix().norm()), 1e-300);
        const Vector x0 = cx.witness_state + 0.01 * testing_support::random_state(rng, 3);
        const auto u = PiecewiseControl::constant(cx.control, 50.0 / norm);
        const Vector xt = final_state(SwitchedSystem({a1, a2}), x0, u);
        CHECK(consensus_distance(xt) > 0.1 * consensus_distance(x0));
        CHECK((h * cx.witness_state).norm() <= 1e-8 * std::max(1.0, h.norm()));
    }
    CHECK(refuted == 100);
}

TEST_CASE("sampling screen") {
    const auto four = reference::four_agent_system();
    const auto s = ucc_sample_check(four, 21);
    CHECK(s.obstruction);
    CHECK(s.weights == vec({1, 0}));
    CHECK_FALSE(s.disclaimer.empty());

    // the interior of that hull is connected
    CHECK(has_rooted_out_branching(ConsensusMatrix(0.5 * four.matrix(0) + 0.5 * four.matrix(1))));

    const Matrix a = reference::three_agent_system().matrix(0);
    const auto copies = ucc_sample_check(reference::system_of({a, a, a}), 11);
    CHECK_FALSE(copies.obstruction);
    CHECK(copies.checked == 66);

    const auto with_zero = ucc_sample_check(reference::system_of({a, Matrix::Zero(3, 3), a}), 5);
    CHECK(with_zero.obstruction);
    CHECK(with_zero.weights == vec({0, 1, 0}));

    std::vector<ConsensusMatrix> many;
    for (int i = 0; i < 8; ++i) many.emplace_back(a);
    const auto capped = ucc_sample_check(SwitchedSystem(many), 50);
    CHECK(capped.checked <= 20000);
    CHECK_THROWS_AS(ucc_sample_check(four, 1), Error);
}
