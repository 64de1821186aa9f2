#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wsod/losses.hpp"
#include "wsod/rng.hpp"

using namespace wsod;
namespace ad = wsod::ad;
using ad::Mat;
using ad::Var;

namespace {

Mat random_unit_cols(Rng& rng, int d, int n) {
    Mat m(d, n);
    for (int c = 0; c < n; ++c) {
        for (int r = 0; r < d; ++r) m(r, c) = rng.normal();
        m.col(c) /= m.col(c).norm();
    }
    return m;
}

// Plain-loop supervised-contrastive reference, written independently of the
// graph implementation (direct exp/log, no shared code).
double supcon_reference(const Mat& z, const std::vector<int>& t,
                        const std::vector<double>& omega, double eps) {
    const int n = static_cast<int>(t.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        int nt = 0;
        for (int j = 0; j < n; ++j) nt += (t[j] == t[i]);
        if (nt < 2) continue;
        double denom = 0.0;
        for (int l = 0; l < n; ++l) {
            if (l == i) continue;
            denom += std::exp(z.col(i).dot(z.col(l)) / eps);
        }
        double li = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j == i || t[j] != t[i]) continue;
            li += std::log(std::exp(z.col(i).dot(z.col(j)) / eps) / denom);
        }
        total += omega[i] * (-li / (nt - 1));
    }
    return total / n;
}

}  // namespace

TEST_CASE("mil loss: perfect prediction, log2 case, finite differences") {
    SUBCASE("phi equal to labels gives (almost) zero") {
        Mat phi(3, 1);
        phi << 1.0, 0.0, 1.0;
        Var loss = mil_loss({Var::constant(phi)}, {{1, 0, 1}});
        CHECK(loss.value()(0, 0) == doctest::Approx(0.0).epsilon(1e-6));
    }

    SUBCASE("N=1, C=1, y=1, phi=0.5 gives log 2") {
        Mat phi(1, 1);
        phi << 0.5;
        Var loss = mil_loss({Var::constant(phi)}, {{1}});
        CHECK(loss.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("gradient matches central differences") {
        Rng rng(3);
        Mat phi_values(4, 1);
        for (int c = 0; c < 4; ++c) phi_values(c, 0) = rng.uniform(0.1, 0.9);
        Var phi = Var::leaf(phi_values);
        std::vector<std::vector<int>> labels{{1, 0, 1, 0}};
        Var loss = mil_loss({phi}, labels);
        ad::backward(loss);
        const double step = 1e-5;
        for (int c = 0; c < 4; ++c) {
            const double orig = phi.value()(c, 0);
            phi.mutable_value()(c, 0) = orig + step;
            const double up = mil_loss({phi}, labels).value()(0, 0);
            phi.mutable_value()(c, 0) = orig - step;
            const double down = mil_loss({phi}, labels).value()(0, 0);
            phi.mutable_value()(c, 0) = orig;
            const double fd = (up - down) / (2 * step);
            CHECK(std::abs(fd - phi.grad()(c, 0)) /
                      std::max({std::abs(fd), std::abs(phi.grad()(c, 0)), 1e-4}) <
                  1e-4);
        }
    }
}

TEST_CASE("refinement classification loss") {
    SUBCASE("perfect background prediction is zero") {
        const int C = 3, M = 5;
        Mat scores = Mat::Zero(C + 1, M);
        scores.row(C).setOnes();  // background probability 1 everywhere
        auto labels = StageLabels::background(C, M);
        Var loss = refinement_cls_loss({{Var::constant(scores)}}, {{labels}});
        CHECK(loss.value()(0, 0) == doctest::Approx(0.0));
    }

    SUBCASE("single proposal, unit weight, score e^-1 gives 1/(N K M)") {
        const int C = 2;
        Mat scores(C + 1, 1);
        scores << std::exp(-1.0), (1 - std::exp(-1.0)) / 2, (1 - std::exp(-1.0)) / 2;
        auto labels = StageLabels::background(C, 1);
        labels.assigned[0] = 0;
        labels.weights[0] = 1.0;
        Var loss = refinement_cls_loss({{Var::constant(scores)}}, {{labels}});
        CHECK(loss.value()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("regression loss") {
    std::vector<Box> props{{0, 0, 10, 10}, {20, 20, 40, 44}};

    SUBCASE("perfect regression is zero") {
        auto labels = StageLabels::background(2, 2);
        labels.assigned[0] = 0;
        labels.claim_box[0] = props[0];
        labels.claim_source[0] = 0;
        labels.weights[0] = 1.0;
        auto matches = regression_matches(labels, props, true);
        REQUIRE(matches.proposal_indices.size() == 1);
        Var deltas = Var::constant(Mat::Zero(4, 2));  // pred == target == identity
        Var loss = regression_loss({deltas}, {{matches}});
        CHECK(loss.value()(0, 0) == doctest::Approx(0.0));
    }

    SUBCASE("single coordinate error in both smooth-L1 branches") {
        auto labels = StageLabels::background(2, 2);
        labels.assigned[1] = 1;
        labels.claim_box[1] = props[1];
        labels.claim_source[1] = 0;
        labels.weights[1] = 1.0;
        auto matches = regression_matches(labels, props, true);

        Mat pred = Mat::Zero(4, 2);
        pred(0, 1) = 0.5;  // quadratic branch: huber(0.5) = 0.125
        Var loss = regression_loss({Var::constant(pred)}, {{matches}});
        CHECK(loss.value()(0, 0) == doctest::Approx(0.125).epsilon(1e-12));

        pred(0, 1) = 2.0;  // linear branch: huber(2) = 1.5
        Var loss2 = regression_loss({Var::constant(pred)}, {{matches}});
        CHECK(loss2.value()(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
    }

    SUBCASE("no matches contributes zero") {
        auto labels = StageLabels::background(2, 2);
        auto matches = regression_matches(labels, props, true);
        CHECK(matches.proposal_indices.empty());
        Var loss = regression_loss({Var::constant(Mat::Zero(4, 2))}, {{matches}});
        CHECK(loss.value()(0, 0) == 0.0);
    }

    SUBCASE("discovered matches obey the include flag") {
        auto labels = StageLabels::background(2, 2);
        labels.assigned[0] = 0;
        labels.claim_box[0] = props[0];
        labels.claim_source[0] = 1;  // discovered
        CHECK(regression_matches(labels, props, true).proposal_indices.size() == 1);
        CHECK(regression_matches(labels, props, false).proposal_indices.empty());
    }
}

TEST_CASE("wscl: degenerate, oracle, permutation and closed-form cases") {
    const double eps = 0.2;

    SUBCASE("two same-class entries give exactly zero") {
        Rng rng(1);
        Mat z = random_unit_cols(rng, 16, 2);
        Var loss = wscl_loss(Var::constant(z), {1, 1}, {1.0, 1.0}, eps);
        CHECK(loss.value()(0, 0) == 0.0);
    }

    SUBCASE("fewer than two entries returns zero") {
        Rng rng(2);
        Var loss = wscl_loss(Var::constant(random_unit_cols(rng, 8, 1)), {0}, {1.0}, eps);
        CHECK(loss.value()(0, 0) == 0.0);
    }

    SUBCASE("matches an independent supervised-contrastive implementation") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = static_cast<int>(rng.uniform_int(2, 64));
            Mat z = random_unit_cols(rng, 32, n);
            std::vector<int> t(n);
            std::vector<double> ones(n, 1.0);
            for (int i = 0; i < n; ++i) t[i] = static_cast<int>(rng.uniform_int(0, 2));
            const double got = wscl_loss(Var::constant(z), t, ones, eps).value()(0, 0);
            const double expect = supcon_reference(z, t, ones, eps);
            CHECK(std::abs(got - expect) < 1e-6);
        }
    }

    SUBCASE("weighted case also matches the reference") {
        Rng rng(8);
        const int n = 20;
        Mat z = random_unit_cols(rng, 16, n);
        std::vector<int> t(n);
        std::vector<double> w(n);
        for (int i = 0; i < n; ++i) {
            t[i] = static_cast<int>(rng.uniform_int(0, 1));
            w[i] = rng.uniform(0.0, 2.0);
        }
        CHECK(std::abs(wscl_loss(Var::constant(z), t, w, eps).value()(0, 0) -
                       supcon_reference(z, t, w, eps)) < 1e-6);
    }

    SUBCASE("invariant under permutation of entries") {
        Rng rng(9);
        const int n = 12;
        Mat z = random_unit_cols(rng, 16, n);
        std::vector<int> t{0, 0, 1, 1, 1, 0, 2, 2, 0, 1, 2, 2};
        std::vector<double> w(n);
        for (int i = 0; i < n; ++i) w[i] = rng.uniform(0.1, 1.0);
        const double base = wscl_loss(Var::constant(z), t, w, eps).value()(0, 0);

        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[static_cast<int>(rng.uniform_int(0, i))]);
        }
        Mat zp(16, n);
        std::vector<int> tp(n);
        std::vector<double> wp(n);
        for (int i = 0; i < n; ++i) {
            zp.col(i) = z.col(perm[i]);
            tp[i] = t[perm[i]];
            wp[i] = w[perm[i]];
        }
        const double permuted = wscl_loss(Var::constant(zp), tp, wp, eps).value()(0, 0);
        CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
    }

    SUBCASE("identical embeddings: every per-entry term is log(n-1)") {
        Rng rng(10);
        const int n = 9;
        Eigen::VectorXd v = random_unit_cols(rng, 8, 1).col(0);
        Mat z(8, n);
        for (int i = 0; i < n; ++i) z.col(i) = v;
        std::vector<int> t(n, 0);
        std::vector<double> ones(n, 1.0);
        const double got = wscl_loss(Var::constant(z), t, ones, eps).value()(0, 0);
        CHECK(got == doctest::Approx(std::log(n - 1.0)).epsilon(1e-9));
    }

    SUBCASE("gradient w.r.t. embeddings matches finite differences") {
        Rng rng(11);
        const int n = 8;
        Var z = Var::leaf(random_unit_cols(rng, 6, n));
        std::vector<int> t{0, 0, 1, 1, 0, 1, 0, 1};
        std::vector<double> w{1, 0.5, 0.25, 1, 0.75, 1, 0.3, 0.9};
        Var loss = wscl_loss(z, t, w, eps);
        ad::backward(loss);
        const double step = 1e-5;
        for (int probe = 0; probe < 12; ++probe) {
            const int r = static_cast<int>(rng.uniform_int(0, 5));
            const int c = static_cast<int>(rng.uniform_int(0, n - 1));
            const double orig = z.value()(r, c);
            z.mutable_value()(r, c) = orig + step;
            const double up = wscl_loss(z, t, w, eps).value()(0, 0);
            z.mutable_value()(r, c) = orig - step;
            const double down = wscl_loss(z, t, w, eps).value()(0, 0);
            z.mutable_value()(r, c) = orig;
            const double fd = (up - down) / (2 * step);
            const double a = z.grad()(r, c);
            CHECK(std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-4}) < 1e-4);
        }
    }
}

TEST_CASE("total loss report") {
    auto scalar = [](double v) {
        Mat m(1, 1);
        m << v;
        return Var::constant(m);
    };

    SUBCASE("lambda zero removes the contrastive term") {
        auto t = total_loss(scalar(0.5), scalar(0.25), scalar(0.125), scalar(99.0), 0.0);
        CHECK(t.report.total == doctest::Approx(0.875));
    }

    SUBCASE("unit components at lambda 0.03 total 3.03") {
        auto t = total_loss(scalar(1), scalar(1), scalar(1), scalar(1), 0.03);
        CHECK(t.report.total == doctest::Approx(3.03));
    }

    SUBCASE("report invariant for random components") {
        Rng rng(12);
        for (int trial = 0; trial < 20; ++trial) {
            const double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(),
                         d = rng.uniform(), lam = rng.uniform();
            auto t = total_loss(scalar(a), scalar(b), scalar(c), scalar(d), lam);
            CHECK(std::abs(t.report.total -
                           (t.report.mil + t.report.cls + t.report.reg +
                            t.report.lambda * t.report.wscl)) < 1e-9);
        }
    }
}
