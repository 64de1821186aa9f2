#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/rng.hpp"

using wsod::Box;
using wsod::BoxDeltas;
using wsod::Rng;

namespace {

// Independent O(n^2) suppression reference: walk boxes in descending score
// (ties by index) and drop anything overlapping a previously kept box.
std::vector<std::size_t> nms_bruteforce(const std::vector<Box>& boxes,
                                        const std::vector<double>& scores,
                                        double thr) {
    std::vector<std::size_t> order(boxes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        bool keep = true;
        for (std::size_t k : kept) {
            if (wsod::iou(boxes[i], boxes[k]) > thr) keep = false;
        }
        if (keep) kept.push_back(i);
    }
    return kept;
}

Box random_box(Rng& rng, double extent = 100.0) {
    const double x1 = rng.uniform(0.0, extent);
    const double y1 = rng.uniform(0.0, extent);
    const double w = rng.uniform(1.0, extent * 0.5);
    const double h = rng.uniform(1.0, extent * 0.5);
    return {x1, y1, x1 + w, y1 + h};
}

}  // namespace

TEST_CASE("iou identity and disjoint") {
    Box a{0, 0, 10, 10};
    CHECK(wsod::iou(a, a) == 1.0);
    Box b{20, 20, 30, 30};
    CHECK(wsod::iou(a, b) == 0.0);
}

TEST_CASE("iou analytic overlap") {
    Box a{0, 0, 10, 10};
    Box b{5, 5, 15, 15};
    // intersection 5x5=25, union 100+100-25=175
    CHECK(wsod::iou(a, b) == doctest::Approx(25.0 / 175.0).epsilon(1e-12));
}

TEST_CASE("iou rejects degenerate boxes") {
    Box bad{0, 0, 0, 10};
    Box ok{0, 0, 10, 10};
    CHECK_THROWS_AS(wsod::iou(bad, ok), std::invalid_argument);
}

TEST_CASE("iou symmetric and self-unit on random boxes") {
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        Box a = random_box(rng);
        Box b = random_box(rng);
        CHECK(wsod::iou(a, b) == wsod::iou(b, a));
        CHECK(wsod::iou(a, a) == 1.0);
        const double v = wsod::iou(a, b);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("nms trivial cases") {
    SUBCASE("singleton") {
        std::vector<Box> boxes{{0, 0, 10, 10}};
        CHECK(wsod::nms(boxes, {0.5}, 0.3) == std::vector<std::size_t>{0});
    }
    SUBCASE("identical pair keeps higher score") {
        std::vector<Box> boxes{{0, 0, 10, 10}, {0, 0, 10, 10}};
        CHECK(wsod::nms(boxes, {0.8, 0.9}, 0.5) == std::vector<std::size_t>{1});
    }
    SUBCASE("disjoint pair kept in score order") {
        std::vector<Box> boxes{{0, 0, 10, 10}, {50, 50, 60, 60}};
        CHECK(wsod::nms(boxes, {0.2, 0.9}, 0.5) == std::vector<std::size_t>{1, 0});
    }
    SUBCASE("empty input") {
        CHECK(wsod::nms({}, {}, 0.5).empty());
    }
    SUBCASE("score tie keeps lower index first") {
        std::vector<Box> boxes{{0, 0, 10, 10}, {100, 100, 110, 110}};
        CHECK(wsod::nms(boxes, {0.5, 0.5}, 0.5) == std::vector<std::size_t>{0, 1});
    }
}

TEST_CASE("nms agrees with brute-force reference") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 200));
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (int i = 0; i < n; ++i) {
            boxes.push_back(random_box(rng, 60.0));
            scores.push_back(rng.uniform());
        }
        const double thr = rng.uniform(0.1, 0.9);
        CHECK(wsod::nms(boxes, scores, thr) == nms_bruteforce(boxes, scores, thr));
    }
}

TEST_CASE("delta coding identities") {
    Box p{10, 20, 50, 80};
    BoxDeltas zero = wsod::encode_deltas(p, p);
    CHECK(zero.dx == doctest::Approx(0.0));
    CHECK(zero.dy == doctest::Approx(0.0));
    CHECK(zero.dw == doctest::Approx(0.0));
    CHECK(zero.dh == doctest::Approx(0.0));
    Box back = wsod::decode_deltas(p, BoxDeltas{});
    CHECK(back.x1 == doctest::Approx(p.x1));
    CHECK(back.y2 == doctest::Approx(p.y2));
}

TEST_CASE("delta coding round-trips on 1000 random pairs") {
    Rng rng(3);
    double max_err = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Box p = random_box(rng);
        Box g = random_box(rng);
        Box back = wsod::decode_deltas(p, wsod::encode_deltas(p, g));
        max_err = std::max({max_err, std::abs(back.x1 - g.x1), std::abs(back.y1 - g.y1),
                            std::abs(back.x2 - g.x2), std::abs(back.y2 - g.y2)});
    }
    CHECK(max_err < 1e-9);
}

TEST_CASE("clip_box flags degenerate results") {
    Box inside{5, 5, 20, 20};
    CHECK(wsod::clip_box(inside, 100, 100));
    Box outside{-30, -30, -10, -10};
    CHECK_FALSE(wsod::clip_box(outside, 100, 100));
}
