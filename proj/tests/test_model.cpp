#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "wsod/dataset.hpp"
#include "wsod/model.hpp"
#include "wsod/rng.hpp"

using namespace wsod;
namespace ad = wsod::ad;
using ad::Mat;
using ad::Var;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.conv_channels = {4, 6, 8, 8};
    cfg.roi_size = 4;
    cfg.feat_dim = 16;
    cfg.sim_hidden = 12;
    cfg.embed_dim = 8;
    cfg.num_classes = 3;
    cfg.stages = 3;
    return cfg;
}

LabeledImage tiny_image(std::uint64_t seed) {
    SceneConfig scfg;
    scfg.canvas = 64;
    auto img = generate_scene(seed, scfg, "t");
    ProposalConfig pcfg;
    pcfg.grid_sizes = {24.0, 40.0};
    pcfg.jitter_per_gt = 2;
    pcfg.random_count = 4;
    img.proposals = generate_proposals(img, seed + 1, pcfg);
    return img;
}

Mat random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = rng.uniform(lo, hi);
    return m;
}

}  // namespace

TEST_CASE("identical boxes yield identical feature columns") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 11);
    auto img = tiny_image(5);
    std::vector<Box> boxes{img.proposals[0], img.proposals[0], img.proposals[3]};
    Var fm = model.backbone(img.raster, img.width, img.height);
    Var f = model.roi_pool(fm, img.width, img.height, boxes);
    Var v = model.eta(f);
    CHECK((v.value().col(0) - v.value().col(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((v.value().col(0) - v.value().col(2)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("roi_pool rejects boxes outside the raster") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 11);
    auto img = tiny_image(6);
    Var fm = model.backbone(img.raster, img.width, img.height);
    std::vector<Box> bad{{-2.0, 0.0, 10.0, 10.0}};
    CHECK_THROWS_AS(model.roi_pool(fm, img.width, img.height, bad),
                    std::invalid_argument);
    std::vector<Box> past{{0.0, 0.0, static_cast<double>(img.width) + 1.0, 10.0}};
    CHECK_THROWS_AS(model.roi_pool(fm, img.width, img.height, past),
                    std::invalid_argument);
}

TEST_CASE("dropblock identity, degenerate and expectation cases") {
    auto cfg = tiny_config();
    Rng rng(3);

    SUBCASE("drop probability zero is the identity") {
        cfg.dropblock_prob = 0.0;
        auto mask = draw_dropblock_mask(cfg, 5, rng);
        CHECK(mask.expanded.minCoeff() == 1.0);
        CHECK(mask.expanded.maxCoeff() == 1.0);
        Var f = Var::constant(random_mat(rng, cfg.roi_input_dim(), 5));
        Var fd = apply_dropblock(f, mask);
        CHECK((fd.value() - f.value()).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("block covering the whole map at probability one zeroes everything") {
        cfg.dropblock_prob = 1.0;
        cfg.dropblock_size = cfg.roi_size;  // single seed covers the map
        auto mask = draw_dropblock_mask(cfg, 3, rng);
        CHECK(mask.expanded.maxCoeff() == 0.0);  // rescale guarded to zero
    }

    SUBCASE("monte-carlo drop fraction matches the closed form") {
        ModelConfig full;  // default 7x7 map, block 3, p=0.3
        const double expected =
            dropblock_expected_drop_fraction(full.roi_size, full.dropblock_size,
                                             full.dropblock_prob);
        Rng mc(77);
        const int draws = 10000;
        auto mask = draw_dropblock_mask(full, draws, mc);
        const int cells = full.roi_size * full.roi_size;
        long zeroed = 0;
        for (int m = 0; m < draws; ++m)
            for (int cell = 0; cell < cells; ++cell)
                if (mask.expanded(cell, m) == 0.0) ++zeroed;
        const double measured = static_cast<double>(zeroed) / (static_cast<double>(draws) * cells);
        CHECK(std::abs(measured - expected) < 0.05);
    }
}

TEST_CASE("mil head invariants and degenerate cases") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 21);
    Rng rng(4);

    SUBCASE("single region: x_det is all ones and phi equals x_cls") {
        Var v = Var::constant(random_mat(rng, cfg.feat_dim, 1));
        auto mil = model.mil_head(v);
        CHECK(mil.x_det.value().minCoeff() == doctest::Approx(1.0));
        for (int c = 0; c < cfg.num_classes; ++c) {
            CHECK(mil.phi.value()(c, 0) == doctest::Approx(mil.x_cls.value()(c, 0)));
        }
    }

    SUBCASE("zero logits give uniform scores") {
        model.mil_cls_w.mutable_value().setZero();
        model.mil_det_w.mutable_value().setZero();
        Var v = Var::constant(random_mat(rng, cfg.feat_dim, 5));
        auto mil = model.mil_head(v);
        CHECK(mil.x_cls.value().minCoeff() == doctest::Approx(1.0 / cfg.num_classes));
        CHECK(mil.x_det.value().maxCoeff() == doctest::Approx(1.0 / 5.0));
        for (int c = 0; c < cfg.num_classes; ++c) {
            CHECK(mil.phi.value()(c, 0) == doctest::Approx(1.0 / cfg.num_classes));
        }
    }

    SUBCASE("phi matches an independent direct summation") {
        Var v = Var::constant(random_mat(rng, cfg.feat_dim, 9));
        auto mil = model.mil_head(v);
        for (int c = 0; c < cfg.num_classes; ++c) {
            double direct = 0.0;
            for (int m = 0; m < 9; ++m) {
                direct += mil.x_cls.value()(c, m) * mil.x_det.value()(c, m);
            }
            CHECK(std::abs(mil.phi.value()(c, 0) - direct) < 1e-9);
        }
    }

    SUBCASE("normalization invariants over random parameters") {
        for (int trial = 0; trial < 20; ++trial) {
            auto rm = Model::init(cfg, 100 + trial);
            Var v = Var::constant(random_mat(rng, cfg.feat_dim, 7, -3.0, 3.0));
            auto mil = rm.mil_head(v);
            for (int m = 0; m < 7; ++m) {
                CHECK(mil.x_cls.value().col(m).sum() == doctest::Approx(1.0).epsilon(1e-6));
            }
            for (int c = 0; c < cfg.num_classes; ++c) {
                CHECK(mil.x_det.value().row(c).sum() == doctest::Approx(1.0).epsilon(1e-6));
                CHECK(mil.phi.value()(c, 0) >= 0.0);
                CHECK(mil.phi.value()(c, 0) <= 1.0 + 1e-12);
            }
            for (int k = 1; k <= cfg.stages; ++k) {
                Var s = rm.refinement_head(v, k);
                for (int m = 0; m < 7; ++m) {
                    CHECK(s.value().col(m).sum() == doctest::Approx(1.0).epsilon(1e-6));
                }
            }
            Var z = rm.similarity_head(v);
            for (int m = 0; m < 7; ++m) {
                CHECK(z.value().col(m).norm() == doctest::Approx(1.0).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("refinement head: uniform at zero logits, stages independent") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 31);
    Rng rng(5);
    Var v = Var::constant(random_mat(rng, cfg.feat_dim, 6));

    CHECK_THROWS_AS(model.refinement_head(v, 0), std::invalid_argument);
    CHECK_THROWS_AS(model.refinement_head(v, cfg.stages + 1), std::invalid_argument);

    model.ref_w[0].mutable_value().setZero();
    model.ref_b[0].mutable_value().setZero();
    Var s1 = model.refinement_head(v, 1);
    CHECK(s1.value().minCoeff() == doctest::Approx(1.0 / (cfg.num_classes + 1)));

    Var s2_before = model.refinement_head(v, 2);
    model.ref_w[0].mutable_value().setConstant(0.5);  // perturb stage 1 only
    Var s2_after = model.refinement_head(v, 2);
    CHECK((s2_before.value() - s2_after.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("similarity head embeddings") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 41);
    Rng rng(6);
    Mat vcols = random_mat(rng, cfg.feat_dim, 4);
    vcols.col(1) = vcols.col(0);  // identical inputs
    Var z = model.similarity_head(Var::constant(vcols));
    for (int m = 0; m < 4; ++m) {
        CHECK(z.value().col(m).norm() == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(z.value().col(0).dot(z.value().col(1)) == doctest::Approx(1.0).epsilon(1e-9));
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            const double s = z.value().col(a).dot(z.value().col(b));
            CHECK(s >= -1.0 - 1e-9);
            CHECK(s <= 1.0 + 1e-9);
        }
    }
}

TEST_CASE("dropblock changes the mil path but never the similarity path") {
    auto cfg = tiny_config();
    cfg.dropblock_prob = 0.5;
    auto model = Model::init(cfg, 51);
    auto img = tiny_image(7);
    std::vector<Box> boxes(img.proposals.begin(), img.proposals.begin() + 6);

    Var fm = model.backbone(img.raster, img.width, img.height);
    Var f = model.roi_pool(fm, img.width, img.height, boxes);
    Var v = model.eta(f);
    Var z = model.similarity_head(v);

    Rng rng_a(1), rng_b(2);
    Var vt_a = model.eta(apply_dropblock(f, draw_dropblock_mask(cfg, 6, rng_a)));
    Var vt_b = model.eta(apply_dropblock(f, draw_dropblock_mask(cfg, 6, rng_b)));
    auto mil_a = model.mil_head(vt_a);
    auto mil_b = model.mil_head(vt_b);
    CHECK((mil_a.x.value() - mil_b.x.value()).cwiseAbs().maxCoeff() > 0.0);

    // the similarity head reads the clean vectors: same z either way
    Var z_again = model.similarity_head(model.eta(f));
    CHECK((z.value() - z_again.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("each head is differentiable: finite differences vs analytic") {
    auto cfg = tiny_config();
    auto model = Model::init(cfg, 61);
    Rng rng(8);
    Mat vin = random_mat(rng, cfg.feat_dim, 5, 0.05, 1.0);
    Mat red_mil = random_mat(rng, cfg.num_classes, 1);
    Mat red_ref = random_mat(rng, cfg.num_classes + 1, 5);
    Mat red_reg = random_mat(rng, 4, 5);
    Mat red_sim = random_mat(rng, cfg.embed_dim, 5);

    auto heads = std::vector<std::pair<Var, std::function<Var()>>>{
        {model.mil_cls_w, [&] { return ad::weighted_sum(model.mil_head(Var::constant(vin)).phi, red_mil); }},
        {model.ref_w[1], [&] { return ad::weighted_sum(model.refinement_head(Var::constant(vin), 2), red_ref); }},
        {model.reg_w, [&] { return ad::weighted_sum(model.regression_head(Var::constant(vin)), red_reg); }},
        {model.sim_w2, [&] { return ad::weighted_sum(model.similarity_head(Var::constant(vin)), red_sim); }},
    };

    const double step = 1e-5;
    for (auto& [param, build] : heads) {
        Var loss = build();
        ad::backward(loss);
        REQUIRE(param.has_grad());
        Mat analytic = param.grad();
        for (int probe = 0; probe < 10; ++probe) {
            const int r = static_cast<int>(Rng(900 + probe).uniform_int(0, param.rows() - 1));
            const int c = static_cast<int>(Rng(990 + probe).uniform_int(0, param.cols() - 1));
            const double orig = param.value()(r, c);
            param.mutable_value()(r, c) = orig + step;
            const double up = build().value()(0, 0);
            param.mutable_value()(r, c) = orig - step;
            const double down = build().value()(0, 0);
            param.mutable_value()(r, c) = orig;
            const double fd = (up - down) / (2 * step);
            const double a = analytic(r, c);
            CHECK(std::abs(fd - a) / std::max({std::abs(fd), std::abs(a), 1e-4}) < 1e-4);
        }
        param.zero_grad();
    }
}
