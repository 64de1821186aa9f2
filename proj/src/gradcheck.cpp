#include "wsod/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include "wsod/engine.hpp"

namespace wsod {

namespace {

Config fixture_config() {
    Config cfg;
    cfg.data.scene.canvas = 64;
    cfg.data.scene.num_categories = 3;
    cfg.model.conv_channels = {4, 6, 8, 8};
    cfg.model.roi_size = 4;
    cfg.model.feat_dim = 16;
    cfg.model.sim_hidden = 16;
    cfg.model.embed_dim = 8;
    cfg.model.num_classes = 3;
    cfg.model.stages = 3;
    cfg.model.dropblock_size = 2;
    cfg.train.batch_size = 2;
    return cfg;
}

// two scenes with exactly eight proposals each
std::vector<LabeledImage> fixture_images(const Config& cfg, std::uint64_t seed) {
    std::vector<LabeledImage> images;
    for (int i = 0; i < 2; ++i) {
        SceneConfig scene = cfg.data.scene;
        scene.min_instances = 2;
        scene.max_instances = 2;
        auto img = generate_scene(Rng::derive(seed, i), scene, "gc" + std::to_string(i));
        ProposalConfig pcfg;
        pcfg.grid = false;
        pcfg.jitter_per_gt = 3;
        pcfg.random_count = 8;
        img.proposals = generate_proposals(img, Rng::derive(seed, 100 + i), pcfg);
        img.proposals.resize(8);
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace

GradCheckReport run_gradcheck(double tolerance, double step, std::ostream* progress) {
    const Config cfg = fixture_config();
    Model model = Model::init(cfg.model, 2024);
    const auto images = fixture_images(cfg, 55);
    std::vector<const LabeledImage*> batch{&images[0], &images[1]};

    Rng plan_rng(404);
    const StepPlan plan = build_step_plan(model, batch, cfg, plan_rng);

    GradCheckReport report;
    report.tolerance = tolerance;
    report.step = step;
    report.per_loss = {{"mil", 0.0, 0, true},
                       {"cls", 0.0, 0, true},
                       {"reg", 0.0, 0, true},
                       {"wscl", 0.0, 0, true}};

    // analytic gradients: one backward per loss over a shared fresh graph
    auto params = model.parameters();
    std::vector<std::vector<ad::Mat>> analytic(4);
    {
        StepLosses losses = evaluate_step(model, batch, plan, cfg);
        const ad::Var nodes[4] = {losses.mil, losses.cls, losses.reg, losses.wscl};
        for (int l = 0; l < 4; ++l) {
            for (auto& [name, var] : params) var.zero_grad();
            ad::backward(nodes[l]);
            for (auto& [name, var] : params) {
                analytic[l].push_back(var.has_grad()
                                          ? var.grad()
                                          : ad::Mat::Zero(var.rows(), var.cols()));
            }
            for (auto& [name, var] : params) var.zero_grad();
        }
    }

    auto values_at = [&]() {
        StepLosses losses = evaluate_step(model, batch, plan, cfg);
        return std::array<double, 4>{losses.mil.value()(0, 0), losses.cls.value()(0, 0),
                                     losses.reg.value()(0, 0), losses.wscl.value()(0, 0)};
    };

    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& var = params[p].second;
        for (int c = 0; c < var.cols(); ++c) {
            for (int r = 0; r < var.rows(); ++r) {
                const double orig = var.value()(r, c);
                var.mutable_value()(r, c) = orig + step;
                const auto up = values_at();
                var.mutable_value()(r, c) = orig - step;
                const auto down = values_at();
                var.mutable_value()(r, c) = orig;
                for (int l = 0; l < 4; ++l) {
                    const double fd = (up[l] - down[l]) / (2.0 * step);
                    const double an = analytic[l][p](r, c);
                    const double mag = std::max(std::abs(fd), std::abs(an));
                    const double err =
                        mag >= 1e-6 ? std::abs(fd - an) / mag : std::abs(fd - an) * 1e2;
                    report.per_loss[l].max_err = std::max(report.per_loss[l].max_err, err);
                    report.per_loss[l].entries_checked += 1;
                }
            }
        }
        if (progress) {
            (*progress) << "  [" << (p + 1) << "/" << params.size() << "] "
                        << params[p].first << "\n";
        }
    }

    report.all_pass = true;
    for (auto& loss : report.per_loss) {
        loss.pass = loss.max_err < tolerance;
        report.all_pass = report.all_pass && loss.pass;
    }
    return report;
}

}  // namespace wsod
