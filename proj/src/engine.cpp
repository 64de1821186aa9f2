#include "wsod/engine.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace wsod {

ImageForward forward_image(const Model& model, const TrainingView& view,
                           const DropblockMask& mask, bool with_embeddings) {
    if (view.proposals().empty()) {
        throw std::invalid_argument("forward_image: image has no proposals");
    }
    const auto& cfg = model.config();
    ImageForward out;
    out.featmap = model.backbone(view.raster(), view.width(), view.height());
    out.f = model.roi_pool(out.featmap, view.width(), view.height(), view.proposals());
    out.v_tilde = model.eta(apply_dropblock(out.f, mask));
    out.mil = model.mil_head(out.v_tilde);
    for (int k = 1; k <= cfg.stages; ++k) {
        out.stage_scores.push_back(model.refinement_head(out.v_tilde, k));
    }
    out.deltas = model.regression_head(out.v_tilde);
    if (with_embeddings) {
        out.v = model.eta(out.f);
        out.z = model.similarity_head(out.v);
    }
    return out;
}

namespace {

std::vector<ad::Mat> supervision_values(const ImageForward& fwd, int stages) {
    std::vector<ad::Mat> sup;
    sup.push_back(fwd.mil.x.value());
    for (int k = 0; k + 1 < stages; ++k) sup.push_back(fwd.stage_scores[k].value());
    return sup;
}

DiscoveryConfig discovery_config(const TrainConfig& t) {
    DiscoveryConfig d;
    d.enabled = t.discovery_enabled;
    d.criterion = t.discovery_criterion == "classification"
                      ? DiscoveryConfig::Criterion::kClassification
                      : DiscoveryConfig::Criterion::kSimilarity;
    d.tau_nms = t.tau_nms;
    d.cls_threshold = t.cls_threshold;
    d.cls_adaptive = t.cls_adaptive;
    d.discovered_omega = t.discovered_omega == "one"
                             ? DiscoveryConfig::DiscoveredOmega::kOne
                             : DiscoveryConfig::DiscoveredOmega::kMilFormula;
    return d;
}

}  // namespace

StepPlan build_step_plan(const Model& model,
                         const std::vector<const LabeledImage*>& batch,
                         const Config& cfg, Rng& rng) {
    const auto& mcfg = model.config();
    const auto& tcfg = cfg.train;
    StepPlan plan;

    std::vector<ImageForward> fwd;
    fwd.reserve(batch.size());
    for (const LabeledImage* img : batch) {
        TrainingView view(*img);
        const int m = static_cast<int>(view.proposals().size());
        plan.dropmasks.push_back(tcfg.dropblock_enabled
                                     ? draw_dropblock_mask(mcfg, m, rng)
                                     : identity_dropblock_mask(mcfg, m));
        fwd.push_back(forward_image(model, view, plan.dropmasks.back(), true));
    }

    const bool need_bank = tcfg.discovery_enabled || tcfg.wscl_enabled;
    std::vector<const ad::Var*> f_ptrs(batch.size());
    for (std::size_t n = 0; n < batch.size(); ++n) f_ptrs[n] = &fwd[n].f;

    if (need_bank) {
        std::vector<ImageBankInput> inputs;
        for (std::size_t n = 0; n < batch.size(); ++n) {
            ImageBankInput in;
            in.image_index = static_cast<int>(n);
            in.image_id = batch[n]->id;
            in.f_clean = &fwd[n].f;
            in.mil_x = fwd[n].mil.x.value();
            in.supervision = supervision_values(fwd[n], mcfg.stages);
            in.proposals = &batch[n]->proposals;
            in.labels = batch[n]->image_labels;
            inputs.push_back(std::move(in));
        }
        const OmegaDenominator denom = tcfg.omega_denominator == "all"
                                           ? OmegaDenominator::kAll
                                           : OmegaDenominator::kSampled;
        auto built = build_bank(model, inputs, tcfg.tau_iou, tcfg.tau_drop, denom, rng);
        plan.bank = std::move(built.bank);
        plan.omega_denominators = std::move(built.omega_denominators);
    }

    std::vector<DiscoveryImageInput> dinputs;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        DiscoveryImageInput in;
        in.image_index = static_cast<int>(n);
        in.image_id = batch[n]->id;
        in.supervision = supervision_values(fwd[n], mcfg.stages);
        in.z_all = fwd[n].z.value();
        in.mil_x = fwd[n].mil.x.value();
        in.proposals = &batch[n]->proposals;
        in.labels = batch[n]->image_labels;
        dinputs.push_back(std::move(in));
    }
    plan.discovery = run_object_discovery(dinputs, plan.bank, plan.omega_denominators,
                                          discovery_config(tcfg), mcfg.num_classes,
                                          mcfg.stages, &model, &f_ptrs);

    plan.reg_matches.resize(batch.size());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        for (int k = 0; k < mcfg.stages; ++k) {
            plan.reg_matches[n].push_back(
                tcfg.regression_enabled
                    ? regression_matches(plan.discovery.labels[n][k], batch[n]->proposals,
                                         tcfg.discovered_regression)
                    : RegressionMatches{});
        }
    }
    return plan;
}

StepLosses evaluate_step(const Model& model,
                         const std::vector<const LabeledImage*>& batch,
                         const StepPlan& plan, const Config& cfg) {
    const auto& tcfg = cfg.train;
    std::vector<ImageForward> fwd;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        fwd.push_back(forward_image(model, TrainingView(*batch[n]), plan.dropmasks[n], false));
    }

    std::vector<ad::Var> phi;
    std::vector<std::vector<int>> labels;
    std::vector<std::vector<ad::Var>> stage_scores;
    std::vector<ad::Var> deltas;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        phi.push_back(fwd[n].mil.phi);
        labels.push_back(batch[n]->image_labels);
        stage_scores.push_back(fwd[n].stage_scores);
        deltas.push_back(fwd[n].deltas);
    }

    ad::Var l_mil = mil_loss(phi, labels);
    ad::Var l_cls = refinement_cls_loss(stage_scores, plan.discovery.labels);
    ad::Var l_reg = tcfg.regression_enabled
                        ? regression_loss(deltas, plan.reg_matches)
                        : ad::Var::constant(ad::Mat::Zero(1, 1));

    ad::Var l_wscl;
    if (tcfg.wscl_enabled && plan.bank.size() >= 2) {
        std::vector<const ad::Var*> f_ptrs(batch.size());
        for (std::size_t n = 0; n < batch.size(); ++n) f_ptrs[n] = &fwd[n].f;
        ad::Var emb = embed_entries(model, f_ptrs, plan.bank.entries);
        std::vector<int> t;
        std::vector<double> omega;
        for (const auto& e : plan.bank.entries) {
            t.push_back(e.pseudo_label);
            omega.push_back(e.weight);
        }
        l_wscl = wscl_loss(emb, t, omega, tcfg.epsilon);
    } else {
        if (tcfg.wscl_enabled) {
            std::cerr << "[wsod] warning: contrastive bank has fewer than 2 entries, "
                         "wscl contributes 0 this step\n";
        }
        l_wscl = ad::Var::constant(ad::Mat::Zero(1, 1));
    }
    StepLosses out;
    out.mil = l_mil;
    out.cls = l_cls;
    out.reg = l_reg;
    out.wscl = l_wscl;
    out.total = total_loss(l_mil, l_cls, l_reg, l_wscl, tcfg.lambda);
    return out;
}

SgdOptimizer::SgdOptimizer(Model& model) : model_(&model) {
    for (const auto& [name, var] : model.parameters()) {
        velocity_.push_back(ad::Mat::Zero(var.rows(), var.cols()));
    }
}

void SgdOptimizer::step(double lr, double momentum, double weight_decay) {
    auto params = model_->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& var = params[i].second;
        ad::Mat g = var.has_grad() ? var.grad()
                                   : ad::Mat::Zero(var.rows(), var.cols());
        g += weight_decay * var.value();
        velocity_[i] = momentum * velocity_[i] - lr * g;
        var.mutable_value() += velocity_[i];
        var.zero_grad();
    }
}

namespace {

std::vector<int> sample_batch_indices(Rng& rng, int dataset_size, int batch_size) {
    const int want = std::min(batch_size, dataset_size);
    std::set<int> chosen;
    std::vector<int> out;
    while (static_cast<int>(out.size()) < want) {
        const int idx = static_cast<int>(rng.uniform_int(0, dataset_size - 1));
        if (chosen.insert(idx).second) out.push_back(idx);
    }
    return out;
}

}  // namespace

TrainResult train(Model& model, const std::vector<LabeledImage>& dataset,
                  const Config& cfg, std::ostream* metric_log) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    TrainResult result;
    SgdOptimizer opt(model);

    for (int step = 0; step < cfg.train.iterations; ++step) {
        Rng step_rng(Rng::derive(cfg.train.seed, static_cast<std::uint64_t>(step)));
        const auto indices = sample_batch_indices(
            step_rng, static_cast<int>(dataset.size()), cfg.train.batch_size);
        std::vector<const LabeledImage*> batch;
        for (int i : indices) batch.push_back(&dataset[i]);

        StepPlan plan = build_step_plan(model, batch, cfg, step_rng);
        plan.batch_indices = indices;
        TotalLoss loss = evaluate_step(model, batch, plan, cfg).total;

        if (!std::isfinite(loss.report.total)) {
            std::ostringstream msg;
            msg << "train: non-finite loss at iteration " << step << " (mil="
                << loss.report.mil << " cls=" << loss.report.cls << " reg="
                << loss.report.reg << " wscl=" << loss.report.wscl << "); batch:";
            for (const LabeledImage* img : batch) msg << " " << img->id;
            throw std::runtime_error(msg.str());
        }

        ad::backward(loss.node);
        opt.step(cfg.train.learning_rate, cfg.train.momentum, cfg.train.weight_decay);

        if (step % cfg.train.log_every == 0 || step + 1 == cfg.train.iterations) {
            result.logged.emplace_back(step, loss.report);
            if (metric_log) {
                (*metric_log) << "{\"iter\": " << step << ", \"mil\": " << loss.report.mil
                              << ", \"cls\": " << loss.report.cls
                              << ", \"reg\": " << loss.report.reg
                              << ", \"wscl\": " << loss.report.wscl
                              << ", \"total\": " << loss.report.total << "}\n";
            }
        }
    }
    return result;
}

std::vector<Detection> infer_image(const Model& model, const TrainingView& view,
                                   const Config& cfg) {
    const auto& mcfg = model.config();
    const auto fwd = forward_image(
        model, view, identity_dropblock_mask(mcfg, static_cast<int>(view.proposals().size())),
        false);

    const int m_count = static_cast<int>(view.proposals().size());
    ad::Mat avg = ad::Mat::Zero(mcfg.num_classes + 1, m_count);
    for (const auto& s : fwd.stage_scores) avg += s.value();
    avg /= static_cast<double>(mcfg.stages);

    const ad::Mat& deltas = fwd.deltas.value();
    std::vector<Box> decoded(m_count);
    std::vector<bool> usable(m_count, false);
    for (int m = 0; m < m_count; ++m) {
        BoxDeltas d{deltas(0, m), deltas(1, m), deltas(2, m), deltas(3, m)};
        Box b = decode_deltas(view.proposals()[m], d);
        usable[m] = clip_box(b, view.width(), view.height());
        decoded[m] = b;
    }

    std::vector<Detection> out;
    for (int c = 0; c < mcfg.num_classes; ++c) {
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (int m = 0; m < m_count; ++m) {
            if (!usable[m]) continue;
            const double s = avg(c, m);
            if (s <= cfg.infer.confidence_threshold) continue;
            boxes.push_back(decoded[m]);
            scores.push_back(s);
        }
        for (std::size_t kept : nms(boxes, scores, cfg.infer.nms)) {
            Detection det;
            det.image_id = view.id();
            det.category = c;
            det.box = boxes[kept];
            det.score = scores[kept];
            out.push_back(det);
        }
    }
    return out;
}

std::vector<PseudoGroundTruth> discover_pseudo_gts(const Model& model,
                                                   const std::vector<LabeledImage>& images,
                                                   const Config& cfg) {
    std::vector<PseudoGroundTruth> all;
    Rng rng(Rng::derive(cfg.train.seed, 0x9e3779b9ULL));
    const int batch_size = std::max(1, cfg.train.batch_size);
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        std::vector<const LabeledImage*> batch;
        for (std::size_t i = start; i < std::min(images.size(), start + batch_size); ++i) {
            batch.push_back(&images[i]);
        }
        StepPlan plan = build_step_plan(model, batch, cfg, rng);
        for (auto gt : plan.discovery.pseudo_gts) {
            all.push_back(std::move(gt));
        }
    }
    return all;
}

}  // namespace wsod
