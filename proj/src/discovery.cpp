#include "wsod/discovery.hpp"

#include <algorithm>
#include <stdexcept>

namespace wsod {

StageLabels StageLabels::background(int num_classes, int num_proposals) {
    StageLabels out;
    out.num_classes = num_classes;
    out.assigned.assign(num_proposals, num_classes);
    out.weights.assign(num_proposals, 1.0);
    out.claim_iou.assign(num_proposals, 0.0);
    out.claim_box.assign(num_proposals, Box{});
    out.claim_source.assign(num_proposals, -1);
    return out;
}

ad::Mat StageLabels::dense() const {
    ad::Mat y = ad::Mat::Zero(num_classes + 1, static_cast<int>(assigned.size()));
    for (std::size_t m = 0; m < assigned.size(); ++m) {
        y(assigned[m], static_cast<int>(m)) = 1.0;
    }
    return y;
}

double compute_threshold(const Eigen::VectorXd& z_argmax, const ContrastiveBank& bank,
                         int category) {
    const auto idx = bank.class_indices(category);
    if (idx.empty()) {
        throw std::invalid_argument("compute_threshold: empty bank bucket");
    }
    double acc = 0.0;
    for (int i : idx) acc += z_argmax.dot(bank.entries[i].embedding);
    return acc / static_cast<double>(idx.size());
}

std::vector<int> discover_candidates_similarity(const ad::Mat& z_all, int mbar, double tau) {
    std::vector<int> out;
    const Eigen::VectorXd anchor = z_all.col(mbar);
    for (int m = 0; m < z_all.cols(); ++m) {
        if (anchor.dot(z_all.col(m)) > tau) out.push_back(m);
    }
    return out;
}

std::vector<int> discover_candidates_classification(const ad::Mat& prev_scores,
                                                    int category, double tau_cls) {
    std::vector<int> out;
    for (int m = 0; m < prev_scores.cols(); ++m) {
        if (prev_scores(category, m) > tau_cls) out.push_back(m);
    }
    return out;
}

std::vector<PseudoGroundTruth> select_pseudo_gts(const PseudoGroundTruth& argmax_gt,
                                                 const std::vector<int>& candidates,
                                                 const ad::Mat& prev_scores,
                                                 const std::vector<Box>& proposals,
                                                 double tau_nms) {
    std::vector<PseudoGroundTruth> out{argmax_gt};

    // candidates in descending previous-stage score, ties by index
    std::vector<int> order = candidates;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return prev_scores(argmax_gt.category, a) > prev_scores(argmax_gt.category, b);
    });

    for (int m : order) {
        if (m == argmax_gt.proposal_index) continue;
        bool suppressed = false;
        for (const auto& kept : out) {
            if (iou(proposals[m], kept.box) > tau_nms) {
                suppressed = true;
                break;
            }
        }
        if (suppressed) continue;
        PseudoGroundTruth gt;
        gt.category = argmax_gt.category;
        gt.box = proposals[m];
        gt.stage = argmax_gt.stage;
        gt.source = PseudoGroundTruth::Source::kDiscovered;
        gt.score = prev_scores(argmax_gt.category, m);
        gt.proposal_index = m;
        gt.image_index = argmax_gt.image_index;
        gt.image_id = argmax_gt.image_id;
        out.push_back(gt);
    }
    return out;
}

void relabel(StageLabels& labels, const std::vector<PseudoGroundTruth>& pseudo_gts,
             const std::vector<Box>& proposals, double relabel_iou) {
    for (const auto& gt : pseudo_gts) {
        for (std::size_t m = 0; m < proposals.size(); ++m) {
            const double ov = iou(proposals[m], gt.box);
            if (ov > relabel_iou && ov > labels.claim_iou[m]) {
                labels.assigned[m] = gt.category;
                labels.weights[m] = gt.score;
                labels.claim_iou[m] = ov;
                labels.claim_box[m] = gt.box;
                labels.claim_source[m] =
                    gt.source == PseudoGroundTruth::Source::kArgmax ? 0 : 1;
            }
        }
    }
}

namespace {

// class scores the adaptive classification threshold averages: run the
// supervising classifier of this stage over the bucket's augmented features
double adaptive_cls_threshold(const Model& model, const ContrastiveBank& bank,
                              const std::vector<const ad::Var*>& f_per_image,
                              int category, int stage) {
    const auto idx = bank.class_indices(category);
    if (idx.empty()) return 1.0;  // nothing to average: mine nothing
    std::vector<BankEntry> subset;
    for (int i : idx) subset.push_back(bank.entries[i]);
    // eta features of the augmented views, batched per image
    std::vector<const ad::Var*> fs = f_per_image;
    ad::Var etas;
    {
        // reuse embed_entries' gather path up to eta by re-running eta on the
        // same multiplied columns; cheapest correct path is a fresh gather
        const auto& cfg = model.config();
        std::vector<ad::Var> blocks;
        for (int img = 0; img < static_cast<int>(fs.size()); ++img) {
            std::vector<int> cols;
            std::vector<const BankEntry*> local;
            for (const auto& e : subset) {
                if (e.image_index == img) {
                    cols.push_back(e.proposal_index);
                    local.push_back(&e);
                }
            }
            if (cols.empty()) continue;
            ad::Mat mult = ad::Mat::Ones(cfg.roi_input_dim(), static_cast<int>(cols.size()));
            const int cells = cfg.roi_size * cfg.roi_size;
            const int d = cfg.conv_channels.back();
            for (std::size_t t = 0; t < local.size(); ++t) {
                const auto& e = *local[t];
                if (e.augmentation == Augmentation::kMask) {
                    for (int cell = 0; cell < cells; ++cell)
                        for (int c = 0; c < d; ++c)
                            mult(c * cells + cell, static_cast<int>(t)) = e.spatial_map[cell];
                } else if (e.augmentation == Augmentation::kNoise) {
                    for (int cell = 0; cell < cells; ++cell)
                        for (int c = 0; c < d; ++c)
                            mult(c * cells + cell, static_cast<int>(t)) = 1.0 + e.spatial_map[cell];
                }
            }
            blocks.push_back(model.eta(ad::cmul(ad::gather_cols(*fs[img], cols), mult)));
        }
        if (blocks.empty()) return 1.0;
        etas = blocks.size() == 1 ? blocks[0] : ad::concat_cols(blocks);
    }
    ad::Mat scores;
    if (stage == 1) {
        scores = model.mil_head(etas).x.value();
    } else {
        scores = model.refinement_head(etas, stage - 1).value();
    }
    return scores.row(category).mean();
}

}  // namespace

DiscoveryResult run_object_discovery(
    const std::vector<DiscoveryImageInput>& batch, ContrastiveBank& bank,
    const std::map<std::pair<int, int>, double>& omega_denominators,
    const DiscoveryConfig& cfg, int num_classes, int stages,
    const Model* model, const std::vector<const ad::Var*>* f_per_image) {
    DiscoveryResult result;
    result.labels.resize(batch.size());

    for (const auto& input : batch) {
        auto& image_labels = result.labels[input.image_index];
        const int num_proposals = static_cast<int>(input.proposals->size());
        for (int k = 0; k < stages; ++k) {
            image_labels.push_back(StageLabels::background(num_classes, num_proposals));
        }

        for (int k = 1; k <= stages; ++k) {
            StageLabels& labels = image_labels[k - 1];
            const ad::Mat& prev = input.supervision[k - 1];

            for (int c = 0; c < num_classes; ++c) {
                if (input.labels[c] != 1) continue;
                const int mbar = select_argmax(prev, c);

                PseudoGroundTruth argmax_gt;
                argmax_gt.category = c;
                argmax_gt.box = (*input.proposals)[mbar];
                argmax_gt.stage = k;
                argmax_gt.source = PseudoGroundTruth::Source::kArgmax;
                argmax_gt.score = prev(c, mbar);
                argmax_gt.proposal_index = mbar;
                argmax_gt.image_index = input.image_index;
                argmax_gt.image_id = input.image_id;

                // argmax labeling first; mining never removes it
                relabel(labels, {argmax_gt}, *input.proposals, cfg.relabel_iou);
                result.pseudo_gts.push_back(argmax_gt);
                if (!cfg.enabled) continue;

                std::vector<int> candidates;
                if (cfg.criterion == DiscoveryConfig::Criterion::kSimilarity) {
                    const double tau =
                        compute_threshold(input.z_all.col(mbar), bank, c);
                    candidates = discover_candidates_similarity(input.z_all, mbar, tau);
                } else {
                    double tau_cls = cfg.cls_threshold;
                    if (cfg.cls_adaptive && model != nullptr && f_per_image != nullptr) {
                        tau_cls = adaptive_cls_threshold(*model, bank, *f_per_image, c, k);
                    }
                    candidates = discover_candidates_classification(prev, c, tau_cls);
                }

                // skip proposals already claimed as foreground at this stage
                std::vector<int> fresh;
                for (int m : candidates) {
                    if (!labels.is_foreground(m)) fresh.push_back(m);
                }

                const auto pgts =
                    select_pseudo_gts(argmax_gt, fresh, prev, *input.proposals, cfg.tau_nms);

                std::vector<PseudoGroundTruth> discovered(pgts.begin() + 1, pgts.end());
                if (!discovered.empty()) {
                    relabel(labels, discovered, *input.proposals, cfg.relabel_iou);
                    for (const auto& gt : discovered) {
                        result.pseudo_gts.push_back(gt);

                        BankEntry e;
                        e.embedding = input.z_all.col(gt.proposal_index);
                        e.pseudo_label = c;
                        e.image_id = input.image_id;
                        e.image_index = input.image_index;
                        e.proposal_index = gt.proposal_index;
                        e.stage = k;
                        e.augmentation = Augmentation::kDiscovered;
                        if (cfg.discovered_omega == DiscoveryConfig::DiscoveredOmega::kOne) {
                            e.weight = 1.0;
                        } else {
                            const auto it =
                                omega_denominators.find({input.image_index, c});
                            const double denom =
                                it != omega_denominators.end() ? it->second : 0.0;
                            e.weight = denom > 0.0
                                           ? input.mil_x(c, gt.proposal_index) / denom
                                           : 1.0;
                        }
                        bank.entries.push_back(std::move(e));
                    }
                }
            }
        }
    }
    return result;
}

}  // namespace wsod
