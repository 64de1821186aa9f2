#pragma once

/// Object discovery: adaptive similarity threshold from the class bank,
/// candidate mining, NMS selection of new pseudo groundtruths, exclusive
/// relabeling of adjacent proposals, and bank updates that make freshly
/// discovered embeddings visible to later stages.

#include <map>
#include <string>
#include <vector>

#include "wsod/geometry.hpp"
#include "wsod/sampling.hpp"

namespace wsod {

struct PseudoGroundTruth {
    enum class Source { kArgmax, kDiscovered };
    int category = -1;
    Box box;
    int stage = 0;  // 1..K
    Source source = Source::kArgmax;
    double score = 0.0;  // previous-stage class score of the proposal
    int proposal_index = -1;
    int image_index = -1;
    std::string image_id;
};

/// Exclusive per-proposal assignment for one refinement stage: class index
/// in [0, C) or the background index C; loss weights default to 1 and are
/// overwritten by the claiming pseudo groundtruth's score.
struct StageLabels {
    int num_classes = 0;
    std::vector<int> assigned;    // per proposal
    std::vector<double> weights;  // per proposal
    std::vector<double> claim_iou;
    /// Claiming pseudo-gt box per foreground proposal (regression target).
    std::vector<Box> claim_box;
    /// -1 none, 0 argmax, 1 discovered.
    std::vector<int> claim_source;

    static StageLabels background(int num_classes, int num_proposals);
    int background_index() const { return num_classes; }
    bool is_foreground(int m) const { return assigned[m] != num_classes; }

    /// Dense (C+1) x M 0/1 matrix view; exactly one 1 per column.
    ad::Mat dense() const;
};

/// Mean dot product between the argmax embedding and every class-bank
/// entry. Throws std::invalid_argument on an empty bank bucket.
double compute_threshold(const Eigen::VectorXd& z_argmax, const ContrastiveBank& bank,
                         int category);

/// Similarity criterion: {m : z_m . z_mbar > tau}, strict.
std::vector<int> discover_candidates_similarity(const ad::Mat& z_all, int mbar, double tau);

/// Classification criterion: {m : scores(category, m) > tau_cls}, strict.
std::vector<int> discover_candidates_classification(const ad::Mat& prev_scores,
                                                    int category, double tau_cls);

/// NMS over the argmax pseudo-gt plus candidates, candidates scored by the
/// previous-stage class scores. The argmax entry is placed first and always
/// survives; other survivors come back as discovered pseudo-gts.
std::vector<PseudoGroundTruth> select_pseudo_gts(const PseudoGroundTruth& argmax_gt,
                                                 const std::vector<int>& candidates,
                                                 const ad::Mat& prev_scores,
                                                 const std::vector<Box>& proposals,
                                                 double tau_nms);

/// Claim every proposal with IoU > relabel_iou to a pseudo-gt; a proposal
/// claimed by several goes to the highest-IoU one, and carries the claiming
/// pseudo-gt's score as its loss weight.
void relabel(StageLabels& labels, const std::vector<PseudoGroundTruth>& pseudo_gts,
             const std::vector<Box>& proposals, double relabel_iou = 0.5);

struct DiscoveryConfig {
    bool enabled = true;
    enum class Criterion { kSimilarity, kClassification };
    Criterion criterion = Criterion::kSimilarity;
    double tau_nms = 0.1;
    /// Classification-criterion threshold; adaptive replaces it with the
    /// mean class score of the bank bucket's augmented features.
    double cls_threshold = 0.4;
    bool cls_adaptive = false;
    enum class DiscoveredOmega { kMilFormula, kOne };
    DiscoveredOmega discovered_omega = DiscoveredOmega::kMilFormula;
    double relabel_iou = 0.5;
};

struct DiscoveryImageInput {
    int image_index = -1;
    std::string image_id;
    std::vector<ad::Mat> supervision;  // [0]=mil x, [k]=stage-k score values
    ad::Mat z_all;                     // embed_dim x M embedding values
    ad::Mat mil_x;                     // for discovered-entry difficulty weights
    const std::vector<Box>* proposals = nullptr;
    std::vector<int> labels;
};

struct DiscoveryResult {
    /// labels[image][stage-1]
    std::vector<std::vector<StageLabels>> labels;
    std::vector<PseudoGroundTruth> pseudo_gts;
};

/// Orchestration: images outer, stages inner; per present class the argmax
/// pseudo-gt is labeled first, then (when enabled) candidates are mined
/// against the adaptive threshold, reduced by NMS, relabeled, and their
/// embeddings appended to the bank (turning S into S^U).
/// `model` and `f_per_image` are needed only by the adaptive classification
/// criterion, which scores the bank bucket's augmented features.
DiscoveryResult run_object_discovery(
    const std::vector<DiscoveryImageInput>& batch, ContrastiveBank& bank,
    const std::map<std::pair<int, int>, double>& omega_denominators,
    const DiscoveryConfig& cfg, int num_classes, int stages,
    const Model* model = nullptr,
    const std::vector<const ad::Var*>* f_per_image = nullptr);

}  // namespace wsod
