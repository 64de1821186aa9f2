#pragma once

/// Training objectives: the multi-label MIL loss, the weighted per-stage
/// instance classification loss, the smooth-L1 box regression loss, the
/// weighted contrastive loss over the augmented bank, and their weighted
/// total. Each builder returns a 1x1 graph node so gradients flow to every
/// upstream parameter; supervision (labels, weights) enters as constants.

#include <vector>

#include "wsod/autodiff.hpp"
#include "wsod/discovery.hpp"
#include "wsod/geometry.hpp"

namespace wsod {

struct LossReport {
    double mil = 0.0;
    double cls = 0.0;
    double reg = 0.0;
    double wscl = 0.0;  // pre-lambda
    double lambda = 0.0;
    double total = 0.0;
};

/// -(1/N) sum_n sum_c [y log phi + (1-y) log(1-phi)], phi clamped to
/// [1e-8, 1-1e-8] before the logs. One phi column (C x 1) per image.
ad::Var mil_loss(const std::vector<ad::Var>& phi_per_image,
                 const std::vector<std::vector<int>>& labels_per_image);

/// -(1/N)(1/K) sum_n sum_k (1/M^n) sum_m w_m log x[assigned_m, m],
/// log inputs clamped at 1e-8. scores_per_image[n][k-1] is (C+1) x M.
ad::Var refinement_cls_loss(
    const std::vector<std::vector<ad::Var>>& scores_per_image,
    const std::vector<std::vector<StageLabels>>& labels_per_image);

/// Matched regression pairs of one image-stage: proposals claimed by a
/// pseudo groundtruth, with targets encoded against the claiming box.
struct RegressionMatches {
    std::vector<int> proposal_indices;
    ad::Mat target_deltas;         // 4 x n
    std::vector<double> weights;   // n
};

RegressionMatches regression_matches(const StageLabels& labels,
                                     const std::vector<Box>& proposals,
                                     bool include_discovered);

/// (1/N)(1/K) sum_n sum_k (1/M̂^{n,k}) sum_matched w * smooth_L1(pred - target)
/// summed over the 4 delta coordinates; stages with no matches contribute 0.
/// deltas_per_image[n] is the shared regressor output (4 x M).
ad::Var regression_loss(const std::vector<ad::Var>& deltas_per_image,
                        const std::vector<std::vector<RegressionMatches>>& matches_per_image);

/// Weighted supervised-contrastive loss over the bank: embeddings (d x n,
/// unit columns), pseudo labels and difficulty weights per entry.
/// Classes with a single entry are skipped; n < 2 returns a constant 0.
/// Log-sum-exp is stabilized with a detached row max, which also makes the
/// two-entry single-class case return exactly 0.
ad::Var wscl_loss(const ad::Var& embeddings, const std::vector<int>& pseudo_labels,
                  const std::vector<double>& omegas, double epsilon);

struct TotalLoss {
    ad::Var node;  // 1x1
    LossReport report;
};

TotalLoss total_loss(const ad::Var& mil, const ad::Var& cls, const ad::Var& reg,
                     const ad::Var& wscl, double lambda);

}  // namespace wsod
