#pragma once

/// Training orchestration and inference. A step splits into two phases:
/// build_step_plan runs the forward pass and fixes every discrete decision
/// (dropout masks, sampled sets, augmentation maps, discovery, labels);
/// evaluate_step then rebuilds the losses as a pure differentiable function
/// of the parameters given that frozen plan. Training backpropagates the
/// total; the gradient-check harness finite-differences the same function.

#include <iosfwd>
#include <vector>

#include "wsod/config.hpp"
#include "wsod/discovery.hpp"
#include "wsod/losses.hpp"
#include "wsod/model.hpp"

namespace wsod {

struct Detection {
    std::string image_id;
    int category = -1;
    Box box;
    double score = 0.0;
};

struct ImageForward {
    ad::Var featmap;
    ad::Var f;        // clean RoI maps, (D*roi*roi) x M
    ad::Var v_tilde;  // block-dropped path feeding mil/refinement/regression
    MilScores mil;
    std::vector<ad::Var> stage_scores;  // K entries
    ad::Var deltas;                     // 4 x M
    ad::Var v;  // clean extractor output; set only when with_embeddings
    ad::Var z;  // embeddings of every proposal; set only when with_embeddings
};

ImageForward forward_image(const Model& model, const TrainingView& view,
                           const DropblockMask& mask, bool with_embeddings);

struct StepPlan {
    std::vector<int> batch_indices;  // dataset positions of the batch images
    std::vector<DropblockMask> dropmasks;
    ContrastiveBank bank;  // S^U; entries carry their recorded random maps
    std::map<std::pair<int, int>, double> omega_denominators;
    DiscoveryResult discovery;
    std::vector<std::vector<RegressionMatches>> reg_matches;  // [image][stage]
};

StepPlan build_step_plan(const Model& model,
                         const std::vector<const LabeledImage*>& batch,
                         const Config& cfg, Rng& rng);

struct StepLosses {
    ad::Var mil, cls, reg, wscl;  // component nodes, each 1x1
    TotalLoss total;
};

/// Pure function of the parameters for a frozen plan.
StepLosses evaluate_step(const Model& model,
                         const std::vector<const LabeledImage*>& batch,
                         const StepPlan& plan, const Config& cfg);

class SgdOptimizer {
public:
    explicit SgdOptimizer(Model& model);
    /// v = momentum*v - lr*(g + wd*p); p += v; gradients are consumed.
    void step(double lr, double momentum, double weight_decay);

private:
    Model* model_;
    std::vector<ad::Mat> velocity_;
};

struct TrainResult {
    std::vector<std::pair<int, LossReport>> logged;  // (iteration, report)
};

/// Deterministic given (model init, dataset, config). Writes one JSON line
/// per logged step to `metric_log` when provided. Aborts with a diagnostic
/// listing the offending batch when a loss turns non-finite.
TrainResult train(Model& model, const std::vector<LabeledImage>& dataset,
                  const Config& cfg, std::ostream* metric_log);

/// Average the K stage scores, decode regression offsets, clip, then
/// per-class NMS; detections below the confidence threshold are dropped.
std::vector<Detection> infer_image(const Model& model, const TrainingView& view,
                                   const Config& cfg);

/// Run a discovery pass over `images` without updating parameters: one
/// batch per call of build_step_plan, returning every pseudo groundtruth.
std::vector<PseudoGroundTruth> discover_pseudo_gts(
    const Model& model, const std::vector<LabeledImage>& images, const Config& cfg);

}  // namespace wsod
