#pragma once

/// Detection metrics: per-class average precision (all-point or 11-point
/// interpolation), mAP, correct-localization rate, and average recall at
/// bounded detections per image over the 0.5:0.05:0.95 IoU ladder.

#include <cmath>
#include <map>
#include <vector>

#include "wsod/config.hpp"
#include "wsod/dataset.hpp"
#include "wsod/engine.hpp"

namespace wsod {

struct ClassEval {
    double ap = std::nan("");  // undefined when the class has no groundtruth
    int gt_count = 0;
    double corloc = std::nan("");
    int positive_images = 0;
};

struct EvalResult {
    std::vector<ClassEval> per_class;
    double map = std::nan("");          // mean over classes with gt
    double mean_corloc = std::nan("");  // mean over classes with positives
    std::map<int, double> average_recall;  // k -> AR@k

    double map_percent() const { return 100.0 * map; }
};

/// detections_per_image[i] pairs with images[i]. Difficult groundtruths are
/// neither matched as positives nor counted in the totals; detections
/// landing on them are ignored.
EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& detections_per_image,
                               const std::vector<LabeledImage>& images, int num_classes,
                               const EvalConfig& cfg);

}  // namespace wsod
