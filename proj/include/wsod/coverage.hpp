#pragma once

/// Annotation-coverage analytics: how many target objects single-proposal
/// (argmax) labeling can possibly select, per class and in total, and how
/// many objects a dumped pseudo-groundtruth set actually covers.

#include <map>
#include <string>
#include <vector>

#include "wsod/dataset.hpp"
#include "wsod/discovery.hpp"

namespace wsod {

struct CoverageCounts {
    int selected = 0;
    int total = 0;
    double fraction() const { return total > 0 ? static_cast<double>(selected) / total : 0.0; }
};

struct CoverageReport {
    /// Difficult objects excluded from presence and totals.
    std::map<std::string, CoverageCounts> per_class;
    CoverageCounts overall;
    /// Difficult objects counted like any other.
    std::map<std::string, CoverageCounts> per_class_with_difficult;
    CoverageCounts overall_with_difficult;
};

/// One selected object per (image, present class) against instance totals.
CoverageReport argmax_coverage(const VocLoadReport& voc);

CoverageReport argmax_coverage(const std::vector<LabeledImage>& images,
                               const std::vector<std::string>& category_names);

/// Distinct groundtruths covered (IoU >= threshold, same category) by the
/// dumped pseudo groundtruths, against instance totals.
CoverageReport discovery_dump_coverage(
    const std::vector<LabeledImage>& images,
    const std::vector<std::string>& category_names,
    const std::map<std::string, std::vector<PseudoGroundTruth>>& dump_by_image,
    double iou_threshold = 0.5);

}  // namespace wsod
