#include "wsod/eval.hpp"

#include <algorithm>
#include <numeric>

namespace wsod {

namespace {

struct ClassDetection {
    int image = -1;
    double score = 0.0;
    Box box;
};

struct ClassGt {
    std::vector<Box> boxes;        // non-difficult
    std::vector<Box> difficult;
};

double all_point_ap(std::vector<double> recall, std::vector<double> precision) {
    // precision envelope from the right, then area under the PR curve
    std::vector<double> r{0.0};
    r.insert(r.end(), recall.begin(), recall.end());
    r.push_back(recall.empty() ? 0.0 : recall.back());
    std::vector<double> p{0.0};
    p.insert(p.end(), precision.begin(), precision.end());
    p.push_back(0.0);
    for (int i = static_cast<int>(p.size()) - 2; i >= 0; --i) {
        p[i] = std::max(p[i], p[i + 1]);
    }
    double ap = 0.0;
    for (std::size_t i = 1; i < r.size(); ++i) {
        ap += (r[i] - r[i - 1]) * p[i];
    }
    return ap;
}

double eleven_point_ap(const std::vector<double>& recall,
                       const std::vector<double>& precision) {
    double ap = 0.0;
    for (int t = 0; t <= 10; ++t) {
        const double thr = t / 10.0;
        double best = 0.0;
        for (std::size_t i = 0; i < recall.size(); ++i) {
            if (recall[i] >= thr) best = std::max(best, precision[i]);
        }
        ap += best / 11.0;
    }
    return ap;
}

// greedy matching at `thr`; returns matched gt count with at most
// `max_dets` highest-scored detections considered per image
int recall_matches(const std::vector<ClassDetection>& dets_sorted,
                   const std::vector<ClassGt>& gts, int num_images, double thr,
                   int max_dets) {
    std::vector<int> used_per_image(num_images, 0);
    std::vector<std::vector<bool>> matched(num_images);
    for (int i = 0; i < num_images; ++i) matched[i].assign(gts[i].boxes.size(), false);
    int total = 0;
    for (const auto& det : dets_sorted) {
        if (used_per_image[det.image] >= max_dets) continue;
        used_per_image[det.image] += 1;
        int best = -1;
        double best_iou = thr;
        for (std::size_t g = 0; g < gts[det.image].boxes.size(); ++g) {
            if (matched[det.image][g]) continue;
            const double ov = iou(det.box, gts[det.image].boxes[g]);
            if (ov >= best_iou) {
                best_iou = ov;
                best = static_cast<int>(g);
            }
        }
        if (best >= 0) {
            matched[det.image][best] = true;
            ++total;
        }
    }
    return total;
}

}  // namespace

EvalResult evaluate_detections(const std::vector<std::vector<Detection>>& detections_per_image,
                               const std::vector<LabeledImage>& images, int num_classes,
                               const EvalConfig& cfg) {
    if (detections_per_image.size() != images.size()) {
        throw std::invalid_argument("evaluate_detections: image count mismatch");
    }
    const int n_images = static_cast<int>(images.size());
    EvalResult result;
    result.per_class.resize(num_classes);

    for (int c = 0; c < num_classes; ++c) {
        std::vector<ClassGt> gts(n_images);
        int npos = 0;
        for (int i = 0; i < n_images; ++i) {
            for (const auto& g : images[i].gt) {
                if (g.category != c) continue;
                if (g.difficult) {
                    gts[i].difficult.push_back(g.box);
                } else {
                    gts[i].boxes.push_back(g.box);
                    ++npos;
                }
            }
        }

        std::vector<ClassDetection> dets;
        for (int i = 0; i < n_images; ++i) {
            for (const auto& d : detections_per_image[i]) {
                if (d.category == c) dets.push_back({i, d.score, d.box});
            }
        }
        std::stable_sort(dets.begin(), dets.end(),
                         [](const ClassDetection& a, const ClassDetection& b) {
                             return a.score > b.score;
                         });

        ClassEval& ce = result.per_class[c];
        ce.gt_count = npos;

        // --- AP -------------------------------------------------------------
        if (npos > 0) {
            std::vector<std::vector<bool>> matched(n_images);
            for (int i = 0; i < n_images; ++i) matched[i].assign(gts[i].boxes.size(), false);
            std::vector<double> recall, precision;
            int tp = 0, fp = 0;
            for (const auto& det : dets) {
                // best groundtruth of this class in the detection's image
                int best = -1;
                bool best_difficult = false;
                double best_iou = cfg.iou_threshold;
                for (std::size_t g = 0; g < gts[det.image].boxes.size(); ++g) {
                    const double ov = iou(det.box, gts[det.image].boxes[g]);
                    if (ov >= best_iou) {
                        best_iou = ov;
                        best = static_cast<int>(g);
                        best_difficult = false;
                    }
                }
                for (const auto& diff : gts[det.image].difficult) {
                    const double ov = iou(det.box, diff);
                    if (ov >= best_iou) {
                        best_iou = ov;
                        best_difficult = true;
                    }
                }
                if (best_difficult) continue;  // ignored, neither TP nor FP
                if (best >= 0 && !matched[det.image][best]) {
                    matched[det.image][best] = true;
                    ++tp;
                } else {
                    ++fp;  // duplicate or low-overlap detection
                }
                recall.push_back(static_cast<double>(tp) / npos);
                precision.push_back(static_cast<double>(tp) / (tp + fp));
            }
            ce.ap = cfg.eleven_point ? eleven_point_ap(recall, precision)
                                     : all_point_ap(recall, precision);
        }

        // --- CorLoc ----------------------------------------------------------
        int positives = 0, correct = 0;
        for (int i = 0; i < n_images; ++i) {
            if (gts[i].boxes.empty()) continue;
            ++positives;
            const ClassDetection* top = nullptr;
            for (const auto& det : dets) {
                if (det.image == i && (top == nullptr || det.score > top->score)) {
                    top = &det;
                }
            }
            if (!top) continue;
            for (const auto& g : gts[i].boxes) {
                if (iou(top->box, g) >= 0.5) {
                    ++correct;
                    break;
                }
            }
        }
        ce.positive_images = positives;
        if (positives > 0) ce.corloc = static_cast<double>(correct) / positives;

        // --- AR@k -------------------------------------------------------------
        if (npos > 0) {
            for (int k : {1, 10, 100}) {
                double acc = 0.0;
                int steps = 0;
                for (double thr = 0.5; thr < 0.951; thr += 0.05) {
                    acc += static_cast<double>(
                               recall_matches(dets, gts, n_images, thr, k)) /
                           npos;
                    ++steps;
                }
                result.average_recall[k] += acc / steps;  // summed; normalized below
            }
        }
    }

    // aggregate over classes
    double map_sum = 0.0;
    int map_n = 0;
    double corloc_sum = 0.0;
    int corloc_n = 0;
    int ar_classes = 0;
    for (const auto& ce : result.per_class) {
        if (!std::isnan(ce.ap)) {
            map_sum += ce.ap;
            ++map_n;
        }
        if (!std::isnan(ce.corloc)) {
            corloc_sum += ce.corloc;
            ++corloc_n;
        }
        if (ce.gt_count > 0) ++ar_classes;
    }
    if (map_n > 0) result.map = map_sum / map_n;
    if (corloc_n > 0) result.mean_corloc = corloc_sum / corloc_n;
    for (auto& [k, v] : result.average_recall) {
        if (ar_classes > 0) v /= ar_classes;
    }
    return result;
}

}  // namespace wsod
