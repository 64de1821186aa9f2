#pragma once

/// Axis-aligned box arithmetic: IoU, greedy NMS, and center/log-size delta
/// coding. Pure functions, no shared state.

#include <cstddef>
#include <vector>

namespace wsod {

/// Axis-aligned rectangle in continuous pixel coordinates, x1 < x2, y1 < y2.
/// Area convention is (x2-x1)*(y2-y1) with no +1 pixel correction.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    bool valid() const;
};

/// Normalized center offsets and log width/height ratios relative to an
/// anchor box. Class-agnostic.
struct BoxDeltas {
    double dx = 0.0;
    double dy = 0.0;
    double dw = 0.0;
    double dh = 0.0;
};

/// Intersection-over-union of two valid boxes. Symmetric, in [0, 1],
/// 0 when disjoint. Throws std::invalid_argument on a degenerate box.
double iou(const Box& a, const Box& b);

/// Greedy non-maximum suppression. A box is removed iff its IoU with an
/// already-kept higher-scored box exceeds `threshold`. Returns indices of
/// kept boxes ordered by descending score; equal scores keep the lower
/// original index first.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double threshold);

/// Encode `target` relative to `anchor`:
/// ((tcx-acx)/aw, (tcy-acy)/ah, log(tw/aw), log(th/ah)).
BoxDeltas encode_deltas(const Box& anchor, const Box& target);

/// Inverse of encode_deltas.
Box decode_deltas(const Box& anchor, const BoxDeltas& deltas);

/// Clip a box to [0,w]x[0,h]. Returns false if the clipped box is degenerate.
bool clip_box(Box& box, double width, double height);

}  // namespace wsod
