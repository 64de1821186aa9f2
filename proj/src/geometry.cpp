#include "wsod/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wsod {

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 < x2 && y1 < y2;
}

double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) {
        throw std::invalid_argument("iou: degenerate or non-finite box");
    }
    const double ix1 = std::max(a.x1, b.x1);
    const double iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2);
    const double iy2 = std::min(a.y2, b.y2);
    const double iw = ix2 - ix1;
    const double ih = iy2 - iy1;
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double threshold) {
    if (boxes.size() != scores.size()) {
        throw std::invalid_argument("nms: boxes/scores size mismatch");
    }
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // stable sort: equal scores keep lower original index first
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        return scores[i] > scores[j];
    });

    std::vector<std::size_t> kept;
    kept.reserve(boxes.size());
    for (std::size_t idx : order) {
        bool suppressed = false;
        for (std::size_t k : kept) {
            if (iou(boxes[idx], boxes[k]) > threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

BoxDeltas encode_deltas(const Box& anchor, const Box& target) {
    if (!anchor.valid() || !target.valid()) {
        throw std::invalid_argument("encode_deltas: invalid box");
    }
    BoxDeltas d;
    d.dx = (target.cx() - anchor.cx()) / anchor.width();
    d.dy = (target.cy() - anchor.cy()) / anchor.height();
    d.dw = std::log(target.width() / anchor.width());
    d.dh = std::log(target.height() / anchor.height());
    return d;
}

Box decode_deltas(const Box& anchor, const BoxDeltas& deltas) {
    if (!anchor.valid()) {
        throw std::invalid_argument("decode_deltas: invalid anchor");
    }
    const double cx = anchor.cx() + deltas.dx * anchor.width();
    const double cy = anchor.cy() + deltas.dy * anchor.height();
    const double w = std::exp(deltas.dw) * anchor.width();
    const double h = std::exp(deltas.dh) * anchor.height();
    Box b;
    b.x1 = cx - 0.5 * w;
    b.y1 = cy - 0.5 * h;
    b.x2 = cx + 0.5 * w;
    b.y2 = cy + 0.5 * h;
    return b;
}

bool clip_box(Box& box, double width, double height) {
    box.x1 = std::clamp(box.x1, 0.0, width);
    box.y1 = std::clamp(box.y1, 0.0, height);
    box.x2 = std::clamp(box.x2, 0.0, width);
    box.y2 = std::clamp(box.y2, 0.0, height);
    return box.valid();
}

}  // namespace wsod
