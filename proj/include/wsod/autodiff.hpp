#pragma once

/// Reverse-mode automatic differentiation over double-precision Eigen
/// matrices. A Var is a handle to a DAG node; ops build the graph and
/// backward() runs the reverse sweep from a 1x1 loss node.
///
/// The op set is exactly what the detection pipeline needs: dense algebra,
/// the two softmax orientations, convolution, RoI max pooling, column
/// gather/concat for bank assembly, and L2 column normalization.

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "wsod/geometry.hpp"

namespace wsod::ad {

using Mat = Eigen::MatrixXd;

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Add `g` into this node's gradient, allocating on first touch.
    void accumulate(const Mat& g);
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    /// Leaf that does not require gradients (data, masks, labels).
    static Var constant(Mat v);
    /// Leaf that requires gradients (a trainable parameter).
    static Var leaf(Mat v);

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& mutable_value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->grad_ready; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();
    std::shared_ptr<Node> node() const { return node_; }

    int rows() const { return static_cast<int>(node_->value.rows()); }
    int cols() const { return static_cast<int>(node_->value.cols()); }

private:
    std::shared_ptr<Node> node_;
};

/// Reverse sweep from a 1x1 loss node; accumulates into every
/// requires-grad node reachable through the graph.
void backward(const Var& loss);

// --- dense algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// W*x with bias broadcast over columns: (out x in)*(in x m) + b(out x 1).
Var affine_cols(const Var& w, const Var& x, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Elementwise multiply by a constant matrix (masks, per-entry weights).
Var cmul(const Var& a, const Mat& m);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);

// --- elementwise nonlinearities --------------------------------------------

Var relu(const Var& x);
Var exp(const Var& x);
/// log(clamp(x, lo, hi)); gradient is 1/x inside the window, 0 outside.
Var log_clamped(const Var& x, double lo, double hi);
/// Smooth-L1 applied elementwise: 0.5*x^2 for |x|<1, |x|-0.5 otherwise.
Var huber(const Var& x);

// --- softmax / reductions ---------------------------------------------------

/// Softmax over rows within each column (each column sums to 1).
Var softmax_cols(const Var& x);
/// Softmax over columns within each row (each row sums to 1).
Var softmax_rows(const Var& x);
Var row_sums(const Var& x);  // (r x c) -> (r x 1)
Var col_sums(const Var& x);  // (r x c) -> (1 x c)
Var sum_all(const Var& x);   // -> (1 x 1)
/// sum(x .* w) with constant w; the workhorse of the loss terms.
Var weighted_sum(const Var& x, const Mat& w);

// --- structure ops ----------------------------------------------------------

Var gather_cols(const Var& x, const std::vector<int>& idx);
Var concat_cols(const std::vector<Var>& xs);
/// Per-column v / (||v|| + eps).
Var l2_normalize_cols(const Var& x, double eps = 1e-12);

// --- spatial ops -------------------------------------------------------------

/// Image/feature layout: rows = channels, cols = h*w with pixel index y*w+x.
struct Conv2dSpec {
    int in_ch = 0, in_h = 0, in_w = 0;
    int out_ch = 0, ksize = 3, stride = 1, pad = 1;
    int out_h() const { return (in_h + 2 * pad - ksize) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - ksize) / stride + 1; }
};

/// x: (in_ch x in_h*in_w), w: (out_ch x in_ch*k*k), b: (out_ch x 1).
Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec);

/// Max-pool each box (pixel coords, divided by `stride`) into an
/// out_h x out_w grid per channel. feat: (ch x feat_h*feat_w).
/// Result: (ch*out_h*out_w x n_boxes), channel-major rows.
/// Every bin covers at least one cell, so constant maps pool to constants.
Var roi_maxpool(const Var& feat, int feat_h, int feat_w,
                const std::vector<Box>& boxes, double stride,
                int out_h, int out_w);

}  // namespace wsod::ad
