#include "wsod/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace wsod::ad {

void Node::accumulate(const Mat& g) {
    if (!grad_ready) {
        grad = g;
        grad_ready = true;
    } else {
        grad += g;
    }
}

Var Var::constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    return Var(n);
}

Var Var::leaf(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(n);
}

void Var::zero_grad() {
    if (node_) node_->grad_ready = false;
}

namespace {

Var make_node(Mat value, std::vector<std::shared_ptr<Node>> parents,
              std::function<void(Node&)> back) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(back);
    }
    return Var(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

}  // namespace

void backward(const Var& loss) {
    if (!loss.defined() || loss.rows() != 1 || loss.cols() != 1) {
        throw std::invalid_argument("backward: loss must be a defined 1x1 node");
    }
    // iterative post-order DFS over parent links
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // reset reachable gradients so repeated sweeps over a shared graph are
    // independent (leaves keep accumulating only within one sweep)
    for (Node* n : order) n->grad_ready = false;
    loss.node()->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->grad_ready && n->backward) {
            n->backward(*n);
        }
    }
}

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    Mat value;
    if (!trans_a && !trans_b) value = a.value() * b.value();
    else if (trans_a && !trans_b) value = a.value().transpose() * b.value();
    else if (!trans_a && trans_b) value = a.value() * b.value().transpose();
    else value = a.value().transpose() * b.value().transpose();

    auto an = a.node();
    auto bn = b.node();
    return make_node(std::move(value), {an, bn}, [an, bn, trans_a, trans_b](Node& self) {
        const Mat& g = self.grad;
        if (an->requires_grad) {
            if (!trans_a && !trans_b) an->accumulate(g * bn->value.transpose());
            else if (trans_a && !trans_b) an->accumulate(bn->value * g.transpose());
            else if (!trans_a && trans_b) an->accumulate(g * bn->value);
            else an->accumulate(bn->value.transpose() * g.transpose());
        }
        if (bn->requires_grad) {
            if (!trans_a && !trans_b) bn->accumulate(an->value.transpose() * g);
            else if (trans_a && !trans_b) bn->accumulate(an->value * g);
            else if (!trans_a && trans_b) bn->accumulate(g.transpose() * an->value);
            else bn->accumulate(g.transpose() * an->value.transpose());
        }
    });
}

Var affine_cols(const Var& w, const Var& x, const Var& b) {
    if (w.cols() != x.rows() || b.rows() != w.rows() || b.cols() != 1) {
        throw std::invalid_argument("affine_cols: shape mismatch");
    }
    Mat value = w.value() * x.value();
    value.colwise() += Eigen::VectorXd(b.value().col(0));

    auto wn = w.node();
    auto xn = x.node();
    auto bn = b.node();
    return make_node(std::move(value), {wn, xn, bn}, [wn, xn, bn](Node& self) {
        const Mat& g = self.grad;
        if (wn->requires_grad) wn->accumulate(g * xn->value.transpose());
        if (xn->requires_grad) xn->accumulate(wn->value.transpose() * g);
        if (bn->requires_grad) bn->accumulate(g.rowwise().sum());
    });
}

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    auto an = a.node();
    auto bn = b.node();
    return make_node(an->value + bn->value, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->accumulate(self.grad);
        if (bn->requires_grad) bn->accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    auto an = a.node();
    auto bn = b.node();
    return make_node(an->value - bn->value, {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->accumulate(self.grad);
        if (bn->requires_grad) bn->accumulate(-self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    auto an = a.node();
    auto bn = b.node();
    return make_node(an->value.cwiseProduct(bn->value), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(bn->value));
        if (bn->requires_grad) bn->accumulate(self.grad.cwiseProduct(an->value));
    });
}

Var cmul(const Var& a, const Mat& m) {
    if (a.rows() != m.rows() || a.cols() != m.cols()) {
        throw std::invalid_argument("cmul: shape mismatch");
    }
    auto an = a.node();
    auto mask = std::make_shared<Mat>(m);
    return make_node(an->value.cwiseProduct(m), {an}, [an, mask](Node& self) {
        if (an->requires_grad) an->accumulate(self.grad.cwiseProduct(*mask));
    });
}

Var scale(const Var& x, double s) {
    auto xn = x.node();
    return make_node(xn->value * s, {xn}, [xn, s](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad * s);
    });
}

Var add_scalar(const Var& x, double s) {
    auto xn = x.node();
    return make_node(Mat((xn->value.array() + s).matrix()), {xn}, [xn](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad);
    });
}

Var relu(const Var& x) {
    auto xn = x.node();
    return make_node(xn->value.cwiseMax(0.0), {xn}, [xn](Node& self) {
        if (xn->requires_grad) {
            Mat g = ((xn->value.array() > 0.0).cast<double>() * self.grad.array()).matrix();
            xn->accumulate(g);
        }
    });
}

Var exp(const Var& x) {
    auto xn = x.node();
    Mat value = xn->value.array().exp().matrix();
    auto cached = std::make_shared<Mat>(value);
    return make_node(std::move(value), {xn}, [xn, cached](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad.cwiseProduct(*cached));
    });
}

Var log_clamped(const Var& x, double lo, double hi) {
    auto xn = x.node();
    Mat clamped = xn->value.cwiseMax(lo).cwiseMin(hi);
    Mat value = clamped.array().log().matrix();
    return make_node(std::move(value), {xn}, [xn, lo, hi](Node& self) {
        if (xn->requires_grad) {
            Mat inside = ((xn->value.array() > lo) && (xn->value.array() < hi)).cast<double>().matrix();
            Mat g = ((self.grad.array() / xn->value.array()) * inside.array()).matrix();
            xn->accumulate(g);
        }
    });
}

Var huber(const Var& x) {
    auto xn = x.node();
    Mat value = xn->value.unaryExpr([](double v) {
        const double a = std::abs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
    });
    return make_node(std::move(value), {xn}, [xn](Node& self) {
        if (xn->requires_grad) {
            Mat g = xn->value.cwiseMax(-1.0).cwiseMin(1.0).cwiseProduct(self.grad);
            xn->accumulate(g);
        }
    });
}

Var softmax_cols(const Var& x) {
    Mat y = x.value();
    for (int c = 0; c < y.cols(); ++c) {
        Eigen::VectorXd col = y.col(c);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        y.col(c) = col / col.sum();
    }
    auto xn = x.node();
    auto cached = std::make_shared<Mat>(y);
    return make_node(std::move(y), {xn}, [xn, cached](Node& self) {
        if (!xn->requires_grad) return;
        const Mat& sm = *cached;
        Mat g(sm.rows(), sm.cols());
        for (int c = 0; c < sm.cols(); ++c) {
            const double dot = sm.col(c).dot(self.grad.col(c));
            g.col(c) = (sm.col(c).array() * (self.grad.col(c).array() - dot)).matrix();
        }
        xn->accumulate(g);
    });
}

Var softmax_rows(const Var& x) {
    Mat y = x.value();
    for (int r = 0; r < y.rows(); ++r) {
        Eigen::RowVectorXd row = y.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp();
        y.row(r) = row / row.sum();
    }
    auto xn = x.node();
    auto cached = std::make_shared<Mat>(y);
    return make_node(std::move(y), {xn}, [xn, cached](Node& self) {
        if (!xn->requires_grad) return;
        const Mat& sm = *cached;
        Mat g(sm.rows(), sm.cols());
        for (int r = 0; r < sm.rows(); ++r) {
            const double dot = sm.row(r).dot(self.grad.row(r));
            g.row(r) = (sm.row(r).array() * (self.grad.row(r).array() - dot)).matrix();
        }
        xn->accumulate(g);
    });
}

Var row_sums(const Var& x) {
    auto xn = x.node();
    Mat value = xn->value.rowwise().sum();
    const int cols = x.cols();
    return make_node(std::move(value), {xn}, [xn, cols](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad.replicate(1, cols));
    });
}

Var col_sums(const Var& x) {
    auto xn = x.node();
    Mat value = xn->value.colwise().sum();
    const int rows = x.rows();
    return make_node(std::move(value), {xn}, [xn, rows](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad.replicate(rows, 1));
    });
}

Var sum_all(const Var& x) {
    auto xn = x.node();
    Mat value(1, 1);
    value(0, 0) = xn->value.sum();
    return make_node(std::move(value), {xn}, [xn](Node& self) {
        if (xn->requires_grad) {
            xn->accumulate(Mat::Constant(xn->value.rows(), xn->value.cols(), self.grad(0, 0)));
        }
    });
}

Var weighted_sum(const Var& x, const Mat& w) {
    if (x.rows() != w.rows() || x.cols() != w.cols()) {
        throw std::invalid_argument("weighted_sum: shape mismatch");
    }
    auto xn = x.node();
    auto wk = std::make_shared<Mat>(w);
    Mat value(1, 1);
    value(0, 0) = xn->value.cwiseProduct(w).sum();
    return make_node(std::move(value), {xn}, [xn, wk](Node& self) {
        if (xn->requires_grad) xn->accumulate(self.grad(0, 0) * (*wk));
    });
}

Var gather_cols(const Var& x, const std::vector<int>& idx) {
    auto xn = x.node();
    Mat value(x.rows(), static_cast<int>(idx.size()));
    for (std::size_t t = 0; t < idx.size(); ++t) {
        if (idx[t] < 0 || idx[t] >= x.cols()) {
            throw std::out_of_range("gather_cols: index out of range");
        }
        value.col(static_cast<int>(t)) = xn->value.col(idx[t]);
    }
    auto keep = std::make_shared<std::vector<int>>(idx);
    return make_node(std::move(value), {xn}, [xn, keep](Node& self) {
        if (!xn->requires_grad) return;
        Mat g = Mat::Zero(xn->value.rows(), xn->value.cols());
        for (std::size_t t = 0; t < keep->size(); ++t) {
            g.col((*keep)[t]) += self.grad.col(static_cast<int>(t));
        }
        xn->accumulate(g);
    });
}

Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int rows = xs.front().rows();
    int total = 0;
    for (const auto& v : xs) {
        if (v.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
        total += v.cols();
    }
    Mat value(rows, total);
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<int> offsets;
    int off = 0;
    for (const auto& v : xs) {
        value.middleCols(off, v.cols()) = v.value();
        parents.push_back(v.node());
        offsets.push_back(off);
        off += v.cols();
    }
    auto offs = std::make_shared<std::vector<int>>(offsets);
    auto pars = std::make_shared<std::vector<std::shared_ptr<Node>>>(parents);
    return make_node(std::move(value), parents, [offs, pars](Node& self) {
        for (std::size_t i = 0; i < pars->size(); ++i) {
            auto& p = (*pars)[i];
            if (!p->requires_grad) continue;
            const int o = (*offs)[i];
            p->accumulate(self.grad.middleCols(o, p->value.cols()));
        }
    });
}

Var l2_normalize_cols(const Var& x, double eps) {
    auto xn = x.node();
    Mat value = xn->value;
    Eigen::VectorXd norms(x.cols());
    for (int c = 0; c < x.cols(); ++c) {
        const double n = value.col(c).norm();
        norms(c) = n;
        value.col(c) /= (n + eps);
    }
    auto keep = std::make_shared<Eigen::VectorXd>(norms);
    return make_node(std::move(value), {xn}, [xn, keep, eps](Node& self) {
        if (!xn->requires_grad) return;
        Mat g(xn->value.rows(), xn->value.cols());
        for (int c = 0; c < g.cols(); ++c) {
            const double n = (*keep)(c);
            const double s = n + eps;
            g.col(c) = self.grad.col(c) / s;
            if (n > 1e-300) {
                const double vg = xn->value.col(c).dot(self.grad.col(c));
                g.col(c) -= xn->value.col(c) * (vg / (n * s * s));
            }
        }
        xn->accumulate(g);
    });
}

namespace {

// cols: (in_ch*k*k) x (out_h*out_w); row layout (c*k + ky)*k + kx
Mat im2col(const Mat& x, const Conv2dSpec& sp) {
    const int oh = sp.out_h();
    const int ow = sp.out_w();
    Mat cols = Mat::Zero(sp.in_ch * sp.ksize * sp.ksize, oh * ow);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int col = oy * ow + ox;
            for (int c = 0; c < sp.in_ch; ++c) {
                for (int ky = 0; ky < sp.ksize; ++ky) {
                    const int iy = oy * sp.stride - sp.pad + ky;
                    if (iy < 0 || iy >= sp.in_h) continue;
                    for (int kx = 0; kx < sp.ksize; ++kx) {
                        const int ix = ox * sp.stride - sp.pad + kx;
                        if (ix < 0 || ix >= sp.in_w) continue;
                        cols((c * sp.ksize + ky) * sp.ksize + kx, col) =
                            x(c, iy * sp.in_w + ix);
                    }
                }
            }
        }
    }
    return cols;
}

void col2im_add(const Mat& gcols, const Conv2dSpec& sp, Mat& gx) {
    const int oh = sp.out_h();
    const int ow = sp.out_w();
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const int col = oy * ow + ox;
            for (int c = 0; c < sp.in_ch; ++c) {
                for (int ky = 0; ky < sp.ksize; ++ky) {
                    const int iy = oy * sp.stride - sp.pad + ky;
                    if (iy < 0 || iy >= sp.in_h) continue;
                    for (int kx = 0; kx < sp.ksize; ++kx) {
                        const int ix = ox * sp.stride - sp.pad + kx;
                        if (ix < 0 || ix >= sp.in_w) continue;
                        gx(c, iy * sp.in_w + ix) +=
                            gcols((c * sp.ksize + ky) * sp.ksize + kx, col);
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, const Conv2dSpec& spec) {
    if (x.rows() != spec.in_ch || x.cols() != spec.in_h * spec.in_w) {
        throw std::invalid_argument("conv2d: input shape mismatch");
    }
    if (w.rows() != spec.out_ch || w.cols() != spec.in_ch * spec.ksize * spec.ksize) {
        throw std::invalid_argument("conv2d: weight shape mismatch");
    }
    auto cols = std::make_shared<Mat>(im2col(x.value(), spec));
    Mat value = w.value() * (*cols);
    value.colwise() += Eigen::VectorXd(b.value().col(0));

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return make_node(std::move(value), {xn, wn, bn}, [xn, wn, bn, cols, spec](Node& self) {
        const Mat& g = self.grad;
        if (wn->requires_grad) wn->accumulate(g * cols->transpose());
        if (bn->requires_grad) bn->accumulate(g.rowwise().sum());
        if (xn->requires_grad) {
            Mat gcols = wn->value.transpose() * g;
            Mat gx = Mat::Zero(xn->value.rows(), xn->value.cols());
            col2im_add(gcols, spec, gx);
            xn->accumulate(gx);
        }
    });
}

Var roi_maxpool(const Var& feat, int feat_h, int feat_w,
                const std::vector<Box>& boxes, double stride,
                int out_h, int out_w) {
    if (feat.cols() != feat_h * feat_w) {
        throw std::invalid_argument("roi_maxpool: feature shape mismatch");
    }
    const int ch = feat.rows();
    const int n = static_cast<int>(boxes.size());
    const int cells = ch * out_h * out_w;
    Mat value(cells, n);
    auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(cells) * n);

    const Mat& f = feat.value();
    for (int m = 0; m < n; ++m) {
        const Box& box = boxes[m];
        const double fx1 = box.x1 / stride;
        const double fy1 = box.y1 / stride;
        const double fx2 = box.x2 / stride;
        const double fy2 = box.y2 / stride;
        for (int by = 0; by < out_h; ++by) {
            int y0 = static_cast<int>(std::floor(fy1 + (fy2 - fy1) * by / out_h));
            int y1 = static_cast<int>(std::ceil(fy1 + (fy2 - fy1) * (by + 1) / out_h));
            y0 = std::clamp(y0, 0, feat_h - 1);
            y1 = std::clamp(y1, y0 + 1, feat_h);
            for (int bx = 0; bx < out_w; ++bx) {
                int x0 = static_cast<int>(std::floor(fx1 + (fx2 - fx1) * bx / out_w));
                int x1 = static_cast<int>(std::ceil(fx1 + (fx2 - fx1) * (bx + 1) / out_w));
                x0 = std::clamp(x0, 0, feat_w - 1);
                x1 = std::clamp(x1, x0 + 1, feat_w);
                for (int c = 0; c < ch; ++c) {
                    double best = -std::numeric_limits<double>::infinity();
                    int best_src = y0 * feat_w + x0;
                    for (int y = y0; y < y1; ++y) {
                        for (int x = x0; x < x1; ++x) {
                            const double v = f(c, y * feat_w + x);
                            if (v > best) {
                                best = v;
                                best_src = y * feat_w + x;
                            }
                        }
                    }
                    const int row = (c * out_h + by) * out_w + bx;
                    value(row, m) = best;
                    (*argmax)[static_cast<std::size_t>(row) * n + m] = best_src;
                }
            }
        }
    }

    auto fn = feat.node();
    return make_node(std::move(value), {fn}, [fn, argmax, cells, n, out_h, out_w](Node& self) {
        if (!fn->requires_grad) return;
        const int oh_ow = out_h * out_w;
        Mat g = Mat::Zero(fn->value.rows(), fn->value.cols());
        for (int row = 0; row < cells; ++row) {
            const int c = row / oh_ow;
            for (int m = 0; m < n; ++m) {
                g(c, (*argmax)[static_cast<std::size_t>(row) * n + m]) += self.grad(row, m);
            }
        }
        fn->accumulate(g);
    });
}

}  // namespace wsod::ad
