#include "wsod/losses.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wsod {

namespace {

constexpr double kLogClamp = 1e-8;

ad::Var zero_scalar() { return ad::Var::constant(ad::Mat::Zero(1, 1)); }

}  // namespace

ad::Var mil_loss(const std::vector<ad::Var>& phi_per_image,
                 const std::vector<std::vector<int>>& labels_per_image) {
    if (phi_per_image.size() != labels_per_image.size() || phi_per_image.empty()) {
        throw std::invalid_argument("mil_loss: batch size mismatch");
    }
    const int n_images = static_cast<int>(phi_per_image.size());
    ad::Var acc = zero_scalar();
    for (int n = 0; n < n_images; ++n) {
        const auto& labels = labels_per_image[n];
        const auto& phi = phi_per_image[n];
        if (static_cast<int>(labels.size()) != phi.rows()) {
            throw std::invalid_argument("mil_loss: label length mismatch");
        }
        ad::Mat y(phi.rows(), 1);
        ad::Mat not_y(phi.rows(), 1);
        for (int c = 0; c < phi.rows(); ++c) {
            y(c, 0) = labels[c] ? 1.0 : 0.0;
            not_y(c, 0) = labels[c] ? 0.0 : 1.0;
        }
        ad::Var log_phi = ad::log_clamped(phi, kLogClamp, 1.0 - kLogClamp);
        ad::Var one_minus = ad::add_scalar(ad::scale(phi, -1.0), 1.0);
        ad::Var log_not = ad::log_clamped(one_minus, kLogClamp, 1.0 - kLogClamp);
        acc = ad::add(acc, ad::add(ad::weighted_sum(log_phi, y),
                                   ad::weighted_sum(log_not, not_y)));
    }
    return ad::scale(acc, -1.0 / n_images);
}

ad::Var refinement_cls_loss(
    const std::vector<std::vector<ad::Var>>& scores_per_image,
    const std::vector<std::vector<StageLabels>>& labels_per_image) {
    if (scores_per_image.size() != labels_per_image.size() || scores_per_image.empty()) {
        throw std::invalid_argument("refinement_cls_loss: batch size mismatch");
    }
    const int n_images = static_cast<int>(scores_per_image.size());
    const int stages = static_cast<int>(scores_per_image.front().size());
    ad::Var acc = zero_scalar();
    for (int n = 0; n < n_images; ++n) {
        for (int k = 0; k < stages; ++k) {
            const ad::Var& scores = scores_per_image[n][k];
            const StageLabels& labels = labels_per_image[n][k];
            const int m_count = static_cast<int>(labels.assigned.size());
            if (scores.cols() != m_count) {
                throw std::invalid_argument("refinement_cls_loss: proposal count mismatch");
            }
            ad::Mat mask = ad::Mat::Zero(scores.rows(), m_count);
            for (int m = 0; m < m_count; ++m) {
                mask(labels.assigned[m], m) = labels.weights[m] / m_count;
            }
            acc = ad::add(acc, ad::weighted_sum(
                                   ad::log_clamped(scores, kLogClamp, 1.0), mask));
        }
    }
    return ad::scale(acc, -1.0 / (static_cast<double>(n_images) * stages));
}

RegressionMatches regression_matches(const StageLabels& labels,
                                     const std::vector<Box>& proposals,
                                     bool include_discovered) {
    RegressionMatches out;
    std::vector<std::array<double, 4>> targets;
    for (int m = 0; m < static_cast<int>(proposals.size()); ++m) {
        if (!labels.is_foreground(m)) continue;
        if (labels.claim_source[m] == 1 && !include_discovered) continue;
        const BoxDeltas d = encode_deltas(proposals[m], labels.claim_box[m]);
        out.proposal_indices.push_back(m);
        out.weights.push_back(labels.weights[m]);
        targets.push_back({d.dx, d.dy, d.dw, d.dh});
    }
    out.target_deltas.resize(4, static_cast<int>(targets.size()));
    for (std::size_t t = 0; t < targets.size(); ++t) {
        for (int i = 0; i < 4; ++i) out.target_deltas(i, static_cast<int>(t)) = targets[t][i];
    }
    return out;
}

ad::Var regression_loss(
    const std::vector<ad::Var>& deltas_per_image,
    const std::vector<std::vector<RegressionMatches>>& matches_per_image) {
    if (deltas_per_image.size() != matches_per_image.size() || deltas_per_image.empty()) {
        throw std::invalid_argument("regression_loss: batch size mismatch");
    }
    const int n_images = static_cast<int>(deltas_per_image.size());
    const int stages = static_cast<int>(matches_per_image.front().size());
    ad::Var acc = zero_scalar();
    for (int n = 0; n < n_images; ++n) {
        for (int k = 0; k < stages; ++k) {
            const RegressionMatches& matches = matches_per_image[n][k];
            const int count = static_cast<int>(matches.proposal_indices.size());
            if (count == 0) continue;
            ad::Var pred = ad::gather_cols(deltas_per_image[n], matches.proposal_indices);
            ad::Var resid = ad::huber(ad::sub(pred, ad::Var::constant(matches.target_deltas)));
            ad::Mat w(4, count);
            for (int t = 0; t < count; ++t) {
                w.col(t).setConstant(matches.weights[t] / count);
            }
            acc = ad::add(acc, ad::weighted_sum(resid, w));
        }
    }
    return ad::scale(acc, 1.0 / (static_cast<double>(n_images) * stages));
}

ad::Var wscl_loss(const ad::Var& embeddings, const std::vector<int>& pseudo_labels,
                  const std::vector<double>& omegas, double epsilon) {
    const int n = embeddings.cols();
    if (static_cast<int>(pseudo_labels.size()) != n ||
        static_cast<int>(omegas.size()) != n) {
        throw std::invalid_argument("wscl_loss: entry count mismatch");
    }
    if (n < 2) return zero_scalar();

    std::vector<int> class_count;
    for (int i = 0; i < n; ++i) {
        const int t = pseudo_labels[i];
        if (t >= static_cast<int>(class_count.size())) class_count.resize(t + 1, 0);
        class_count[t] += 1;
    }

    ad::Var sims = ad::scale(ad::matmul(embeddings, embeddings, true, false), 1.0 / epsilon);

    // detached row max over off-diagonal entries stabilizes the log-sum-exp
    ad::Mat sim_values = sims.value();
    ad::Mat row_max(n, 1);
    for (int i = 0; i < n; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (j != i) m = std::max(m, sim_values(i, j));
        }
        row_max(i, 0) = m;
    }
    ad::Mat offdiag = ad::Mat::Ones(n, n);
    ad::Mat same_class = ad::Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        offdiag(i, i) = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j != i && pseudo_labels[j] == pseudo_labels[i]) same_class(i, j) = 1.0;
        }
    }

    ad::Var shifted = ad::add(sims, ad::Var::constant((-row_max).replicate(1, n)));
    ad::Var denom = ad::row_sums(ad::cmul(ad::exp(shifted), offdiag));
    ad::Var log_denom = ad::add(ad::log_clamped(denom, 1e-300, 1e300),
                                ad::Var::constant(row_max));
    ad::Var same_sum = ad::row_sums(ad::cmul(sims, same_class));

    // L_i = log_denom_i - same_sum_i / (N_t - 1), skipped for singleton classes
    ad::Mat a(n, 1), b(n, 1);
    for (int i = 0; i < n; ++i) {
        const int nt = class_count[pseudo_labels[i]];
        if (nt < 2) {
            a(i, 0) = 0.0;
            b(i, 0) = 0.0;
        } else {
            a(i, 0) = omegas[i] / n;
            b(i, 0) = omegas[i] / (n * static_cast<double>(nt - 1));
        }
    }
    return ad::sub(ad::weighted_sum(log_denom, a), ad::weighted_sum(same_sum, b));
}

TotalLoss total_loss(const ad::Var& mil, const ad::Var& cls, const ad::Var& reg,
                     const ad::Var& wscl, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("total_loss: negative lambda");
    TotalLoss out;
    out.node = ad::add(ad::add(mil, cls), ad::add(reg, ad::scale(wscl, lambda)));
    out.report.mil = mil.value()(0, 0);
    out.report.cls = cls.value()(0, 0);
    out.report.reg = reg.value()(0, 0);
    out.report.wscl = wscl.value()(0, 0);
    out.report.lambda = lambda;
    out.report.total = out.node.value()(0, 0);
    return out;
}

}  // namespace wsod
