#pragma once

/// The neural pieces: a small stride-8 convolutional backbone, RoI max
/// pooling, the shared two-layer FC extractor, block dropout on RoI maps,
/// the two-stream MIL head, K per-stage instance classifiers with a shared
/// class-agnostic box regressor, and the embedding (similarity) head.
///
/// Everything runs in double precision through the autodiff graph; the
/// MIL, refinement and regression heads consume the block-dropped vectors
/// while the similarity head consumes the clean ones.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wsod/autodiff.hpp"
#include "wsod/dataset.hpp"
#include "wsod/rng.hpp"

namespace wsod {

struct ModelConfig {
    std::vector<int> conv_channels{16, 32, 64, 64};  // final entry is D
    int roi_size = 7;                                // pooled H = W
    int feat_dim = 256;                              // D'
    int sim_hidden = 256;
    int embed_dim = 128;
    int num_classes = 3;  // C (refinement heads add a background row)
    int stages = 3;       // K
    int dropblock_size = 3;
    double dropblock_prob = 0.3;

    static constexpr int kStride = 8;  // conv strides 2,2,2,1
    int roi_input_dim() const { return conv_channels.back() * roi_size * roi_size; }
};

struct MilScores {
    ad::Var x_cls;  // C x M, each column sums to 1
    ad::Var x_det;  // C x M, each row sums to 1
    ad::Var x;      // elementwise product
    ad::Var phi;    // C x 1 image scores in [0,1]
};

/// Per-proposal block-dropout masks for one RoI map batch, expanded across
/// channels and carrying the kept-cell rescale (zero when nothing survives).
struct DropblockMask {
    ad::Mat expanded;  // (D*roi*roi) x M
    int num_proposals = 0;
};

class Model {
public:
    Model() = default;

    static Model init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    /// Named parameter leaves in a fixed, checkpoint-stable order.
    std::vector<std::pair<std::string, ad::Var>> parameters() const;

    /// Backbone feature map for one image: (D x fh*fw), fh = h/8, fw = w/8.
    ad::Var backbone(const std::vector<double>& raster, int width, int height) const;

    /// RoI max pooling of `boxes` out of a backbone map.
    /// Throws std::invalid_argument when a box exceeds the raster bounds.
    ad::Var roi_pool(const ad::Var& featmap, int width, int height,
                     const std::vector<Box>& boxes) const;

    /// The shared two-FC extractor: (D*roi*roi x M) -> (D' x M).
    ad::Var eta(const ad::Var& f) const;

    MilScores mil_head(const ad::Var& v_tilde) const;

    /// stage k in [1, K]; (C+1 x M), columns softmax-normalized.
    ad::Var refinement_head(const ad::Var& v_tilde, int stage) const;

    /// Class-agnostic box deltas, (4 x M).
    ad::Var regression_head(const ad::Var& v_tilde) const;

    /// Embeddings with unit-norm columns, (embed_dim x M).
    ad::Var similarity_head(const ad::Var& v) const;

    // parameter leaves (public: the optimizer walks them via parameters())
    std::vector<ad::Var> conv_w, conv_b;
    ad::Var eta_w1, eta_b1, eta_w2, eta_b2;
    ad::Var mil_cls_w, mil_cls_b, mil_det_w, mil_det_b;
    std::vector<ad::Var> ref_w, ref_b;
    ad::Var reg_w, reg_b;
    ad::Var sim_w1, sim_b1, sim_w2, sim_b2;

private:
    ModelConfig cfg_;
};

/// Draw per-proposal block masks. Seeds on a (roi-bs+1)^2 grid fire with
/// probability gamma = min(1, p*roi^2 / (bs^2 * n_seeds)); the union of
/// fired blocks is zeroed and survivors are rescaled by total/kept.
DropblockMask draw_dropblock_mask(const ModelConfig& cfg, int num_proposals, Rng& rng);

/// Identity mask (eval mode / drop probability zero).
DropblockMask identity_dropblock_mask(const ModelConfig& cfg, int num_proposals);

ad::Var apply_dropblock(const ad::Var& f, const DropblockMask& mask);

/// Closed-form expected fraction of zeroed cells for the mask scheme above.
double dropblock_expected_drop_fraction(int roi, int block_size, double drop_prob);

}  // namespace wsod
