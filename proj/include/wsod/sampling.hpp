#pragma once

/// Cross-image contrastive bank construction: argmax selection over the
/// supervising score matrices, IoU sampling around the top proposal,
/// feature-level augmentations (random masking, gaussian noise), and
/// per-sample difficulty weights from normalized MIL scores.

#include <map>
#include <string>
#include <vector>

#include "wsod/autodiff.hpp"
#include "wsod/geometry.hpp"
#include "wsod/model.hpp"
#include "wsod/rng.hpp"

namespace wsod {

enum class Augmentation { kIou, kMask, kNoise, kDiscovered };

struct BankEntry {
    Eigen::VectorXd embedding;  // unit-norm value snapshot
    int pseudo_label = 0;       // class bucket
    double weight = 0.0;        // difficulty weight
    std::string image_id;
    int image_index = -1;  // batch-local index
    int proposal_index = -1;
    int stage = 0;  // 0 for sampled entries, discovery stage otherwise
    Augmentation augmentation = Augmentation::kIou;
    /// Random spatial map (roi*roi cells) recorded at draw time so the
    /// loss graph can rebuild the identical augmented view. Binary for
    /// masking, gaussian for noise, empty otherwise.
    std::vector<double> spatial_map;
};

struct ContrastiveBank {
    std::vector<BankEntry> entries;
    /// |S| before discovery appends; entries past this mark form S^U \ S.
    int pre_discovery_size = 0;

    int size() const { return static_cast<int>(entries.size()); }
    std::vector<int> class_indices(int category) const;
};

enum class OmegaDenominator { kSampled, kAll };

/// Index of the top previous-stage score for `category` (row scan);
/// ties keep the lowest index. Throws when the row is empty.
int select_argmax(const ad::Mat& prev_scores, int category);

/// {m : IoU(r_m, r_mbar) > tau_iou}; always contains mbar itself.
std::vector<int> iou_sample(const std::vector<Box>& proposals, int mbar, double tau_iou);

struct SampledClass {
    int image_index = -1;
    int category = -1;
    std::vector<int> proposal_indices;  // union over supervision stages, sorted
    std::vector<double> omegas;         // aligned with proposal_indices
    double omega_denominator = 0.0;     // the normalizer used
};

/// Union of iou_sample over every supervision source (the MIL proposal
/// score matrix first, then each refinement stage except the last), with
/// difficulty weights from the MIL scores of the sampled proposals.
SampledClass sample_class(const std::vector<ad::Mat>& supervision_scores,
                          const ad::Mat& mil_x, const std::vector<Box>& proposals,
                          int image_index, int category, double tau_iou,
                          OmegaDenominator denom);

/// Fresh random maps for the two augmented views.
std::vector<double> draw_mask_map(int cells, double tau_drop, Rng& rng);
std::vector<double> draw_noise_map(int cells, Rng& rng);

/// Embed bank entries through the similarity head, batched per image.
/// `f_clean_per_image[i]` is the clean RoI map Var of batch image i.
/// Column j of the result aligns with entries[j].
ad::Var embed_entries(const Model& model,
                      const std::vector<const ad::Var*>& f_clean_per_image,
                      const std::vector<BankEntry>& entries);

struct ImageBankInput {
    int image_index = -1;
    std::string image_id;
    const ad::Var* f_clean = nullptr;      // (D*roi*roi) x M
    ad::Mat mil_x;                         // C x M score values
    std::vector<ad::Mat> supervision;      // [0]=mil x, [k]=stage-k scores
    const std::vector<Box>* proposals = nullptr;
    std::vector<int> labels;               // image-level labels Y^n
};

struct BankBuildResult {
    ContrastiveBank bank;
    /// Per (image_index, category) difficulty normalizer, reused when
    /// discovered entries get weights by the same formula.
    std::map<std::pair<int, int>, double> omega_denominators;
};

/// Builds S = union over images and present classes of the three augmented
/// views of every sampled proposal. Three entries per source proposal, in
/// (iou, mask, noise) order, sharing the source's difficulty weight.
BankBuildResult build_bank(const Model& model, const std::vector<ImageBankInput>& batch,
                           double tau_iou, double tau_drop, OmegaDenominator denom,
                           Rng& rng);

}  // namespace wsod
