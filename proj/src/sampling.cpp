#include "wsod/sampling.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace wsod {

std::vector<int> ContrastiveBank::class_indices(int category) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
        if (entries[i].pseudo_label == category) out.push_back(i);
    }
    return out;
}

int select_argmax(const ad::Mat& prev_scores, int category) {
    if (category < 0 || category >= prev_scores.rows() || prev_scores.cols() == 0) {
        throw std::invalid_argument("select_argmax: bad category or empty scores");
    }
    int best = 0;
    double best_score = prev_scores(category, 0);
    for (int m = 1; m < prev_scores.cols(); ++m) {
        if (prev_scores(category, m) > best_score) {
            best_score = prev_scores(category, m);
            best = m;
        }
    }
    return best;
}

std::vector<int> iou_sample(const std::vector<Box>& proposals, int mbar, double tau_iou) {
    std::vector<int> out;
    for (int m = 0; m < static_cast<int>(proposals.size()); ++m) {
        if (iou(proposals[m], proposals[mbar]) > tau_iou) out.push_back(m);
    }
    return out;
}

SampledClass sample_class(const std::vector<ad::Mat>& supervision_scores,
                          const ad::Mat& mil_x, const std::vector<Box>& proposals,
                          int image_index, int category, double tau_iou,
                          OmegaDenominator denom) {
    SampledClass out;
    out.image_index = image_index;
    out.category = category;

    std::set<int> collected;
    for (const auto& scores : supervision_scores) {
        const int mbar = select_argmax(scores, category);
        for (int m : iou_sample(proposals, mbar, tau_iou)) collected.insert(m);
    }
    out.proposal_indices.assign(collected.begin(), collected.end());

    double denominator = 0.0;
    if (denom == OmegaDenominator::kSampled) {
        for (int m : out.proposal_indices) denominator += mil_x(category, m);
    } else {
        denominator = mil_x.row(category).sum();
    }
    out.omega_denominator = denominator;
    for (int m : out.proposal_indices) {
        out.omegas.push_back(denominator > 0.0 ? mil_x(category, m) / denominator : 0.0);
    }
    return out;
}

std::vector<double> draw_mask_map(int cells, double tau_drop, Rng& rng) {
    std::vector<double> map(cells);
    for (double& v : map) v = rng.uniform() < tau_drop ? 0.0 : 1.0;
    return map;
}

std::vector<double> draw_noise_map(int cells, Rng& rng) {
    std::vector<double> map(cells);
    for (double& v : map) v = rng.normal();
    return map;
}

namespace {

// multiplier applied to the clean RoI column, broadcast across channels
void fill_multiplier(const ModelConfig& cfg, const BankEntry& e, ad::Mat& dst, int col) {
    const int cells = cfg.roi_size * cfg.roi_size;
    const int d = cfg.conv_channels.back();
    switch (e.augmentation) {
        case Augmentation::kIou:
        case Augmentation::kDiscovered:
            dst.col(col).setOnes();
            return;
        case Augmentation::kMask:
            for (int cell = 0; cell < cells; ++cell)
                for (int c = 0; c < d; ++c) dst(c * cells + cell, col) = e.spatial_map[cell];
            return;
        case Augmentation::kNoise:
            for (int cell = 0; cell < cells; ++cell)
                for (int c = 0; c < d; ++c)
                    dst(c * cells + cell, col) = 1.0 + e.spatial_map[cell];
            return;
    }
}

}  // namespace

ad::Var embed_entries(const Model& model,
                      const std::vector<const ad::Var*>& f_clean_per_image,
                      const std::vector<BankEntry>& entries) {
    if (entries.empty()) {
        throw std::invalid_argument("embed_entries: empty entry list");
    }
    const auto& cfg = model.config();
    const int n = static_cast<int>(entries.size());

    // batch per image, then restore bank order with a gather
    std::vector<ad::Var> blocks;
    std::vector<int> positions(n, -1);
    int emitted = 0;
    for (int img = 0; img < static_cast<int>(f_clean_per_image.size()); ++img) {
        std::vector<int> local;  // entry indices for this image, bank order
        for (int i = 0; i < n; ++i) {
            if (entries[i].image_index == img) local.push_back(i);
        }
        if (local.empty()) continue;
        std::vector<int> cols;
        ad::Mat mult(cfg.roi_input_dim(), static_cast<int>(local.size()));
        for (std::size_t t = 0; t < local.size(); ++t) {
            cols.push_back(entries[local[t]].proposal_index);
            fill_multiplier(cfg, entries[local[t]], mult, static_cast<int>(t));
        }
        ad::Var fcols = ad::gather_cols(*f_clean_per_image[img], cols);
        ad::Var z = model.similarity_head(model.eta(ad::cmul(fcols, mult)));
        blocks.push_back(z);
        for (std::size_t t = 0; t < local.size(); ++t) {
            positions[local[t]] = emitted + static_cast<int>(t);
        }
        emitted += static_cast<int>(local.size());
    }
    if (emitted != n) {
        throw std::invalid_argument("embed_entries: entry references an image outside the batch");
    }
    ad::Var merged = blocks.size() == 1 ? blocks[0] : ad::concat_cols(blocks);
    bool ordered = true;
    for (int i = 0; i < n; ++i) ordered = ordered && positions[i] == i;
    return ordered ? merged : ad::gather_cols(merged, positions);
}

BankBuildResult build_bank(const Model& model, const std::vector<ImageBankInput>& batch,
                           double tau_iou, double tau_drop, OmegaDenominator denom,
                           Rng& rng) {
    const auto& cfg = model.config();
    const int cells = cfg.roi_size * cfg.roi_size;

    BankBuildResult out;
    std::vector<const ad::Var*> f_per_image(batch.size());
    for (const auto& input : batch) f_per_image[input.image_index] = input.f_clean;

    for (const auto& input : batch) {
        for (int c = 0; c < static_cast<int>(input.labels.size()); ++c) {
            if (input.labels[c] != 1) continue;
            const SampledClass sampled =
                sample_class(input.supervision, input.mil_x, *input.proposals,
                             input.image_index, c, tau_iou, denom);
            out.omega_denominators[{input.image_index, c}] = sampled.omega_denominator;
            for (std::size_t t = 0; t < sampled.proposal_indices.size(); ++t) {
                for (Augmentation mode :
                     {Augmentation::kIou, Augmentation::kMask, Augmentation::kNoise}) {
                    BankEntry e;
                    e.pseudo_label = c;
                    e.weight = sampled.omegas[t];
                    e.image_id = input.image_id;
                    e.image_index = input.image_index;
                    e.proposal_index = sampled.proposal_indices[t];
                    e.stage = 0;
                    e.augmentation = mode;
                    if (mode == Augmentation::kMask) {
                        e.spatial_map = draw_mask_map(cells, tau_drop, rng);
                    } else if (mode == Augmentation::kNoise) {
                        e.spatial_map = draw_noise_map(cells, rng);
                    }
                    out.bank.entries.push_back(std::move(e));
                }
            }
        }
    }

    if (!out.bank.entries.empty()) {
        const ad::Var z = embed_entries(model, f_per_image, out.bank.entries);
        for (int i = 0; i < out.bank.size(); ++i) {
            out.bank.entries[i].embedding = z.value().col(i);
        }
    }
    out.bank.pre_discovery_size = out.bank.size();
    return out;
}

}  // namespace wsod
