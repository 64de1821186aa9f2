#include "wsod/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wsod {

namespace {

ad::Mat he_normal(Rng& rng, int rows, int cols, int fan_in) {
    const double std = std::sqrt(2.0 / fan_in);
    ad::Mat m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, std);
    return m;
}

ad::Mat small_normal(Rng& rng, int rows, int cols, double std = 0.01) {
    ad::Mat m(rows, cols);
    for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) m(r, c) = rng.normal(0.0, std);
    return m;
}

ad::Var zeros_leaf(int rows) { return ad::Var::leaf(ad::Mat::Zero(rows, 1)); }

}  // namespace

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.conv_channels.size() != 4) {
        throw std::invalid_argument("ModelConfig: expected 4 conv layers");
    }
    Rng rng(seed);
    Model m;
    m.cfg_ = cfg;

    int in_ch = 3;
    for (int layer = 0; layer < 4; ++layer) {
        const int out_ch = cfg.conv_channels[layer];
        m.conv_w.push_back(ad::Var::leaf(he_normal(rng, out_ch, in_ch * 9, in_ch * 9)));
        m.conv_b.push_back(zeros_leaf(out_ch));
        in_ch = out_ch;
    }

    const int roi_dim = cfg.roi_input_dim();
    m.eta_w1 = ad::Var::leaf(he_normal(rng, cfg.feat_dim, roi_dim, roi_dim));
    m.eta_b1 = zeros_leaf(cfg.feat_dim);
    m.eta_w2 = ad::Var::leaf(he_normal(rng, cfg.feat_dim, cfg.feat_dim, cfg.feat_dim));
    m.eta_b2 = zeros_leaf(cfg.feat_dim);

    m.mil_cls_w = ad::Var::leaf(small_normal(rng, cfg.num_classes, cfg.feat_dim));
    m.mil_cls_b = zeros_leaf(cfg.num_classes);
    m.mil_det_w = ad::Var::leaf(small_normal(rng, cfg.num_classes, cfg.feat_dim));
    m.mil_det_b = zeros_leaf(cfg.num_classes);

    for (int k = 0; k < cfg.stages; ++k) {
        m.ref_w.push_back(ad::Var::leaf(small_normal(rng, cfg.num_classes + 1, cfg.feat_dim)));
        m.ref_b.push_back(zeros_leaf(cfg.num_classes + 1));
    }

    m.reg_w = ad::Var::leaf(small_normal(rng, 4, cfg.feat_dim));
    m.reg_b = zeros_leaf(4);

    m.sim_w1 = ad::Var::leaf(he_normal(rng, cfg.sim_hidden, cfg.feat_dim, cfg.feat_dim));
    m.sim_b1 = zeros_leaf(cfg.sim_hidden);
    m.sim_w2 = ad::Var::leaf(he_normal(rng, cfg.embed_dim, cfg.sim_hidden, cfg.sim_hidden));
    m.sim_b2 = zeros_leaf(cfg.embed_dim);
    return m;
}

std::vector<std::pair<std::string, ad::Var>> Model::parameters() const {
    std::vector<std::pair<std::string, ad::Var>> out;
    for (int i = 0; i < 4; ++i) {
        const std::string base = "backbone.conv" + std::to_string(i + 1);
        out.emplace_back(base + ".weight", conv_w[i]);
        out.emplace_back(base + ".bias", conv_b[i]);
    }
    out.emplace_back("eta.fc1.weight", eta_w1);
    out.emplace_back("eta.fc1.bias", eta_b1);
    out.emplace_back("eta.fc2.weight", eta_w2);
    out.emplace_back("eta.fc2.bias", eta_b2);
    out.emplace_back("mil.cls.weight", mil_cls_w);
    out.emplace_back("mil.cls.bias", mil_cls_b);
    out.emplace_back("mil.det.weight", mil_det_w);
    out.emplace_back("mil.det.bias", mil_det_b);
    for (std::size_t k = 0; k < ref_w.size(); ++k) {
        const std::string base = "refine." + std::to_string(k + 1);
        out.emplace_back(base + ".weight", ref_w[k]);
        out.emplace_back(base + ".bias", ref_b[k]);
    }
    out.emplace_back("reg.fc.weight", reg_w);
    out.emplace_back("reg.fc.bias", reg_b);
    out.emplace_back("sim.fc1.weight", sim_w1);
    out.emplace_back("sim.fc1.bias", sim_b1);
    out.emplace_back("sim.fc2.weight", sim_w2);
    out.emplace_back("sim.fc2.bias", sim_b2);
    return out;
}

ad::Var Model::backbone(const std::vector<double>& raster, int width, int height) const {
    if (raster.size() != static_cast<std::size_t>(width) * height * 3) {
        throw std::invalid_argument("backbone: raster size mismatch");
    }
    ad::Mat input(3, width * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * width + x) * 3;
            for (int c = 0; c < 3; ++c) {
                input(c, y * width + x) = raster[base + c] - 0.5;
            }
        }
    }
    ad::Var h = ad::Var::constant(std::move(input));
    const int strides[4] = {2, 2, 2, 1};
    int in_ch = 3, in_h = height, in_w = width;
    for (int layer = 0; layer < 4; ++layer) {
        ad::Conv2dSpec spec{in_ch, in_h, in_w, cfg_.conv_channels[layer], 3, strides[layer], 1};
        h = ad::relu(ad::conv2d(h, conv_w[layer], conv_b[layer], spec));
        in_ch = spec.out_ch;
        in_h = spec.out_h();
        in_w = spec.out_w();
    }
    return h;
}

ad::Var Model::roi_pool(const ad::Var& featmap, int width, int height,
                        const std::vector<Box>& boxes) const {
    for (const auto& b : boxes) {
        if (!b.valid() || b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > width || b.y2 > height) {
            throw std::invalid_argument("roi_pool: box outside raster bounds");
        }
    }
    const int fh = height / ModelConfig::kStride;
    const int fw = width / ModelConfig::kStride;
    return ad::roi_maxpool(featmap, fh, fw, boxes, ModelConfig::kStride,
                           cfg_.roi_size, cfg_.roi_size);
}

ad::Var Model::eta(const ad::Var& f) const {
    ad::Var h = ad::relu(ad::affine_cols(eta_w1, f, eta_b1));
    return ad::relu(ad::affine_cols(eta_w2, h, eta_b2));
}

MilScores Model::mil_head(const ad::Var& v_tilde) const {
    MilScores out;
    out.x_cls = ad::softmax_cols(ad::affine_cols(mil_cls_w, v_tilde, mil_cls_b));
    out.x_det = ad::softmax_rows(ad::affine_cols(mil_det_w, v_tilde, mil_det_b));
    out.x = ad::mul(out.x_cls, out.x_det);
    out.phi = ad::row_sums(out.x);
    return out;
}

ad::Var Model::refinement_head(const ad::Var& v_tilde, int stage) const {
    if (stage < 1 || stage > cfg_.stages) {
        throw std::invalid_argument("refinement_head: stage out of range");
    }
    return ad::softmax_cols(ad::affine_cols(ref_w[stage - 1], v_tilde, ref_b[stage - 1]));
}

ad::Var Model::regression_head(const ad::Var& v_tilde) const {
    return ad::affine_cols(reg_w, v_tilde, reg_b);
}

ad::Var Model::similarity_head(const ad::Var& v) const {
    ad::Var h = ad::relu(ad::affine_cols(sim_w1, v, sim_b1));
    return ad::l2_normalize_cols(ad::affine_cols(sim_w2, h, sim_b2), 1e-12);
}

DropblockMask draw_dropblock_mask(const ModelConfig& cfg, int num_proposals, Rng& rng) {
    const int roi = cfg.roi_size;
    const int bs = cfg.dropblock_size;
    if (bs > roi) throw std::invalid_argument("dropblock: block larger than map");
    const int d = cfg.conv_channels.back();
    const int cells = roi * roi;
    const int seed_span = roi - bs + 1;
    const int n_seeds = seed_span * seed_span;
    const double gamma =
        std::min(1.0, cfg.dropblock_prob * cells / (static_cast<double>(bs) * bs * n_seeds));

    DropblockMask out;
    out.num_proposals = num_proposals;
    out.expanded = ad::Mat::Ones(static_cast<long>(d) * cells, num_proposals);
    for (int m = 0; m < num_proposals; ++m) {
        std::vector<char> dropped(cells, 0);
        for (int sy = 0; sy < seed_span; ++sy) {
            for (int sx = 0; sx < seed_span; ++sx) {
                if (rng.uniform() >= gamma) continue;
                for (int dy = 0; dy < bs; ++dy)
                    for (int dx = 0; dx < bs; ++dx) dropped[(sy + dy) * roi + (sx + dx)] = 1;
            }
        }
        int kept = 0;
        for (char v : dropped) kept += (v == 0);
        const double scale = kept > 0 ? static_cast<double>(cells) / kept : 0.0;
        for (int cell = 0; cell < cells; ++cell) {
            const double value = dropped[cell] ? 0.0 : scale;
            for (int c = 0; c < d; ++c) out.expanded(c * cells + cell, m) = value;
        }
    }
    return out;
}

DropblockMask identity_dropblock_mask(const ModelConfig& cfg, int num_proposals) {
    DropblockMask out;
    out.num_proposals = num_proposals;
    out.expanded = ad::Mat::Ones(static_cast<long>(cfg.roi_input_dim()), num_proposals);
    return out;
}

ad::Var apply_dropblock(const ad::Var& f, const DropblockMask& mask) {
    return ad::cmul(f, mask.expanded);
}

double dropblock_expected_drop_fraction(int roi, int block_size, double drop_prob) {
    const int seed_span = roi - block_size + 1;
    const int n_seeds = seed_span * seed_span;
    const int cells = roi * roi;
    const double gamma = std::min(
        1.0, drop_prob * cells / (static_cast<double>(block_size) * block_size * n_seeds));
    double acc = 0.0;
    for (int y = 0; y < roi; ++y) {
        const int ylo = std::max(0, y - block_size + 1);
        const int yhi = std::min(y, roi - block_size);
        const int ny = std::max(0, yhi - ylo + 1);
        for (int x = 0; x < roi; ++x) {
            const int xlo = std::max(0, x - block_size + 1);
            const int xhi = std::min(x, roi - block_size);
            const int nx = std::max(0, xhi - xlo + 1);
            acc += 1.0 - std::pow(1.0 - gamma, static_cast<double>(ny) * nx);
        }
    }
    return acc / cells;
}

}  // namespace wsod
