#include "wsod/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "wsod/png_io.hpp"
#include "wsod/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wsod {

namespace {

struct Palette {
    double r, g, b;
};

// one base color per category index; texture kind cycles over shapes
constexpr Palette kPalette[8] = {
    {0.78, 0.20, 0.18},  // red
    {0.16, 0.66, 0.28},  // green
    {0.20, 0.32, 0.82},  // blue
    {0.85, 0.55, 0.15},  // orange
    {0.62, 0.22, 0.68},  // purple
    {0.18, 0.66, 0.66},  // teal
    {0.75, 0.68, 0.20},  // olive
    {0.70, 0.35, 0.50},  // rose
};

struct Placement {
    int category = 0;
    double cx = 0.0, cy = 0.0, size = 0.0;  // size = full extent
    Box bbox() const { return {cx - size / 2, cy - size / 2, cx + size / 2, cy + size / 2}; }
};

bool overlaps_existing(const Placement& p, const std::vector<Placement>& placed,
                       double max_iou) {
    for (const auto& q : placed) {
        if (iou(p.bbox(), q.bbox()) >= max_iou) return true;
    }
    return false;
}

bool in_canvas(const Placement& p, int canvas) {
    const Box b = p.bbox();
    return b.x1 >= 1.0 && b.y1 >= 1.0 && b.x2 <= canvas - 1.0 && b.y2 <= canvas - 1.0;
}

// random placement with rejection on overlap; shrinks after repeated failure
bool place_random(Rng& rng, int category, int canvas, double min_size, double max_size,
                  std::vector<Placement>& placed) {
    double lo = min_size, hi = max_size;
    for (int attempt = 0; attempt < 60; ++attempt) {
        Placement p;
        p.category = category;
        p.size = rng.uniform(lo, hi);
        p.cx = rng.uniform(p.size / 2 + 1.0, canvas - p.size / 2 - 1.0);
        p.cy = rng.uniform(p.size / 2 + 1.0, canvas - p.size / 2 - 1.0);
        if (!overlaps_existing(p, placed, 0.30)) {
            placed.push_back(p);
            return true;
        }
        if (attempt % 15 == 14) hi = std::max(lo, hi * 0.8);
    }
    return false;
}

// place next to `anchor` for the grouped-instances mode
bool place_adjacent(Rng& rng, const Placement& anchor, int category, int canvas,
                    double min_size, double max_size, std::vector<Placement>& placed) {
    for (int attempt = 0; attempt < 60; ++attempt) {
        Placement p;
        p.category = category;
        p.size = std::clamp(anchor.size * rng.uniform(0.8, 1.2), min_size, max_size);
        const double gap = rng.uniform(1.02, 1.30);
        const double dist = (anchor.size + p.size) / 2.0 * gap;
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        p.cx = anchor.cx + dist * std::cos(theta);
        p.cy = anchor.cy + dist * std::sin(theta);
        if (in_canvas(p, canvas) && !overlaps_existing(p, placed, 0.30)) {
            placed.push_back(p);
            return true;
        }
    }
    return false;
}

std::vector<int> distinct_categories(Rng& rng, int count, int num_categories,
                                     std::optional<int> exclude = std::nullopt) {
    std::vector<int> pool;
    for (int c = 0; c < num_categories; ++c) {
        if (!exclude || c != *exclude) pool.push_back(c);
    }
    // Fisher-Yates on the pool, then take cyclically when count exceeds it
    for (int i = static_cast<int>(pool.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(0, i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out;
    for (int i = 0; i < count; ++i) out.push_back(pool[i % pool.size()]);
    return out;
}

std::vector<Placement> sample_layout(Rng& rng, const SceneConfig& cfg) {
    std::vector<Placement> placed;
    if (cfg.forced_instances > 0) {
        const auto cats = distinct_categories(rng, cfg.forced_instances, cfg.num_categories);
        for (int c : cats) place_random(rng, c, cfg.canvas, cfg.min_size, cfg.max_size, placed);
        return placed;
    }

    const bool cluster =
        cfg.force_multi_instance || rng.uniform() < cfg.cluster_prob;
    if (cluster) {
        const int cat = static_cast<int>(rng.uniform_int(0, cfg.num_categories - 1));
        const int size = static_cast<int>(rng.uniform_int(cfg.cluster_min, cfg.cluster_max));
        if (place_random(rng, cat, cfg.canvas, cfg.min_size, cfg.max_size, placed)) {
            for (int i = 1; i < size; ++i) {
                if (!place_adjacent(rng, placed.front(), cat, cfg.canvas, cfg.min_size,
                                    cfg.max_size, placed)) {
                    place_random(rng, cat, cfg.canvas, cfg.min_size, cfg.max_size, placed);
                }
            }
        }
        const int budget = static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
        const int extras = std::max(0, budget - static_cast<int>(placed.size()));
        if (extras > 0 && cfg.num_categories > 1) {
            const auto cats = distinct_categories(
                rng, std::min(extras, cfg.num_categories - 1), cfg.num_categories, cat);
            for (int c : cats) place_random(rng, c, cfg.canvas, cfg.min_size, cfg.max_size, placed);
        }
    } else {
        const int n = static_cast<int>(rng.uniform_int(cfg.min_instances, cfg.max_instances));
        const auto cats = distinct_categories(rng, n, cfg.num_categories);
        for (int c : cats) place_random(rng, c, cfg.canvas, cfg.min_size, cfg.max_size, placed);
    }
    if (placed.empty()) {
        place_random(rng, static_cast<int>(rng.uniform_int(0, cfg.num_categories - 1)),
                     cfg.canvas, cfg.min_size, cfg.max_size, placed);
    }
    return placed;
}

inline void put_pixel(LabeledImage& img, int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * img.width + x) * 3;
    img.raster[i + 0] = std::clamp(r, 0.0, 1.0);
    img.raster[i + 1] = std::clamp(g, 0.0, 1.0);
    img.raster[i + 2] = std::clamp(b, 0.0, 1.0);
}

void draw_background(LabeledImage& img, Rng& rng, int max_distractors) {
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double v = 0.32 + rng.uniform(-0.06, 0.06);
            put_pixel(img, x, y, v, v, v);
        }
    }
    // low-contrast clutter: gray bars and blobs, no class texture
    const int k = static_cast<int>(rng.uniform_int(2, std::max(2, max_distractors)));
    for (int i = 0; i < k; ++i) {
        const double v = rng.uniform(0.18, 0.50);
        if (rng.uniform() < 0.5) {
            const int w = static_cast<int>(rng.uniform_int(6, 22));
            const int h = static_cast<int>(rng.uniform_int(2, 6));
            const int x0 = static_cast<int>(rng.uniform_int(0, img.width - 1));
            const int y0 = static_cast<int>(rng.uniform_int(0, img.height - 1));
            const bool vertical = rng.uniform() < 0.5;
            for (int dy = 0; dy < (vertical ? w : h); ++dy)
                for (int dx = 0; dx < (vertical ? h : w); ++dx)
                    put_pixel(img, x0 + dx, y0 + dy, v, v, v);
        } else {
            const double rad = rng.uniform(3.0, 9.0);
            const double cx = rng.uniform(0.0, img.width);
            const double cy = rng.uniform(0.0, img.height);
            for (int y = static_cast<int>(cy - rad); y <= static_cast<int>(cy + rad); ++y)
                for (int x = static_cast<int>(cx - rad); x <= static_cast<int>(cx + rad); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad)
                        put_pixel(img, x, y, v, v, v);
        }
    }
}

// kind 0: circle with radial rings; 1: square with checker; 2: triangle with stripes.
// Each carries a small bright core patch so a sub-part is locally discriminative.
void draw_shape(LabeledImage& img, Rng& rng, const Placement& p) {
    const int kind = p.category % 3;
    const Palette base = kPalette[p.category % 8];
    const double bright = rng.uniform(0.85, 1.15);
    const double jr = rng.uniform(-0.05, 0.05);
    const double jg = rng.uniform(-0.05, 0.05);
    const double jb = rng.uniform(-0.05, 0.05);
    const double half = p.size / 2.0;
    const Box bb = p.bbox();

    auto inside = [&](double x, double y) -> bool {
        const double dx = x - p.cx;
        const double dy = y - p.cy;
        switch (kind) {
            case 0:
                return dx * dx + dy * dy <= half * half;
            case 1:
                return std::abs(dx) <= half && std::abs(dy) <= half;
            default: {  // upward triangle inscribed in the box
                if (dy < -half || dy > half) return false;
                const double t = (dy + half) / p.size;  // 0 at apex row
                return std::abs(dx) <= t * half;
            }
        }
    };
    auto texture = [&](double x, double y) -> double {
        const double dx = x - p.cx;
        const double dy = y - p.cy;
        switch (kind) {
            case 0: {
                const double r = std::sqrt(dx * dx + dy * dy);
                return (static_cast<int>(r / 4.0) % 2 == 0) ? 1.0 : 0.62;
            }
            case 1: {
                const int cxq = static_cast<int>(std::floor((x - bb.x1) / 4.0));
                const int cyq = static_cast<int>(std::floor((y - bb.y1) / 4.0));
                return ((cxq + cyq) % 2 == 0) ? 1.0 : 0.62;
            }
            default:
                return (static_cast<int>(std::floor((y - bb.y1) / 3.0)) % 2 == 0) ? 1.0 : 0.62;
        }
    };

    for (int y = static_cast<int>(std::floor(bb.y1)); y <= static_cast<int>(std::ceil(bb.y2)); ++y) {
        for (int x = static_cast<int>(std::floor(bb.x1)); x <= static_cast<int>(std::ceil(bb.x2)); ++x) {
            if (!inside(x + 0.5, y + 0.5)) continue;
            const double t = texture(x + 0.5, y + 0.5) * bright;
            put_pixel(img, x, y, base.r * t + jr, base.g * t + jg, base.b * t + jb);
        }
    }

    // bright core marker, offset so it is a strict sub-part
    const double core_r = std::max(2.0, half * 0.22);
    double ox = 0.0, oy = 0.0;
    switch (kind) {
        case 0: ox = 0.35 * half; oy = -0.25 * half; break;
        case 1: ox = -0.45 * half + core_r; oy = -0.45 * half + core_r; break;
        default: ox = 0.0; oy = 0.35 * half; break;
    }
    const double ccx = p.cx + ox, ccy = p.cy + oy;
    for (int y = static_cast<int>(ccy - core_r); y <= static_cast<int>(ccy + core_r); ++y) {
        for (int x = static_cast<int>(ccx - core_r); x <= static_cast<int>(ccx + core_r); ++x) {
            if ((x + 0.5 - ccx) * (x + 0.5 - ccx) + (y + 0.5 - ccy) * (y + 0.5 - ccy) >
                core_r * core_r)
                continue;
            if (!inside(x + 0.5, y + 0.5)) continue;
            put_pixel(img, x, y, 0.95, 0.92, 0.30);
        }
    }
}

Box jitter_box(Rng& rng, const Box& g, double max_shift, double scale_lo, double scale_hi) {
    const double sw = g.width() * rng.uniform(scale_lo, scale_hi);
    const double sh = g.height() * rng.uniform(scale_lo, scale_hi);
    const double cx = g.cx() + g.width() * rng.uniform(-max_shift, max_shift);
    const double cy = g.cy() + g.height() * rng.uniform(-max_shift, max_shift);
    return {cx - sw / 2, cy - sh / 2, cx + sw / 2, cy + sh / 2};
}

}  // namespace

std::vector<std::string> category_names(int num_categories) {
    static const char* kKind[3] = {"circle", "square", "triangle"};
    std::vector<std::string> names;
    for (int c = 0; c < num_categories; ++c) {
        std::string n = kKind[c % 3];
        if (c >= 3) n += "_" + std::to_string(c / 3 + 1);
        names.push_back(n);
    }
    return names;
}

double expected_multi_instance_fraction(const SceneConfig& cfg) {
    if (cfg.forced_instances > 0) {
        return cfg.forced_instances > cfg.num_categories ? 1.0 : 0.0;
    }
    if (cfg.force_multi_instance) return 1.0;
    int over = 0, total = 0;
    for (int n = cfg.min_instances; n <= cfg.max_instances; ++n) {
        ++total;
        if (n > cfg.num_categories) ++over;
    }
    const double p_dup = total > 0 ? static_cast<double>(over) / total : 0.0;
    return cfg.cluster_prob + (1.0 - cfg.cluster_prob) * p_dup;
}

LabeledImage generate_scene(std::uint64_t seed, const SceneConfig& cfg,
                            const std::string& id) {
    if (cfg.num_categories <= 0) {
        throw std::invalid_argument("generate_scene: zero categories");
    }
    Rng rng(seed);
    LabeledImage img;
    img.id = id;
    img.width = cfg.canvas;
    img.height = cfg.canvas;
    img.raster.assign(static_cast<std::size_t>(cfg.canvas) * cfg.canvas * 3, 0.0);

    const auto layout = sample_layout(rng, cfg);
    draw_background(img, rng, cfg.max_distractors);
    for (const auto& p : layout) {
        draw_shape(img, rng, p);
        GtInstance inst;
        inst.category = p.category;
        inst.box = p.bbox();
        img.gt.push_back(inst);
    }
    img.image_labels.assign(cfg.num_categories, 0);
    for (const auto& inst : img.gt) img.image_labels[inst.category] = 1;
    return img;
}

int grid_proposal_count(int width, int height, const ProposalConfig& cfg) {
    if (!cfg.grid) return 0;
    int count = 0;
    for (double s : cfg.grid_sizes) {
        if (s > width || s > height) continue;
        const double stride = s / 2.0;
        const int nx = static_cast<int>(std::floor((width - s) / stride)) + 1;
        const int ny = static_cast<int>(std::floor((height - s) / stride)) + 1;
        count += nx * ny;
    }
    return count;
}

std::vector<Box> generate_proposals(const LabeledImage& image, std::uint64_t seed,
                                    const ProposalConfig& cfg) {
    Rng rng(seed);
    std::vector<Box> out;
    const double w = image.width, h = image.height;

    if (cfg.grid) {
        for (double s : cfg.grid_sizes) {
            if (s > w || s > h) continue;
            const double stride = s / 2.0;
            const int nx = static_cast<int>(std::floor((w - s) / stride)) + 1;
            const int ny = static_cast<int>(std::floor((h - s) / stride)) + 1;
            for (int iy = 0; iy < ny; ++iy) {
                for (int ix = 0; ix < nx; ++ix) {
                    out.push_back({ix * stride, iy * stride, ix * stride + s, iy * stride + s});
                }
            }
        }
    }

    for (const auto& inst : image.gt) {
        for (int j = 0; j < cfg.jitter_per_gt; ++j) {
            // first jitter stays mild: IoU with the gt box > 0.5 by construction
            Box b = (j == 0) ? jitter_box(rng, inst.box, 0.04, 0.92, 1.08)
                             : jitter_box(rng, inst.box, 0.25, 0.70, 1.40);
            if (clip_box(b, w, h)) out.push_back(b);
        }
    }

    for (int i = 0; i < cfg.random_count; ++i) {
        const double bw = rng.uniform(8.0, 0.6 * w);
        const double bh = rng.uniform(8.0, 0.6 * h);
        const double x1 = rng.uniform(0.0, w - 4.0);
        const double y1 = rng.uniform(0.0, h - 4.0);
        Box b{x1, y1, x1 + bw, y1 + bh};
        if (clip_box(b, w, h)) out.push_back(b);
    }
    return out;
}

void save_split(const std::string& dir, const std::string& split, std::uint64_t seed,
                const std::vector<std::string>& categories,
                const std::vector<LabeledImage>& images) {
    fs::create_directories(fs::path(dir) / "images");
    json manifest;
    manifest["split"] = split;
    manifest["seed"] = seed;
    manifest["categories"] = categories;
    manifest["images"] = json::array();

    json annotations = json::array();
    for (const auto& img : images) {
        const std::string file = "images/" + img.id + ".png";
        std::vector<unsigned char> rgb(img.raster.size());
        for (std::size_t i = 0; i < img.raster.size(); ++i) {
            rgb[i] = static_cast<unsigned char>(std::lround(img.raster[i] * 255.0));
        }
        write_png_rgb((fs::path(dir) / file).string(), img.width, img.height, rgb);
        manifest["images"].push_back(
            {{"id", img.id}, {"file", file}, {"width", img.width}, {"height", img.height}});

        json rec;
        rec["id"] = img.id;
        rec["width"] = img.width;
        rec["height"] = img.height;
        rec["labels"] = img.image_labels;
        json props = json::array();
        for (const auto& b : img.proposals) props.push_back({b.x1, b.y1, b.x2, b.y2});
        rec["proposals"] = props;
        json gts = json::array();
        for (const auto& g : img.gt) {
            gts.push_back({{"category", g.category},
                           {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
                           {"difficult", g.difficult}});
        }
        rec["gt"] = gts;
        annotations.push_back(rec);
    }

    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    std::ofstream af(fs::path(dir) / "annotations.json");
    af << annotations.dump() << "\n";
}

LoadedSplit load_split(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("load_split: missing manifest in " + dir);
    json manifest = json::parse(mf);
    std::ifstream af(fs::path(dir) / "annotations.json");
    if (!af) throw std::runtime_error("load_split: missing annotations in " + dir);
    json annotations = json::parse(af);

    LoadedSplit out;
    out.manifest.split = manifest.at("split").get<std::string>();
    out.manifest.seed = manifest.at("seed").get<std::uint64_t>();
    out.manifest.categories = manifest.at("categories").get<std::vector<std::string>>();

    std::map<std::string, json> ann_by_id;
    for (const auto& rec : annotations) ann_by_id[rec.at("id").get<std::string>()] = rec;

    for (const auto& entry : manifest.at("images")) {
        DatasetManifest::Record rec;
        rec.id = entry.at("id").get<std::string>();
        rec.file = entry.at("file").get<std::string>();
        rec.width = entry.at("width").get<int>();
        rec.height = entry.at("height").get<int>();
        out.manifest.images.push_back(rec);

        const fs::path png = fs::path(dir) / rec.file;
        if (!fs::exists(png)) throw std::runtime_error("load_split: missing file " + png.string());

        LabeledImage img;
        img.id = rec.id;
        int w = 0, h = 0;
        const auto rgb = read_png_rgb(png.string(), w, h);
        img.width = w;
        img.height = h;
        img.raster.resize(rgb.size());
        for (std::size_t i = 0; i < rgb.size(); ++i) img.raster[i] = rgb[i] / 255.0;

        const json& ann = ann_by_id.at(rec.id);
        img.image_labels = ann.at("labels").get<std::vector<int>>();
        for (const auto& p : ann.at("proposals")) {
            img.proposals.push_back({p[0].get<double>(), p[1].get<double>(),
                                     p[2].get<double>(), p[3].get<double>()});
        }
        for (const auto& g : ann.at("gt")) {
            GtInstance inst;
            inst.category = g.at("category").get<int>();
            const auto& b = g.at("box");
            inst.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                        b[3].get<double>()};
            inst.difficult = g.value("difficult", false);
            img.gt.push_back(inst);
        }
        out.images.push_back(std::move(img));
    }
    return out;
}

}  // namespace wsod
