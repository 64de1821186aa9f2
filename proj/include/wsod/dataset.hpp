#pragma once

/// Synthetic textured-shapes scenes, proposal generation, dataset
/// persistence (PNG rasters + JSON manifest/annotations) and VOC-format
/// annotation ingestion for coverage statistics.
///
/// Scenes are built so the classic weak-supervision failure modes can
/// occur: shapes carry a locally discriminative sub-part (part domination),
/// same-category instances may be placed adjacently (grouped instances),
/// and images frequently contain several instances of one category
/// (missing objects under argmax labeling).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wsod/geometry.hpp"

namespace wsod {

struct GtInstance {
    int category = 0;
    Box box;
    bool difficult = false;
};

struct LabeledImage {
    std::string id;
    int width = 0;
    int height = 0;
    /// h*w*3 values in [0,1], index (y*width + x)*3 + channel.
    std::vector<double> raster;
    std::vector<Box> proposals;
    std::vector<int> image_labels;  // length C, each 0 or 1
    /// Held-out instance boxes; evaluation only. Training code must go
    /// through TrainingView, which does not expose this field.
    std::vector<GtInstance> gt;

    double pixel(int x, int y, int c) const {
        return raster[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
};

/// Read-only view of a LabeledImage for the training path; strips gt.
class TrainingView {
public:
    explicit TrainingView(const LabeledImage& img) : img_(&img) {}
    const std::string& id() const { return img_->id; }
    int width() const { return img_->width; }
    int height() const { return img_->height; }
    const std::vector<double>& raster() const { return img_->raster; }
    const std::vector<Box>& proposals() const { return img_->proposals; }
    const std::vector<int>& image_labels() const { return img_->image_labels; }

private:
    const LabeledImage* img_;
};

struct SceneConfig {
    int canvas = 128;
    int num_categories = 3;  // circle, square, triangle
    int min_instances = 1;
    int max_instances = 4;
    /// Probability an image is built around a same-category adjacent group.
    double cluster_prob = 0.5;
    int cluster_min = 2;
    int cluster_max = 3;
    double min_size = 20.0;
    double max_size = 52.0;
    int max_distractors = 6;
    /// > 0 forces exactly this many instances (distinct categories, no cluster).
    int forced_instances = 0;
    /// Every image receives at least one same-category pair.
    bool force_multi_instance = false;
};

/// Names for the default categories (index order matches labels).
std::vector<std::string> category_names(int num_categories);

/// Expected fraction of images holding >=2 same-category instances under
/// `config`; the generator's own sampling distribution in closed form.
double expected_multi_instance_fraction(const SceneConfig& config);

/// Deterministic in (seed, config, id). Throws std::invalid_argument on a
/// config with zero categories.
LabeledImage generate_scene(std::uint64_t seed, const SceneConfig& config,
                            const std::string& id);

struct ProposalConfig {
    bool grid = true;
    std::vector<double> grid_sizes{24.0, 40.0, 64.0, 96.0};
    /// Jittered copies per gt box; the first is mild so every gt keeps a
    /// proposal with IoU > 0.5 by construction.
    int jitter_per_gt = 12;
    int random_count = 40;
};

/// Number of grid boxes generate_proposals emits for an image of this size.
int grid_proposal_count(int width, int height, const ProposalConfig& config);

std::vector<Box> generate_proposals(const LabeledImage& image, std::uint64_t seed,
                                    const ProposalConfig& config);

struct DatasetManifest {
    std::string split;
    std::uint64_t seed = 0;
    std::vector<std::string> categories;
    struct Record {
        std::string id;
        std::string file;
        int width = 0;
        int height = 0;
    };
    std::vector<Record> images;
};

/// Writes images/<id>.png, manifest.json and annotations.json under `dir`.
void save_split(const std::string& dir, const std::string& split, std::uint64_t seed,
                const std::vector<std::string>& categories,
                const std::vector<LabeledImage>& images);

struct LoadedSplit {
    DatasetManifest manifest;
    std::vector<LabeledImage> images;
};

LoadedSplit load_split(const std::string& dir);

// --- VOC-format annotation ingestion ----------------------------------------

struct VocImageRecord {
    std::string id;
    /// Instance count per category name, difficult objects kept apart.
    std::map<std::string, int> counts;
    std::map<std::string, int> difficult_counts;
};

struct VocLoadReport {
    std::vector<VocImageRecord> records;
    /// (file, message) for files that failed to parse; not fatal.
    std::vector<std::pair<std::string, std::string>> errors;
};

/// Reads every *.xml under `dir` in the standard VOC per-image layout
/// (object/name, object/bndbox/{xmin,ymin,xmax,ymax}, object/difficult).
VocLoadReport load_voc_annotations(const std::string& dir);

}  // namespace wsod
