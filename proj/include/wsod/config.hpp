#pragma once

/// Run configuration: dataset generation, model dimensions, training
/// hyperparameters and inference settings. JSON round-trip with strict
/// unknown-key rejection, plus dotted-key overrides ("train.lr=0.02").

#include <cstdint>
#include <string>

#include "wsod/dataset.hpp"
#include "wsod/model.hpp"

namespace wsod {

struct DataConfig {
    SceneConfig scene;
    ProposalConfig proposals;
    int train_images = 500;
    int test_images = 100;
    /// Extra split where every image holds a same-category pair.
    int multi_test_images = 100;
    std::uint64_t seed = 7;
};

struct TrainConfig {
    int iterations = 2000;
    int batch_size = 2;
    std::uint64_t seed = 1;
    double learning_rate = 0.01;
    double weight_decay = 0.0001;
    double momentum = 0.9;
    double tau_iou = 0.5;
    double tau_drop = 0.3;
    double tau_nms = 0.1;
    double lambda = 0.03;
    double epsilon = 0.2;
    bool discovery_enabled = true;
    bool wscl_enabled = true;
    bool dropblock_enabled = true;
    bool regression_enabled = true;
    std::string discovery_criterion = "similarity";  // or "classification"
    double cls_threshold = 0.4;
    bool cls_adaptive = false;
    std::string omega_denominator = "sampled";     // or "all"
    std::string discovered_omega = "mil_formula";  // or "one"
    bool discovered_regression = true;
    int log_every = 20;
};

struct InferConfig {
    double nms = 0.4;
    double confidence_threshold = 0.01;
};

struct EvalConfig {
    double iou_threshold = 0.5;
    bool eleven_point = false;  // default: all-point interpolation
};

struct Config {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    InferConfig infer;
    EvalConfig eval;
};

/// Parse from JSON text; unknown keys and type mismatches throw
/// std::invalid_argument with the offending key path.
Config config_from_json(const std::string& text);
Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);

/// Apply one "section.key=value" override; validates key and value type.
void apply_override(Config& cfg, const std::string& assignment);

/// Stable FNV-1a hash of the canonical JSON form, for checkpoint headers.
std::string config_hash(const Config& cfg);

}  // namespace wsod
