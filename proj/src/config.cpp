#include "wsod/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include <json.hpp>

using nlohmann::json;

namespace wsod {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw std::invalid_argument("config: " + path + ": " + what);
}

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_, "expected an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            fail(path_ + "." + key, e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) fail(path_ + "." + key, "unknown key");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_scene(const json& j, SceneConfig& s) {
    Section sec(j, "data.scene");
    sec.read("canvas", s.canvas);
    sec.read("num_categories", s.num_categories);
    sec.read("min_instances", s.min_instances);
    sec.read("max_instances", s.max_instances);
    sec.read("cluster_prob", s.cluster_prob);
    sec.read("cluster_min", s.cluster_min);
    sec.read("cluster_max", s.cluster_max);
    sec.read("min_size", s.min_size);
    sec.read("max_size", s.max_size);
    sec.read("max_distractors", s.max_distractors);
    sec.read("forced_instances", s.forced_instances);
    sec.read("force_multi_instance", s.force_multi_instance);
    sec.finish();
}

void read_proposals(const json& j, ProposalConfig& p) {
    Section sec(j, "data.proposals");
    sec.read("grid", p.grid);
    sec.read("grid_sizes", p.grid_sizes);
    sec.read("jitter_per_gt", p.jitter_per_gt);
    sec.read("random_count", p.random_count);
    sec.finish();
}

void read_data(const json& j, DataConfig& d) {
    Section sec(j, "data");
    if (const json* c = sec.child("scene")) read_scene(*c, d.scene);
    if (const json* c = sec.child("proposals")) read_proposals(*c, d.proposals);
    sec.read("train_images", d.train_images);
    sec.read("test_images", d.test_images);
    sec.read("multi_test_images", d.multi_test_images);
    sec.read("seed", d.seed);
    sec.finish();
}

void read_model(const json& j, ModelConfig& m) {
    Section sec(j, "model");
    sec.read("conv_channels", m.conv_channels);
    sec.read("roi_size", m.roi_size);
    sec.read("feat_dim", m.feat_dim);
    sec.read("sim_hidden", m.sim_hidden);
    sec.read("embed_dim", m.embed_dim);
    sec.read("num_classes", m.num_classes);
    sec.read("stages", m.stages);
    sec.read("dropblock_size", m.dropblock_size);
    sec.read("dropblock_prob", m.dropblock_prob);
    sec.finish();
}

void read_train(const json& j, TrainConfig& t) {
    Section sec(j, "train");
    sec.read("iterations", t.iterations);
    sec.read("batch_size", t.batch_size);
    sec.read("seed", t.seed);
    sec.read("learning_rate", t.learning_rate);
    sec.read("weight_decay", t.weight_decay);
    sec.read("momentum", t.momentum);
    sec.read("tau_iou", t.tau_iou);
    sec.read("tau_drop", t.tau_drop);
    sec.read("tau_nms", t.tau_nms);
    sec.read("lambda", t.lambda);
    sec.read("epsilon", t.epsilon);
    sec.read("discovery_enabled", t.discovery_enabled);
    sec.read("wscl_enabled", t.wscl_enabled);
    sec.read("dropblock_enabled", t.dropblock_enabled);
    sec.read("regression_enabled", t.regression_enabled);
    sec.read("discovery_criterion", t.discovery_criterion);
    sec.read("cls_threshold", t.cls_threshold);
    sec.read("cls_adaptive", t.cls_adaptive);
    sec.read("omega_denominator", t.omega_denominator);
    sec.read("discovered_omega", t.discovered_omega);
    sec.read("discovered_regression", t.discovered_regression);
    sec.read("log_every", t.log_every);
    sec.finish();
}

void read_infer(const json& j, InferConfig& i) {
    Section sec(j, "infer");
    sec.read("nms", i.nms);
    sec.read("confidence_threshold", i.confidence_threshold);
    sec.finish();
}

void read_eval(const json& j, EvalConfig& e) {
    Section sec(j, "eval");
    sec.read("iou_threshold", e.iou_threshold);
    sec.read("eleven_point", e.eleven_point);
    sec.finish();
}

void validate(const Config& cfg) {
    const auto& t = cfg.train;
    if (t.tau_iou <= 0.0 || t.tau_iou >= 1.0) fail("train.tau_iou", "must be in (0,1)");
    if (t.tau_drop < 0.0 || t.tau_drop >= 1.0) fail("train.tau_drop", "must be in [0,1)");
    if (t.tau_nms < 0.0 || t.tau_nms > 1.0) fail("train.tau_nms", "must be in [0,1]");
    if (t.lambda < 0.0) fail("train.lambda", "must be >= 0");
    if (t.epsilon <= 0.0) fail("train.epsilon", "must be > 0");
    if (t.batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (t.discovery_criterion != "similarity" && t.discovery_criterion != "classification")
        fail("train.discovery_criterion", "must be similarity or classification");
    if (t.omega_denominator != "sampled" && t.omega_denominator != "all")
        fail("train.omega_denominator", "must be sampled or all");
    if (t.discovered_omega != "mil_formula" && t.discovered_omega != "one")
        fail("train.discovered_omega", "must be mil_formula or one");
    if (cfg.model.stages < 1) fail("model.stages", "must be >= 1");
    if (cfg.model.num_classes < 1) fail("model.num_classes", "must be >= 1");
    if (cfg.model.dropblock_size > cfg.model.roi_size)
        fail("model.dropblock_size", "must not exceed roi_size");
    if (cfg.model.conv_channels.size() != 4) fail("model.conv_channels", "expected 4 entries");
}

json to_json_doc(const Config& cfg) {
    json j;
    j["data"]["scene"] = {{"canvas", cfg.data.scene.canvas},
                          {"num_categories", cfg.data.scene.num_categories},
                          {"min_instances", cfg.data.scene.min_instances},
                          {"max_instances", cfg.data.scene.max_instances},
                          {"cluster_prob", cfg.data.scene.cluster_prob},
                          {"cluster_min", cfg.data.scene.cluster_min},
                          {"cluster_max", cfg.data.scene.cluster_max},
                          {"min_size", cfg.data.scene.min_size},
                          {"max_size", cfg.data.scene.max_size},
                          {"max_distractors", cfg.data.scene.max_distractors},
                          {"forced_instances", cfg.data.scene.forced_instances},
                          {"force_multi_instance", cfg.data.scene.force_multi_instance}};
    j["data"]["proposals"] = {{"grid", cfg.data.proposals.grid},
                              {"grid_sizes", cfg.data.proposals.grid_sizes},
                              {"jitter_per_gt", cfg.data.proposals.jitter_per_gt},
                              {"random_count", cfg.data.proposals.random_count}};
    j["data"]["train_images"] = cfg.data.train_images;
    j["data"]["test_images"] = cfg.data.test_images;
    j["data"]["multi_test_images"] = cfg.data.multi_test_images;
    j["data"]["seed"] = cfg.data.seed;
    j["model"] = {{"conv_channels", cfg.model.conv_channels},
                  {"roi_size", cfg.model.roi_size},
                  {"feat_dim", cfg.model.feat_dim},
                  {"sim_hidden", cfg.model.sim_hidden},
                  {"embed_dim", cfg.model.embed_dim},
                  {"num_classes", cfg.model.num_classes},
                  {"stages", cfg.model.stages},
                  {"dropblock_size", cfg.model.dropblock_size},
                  {"dropblock_prob", cfg.model.dropblock_prob}};
    j["train"] = {{"iterations", cfg.train.iterations},
                  {"batch_size", cfg.train.batch_size},
                  {"seed", cfg.train.seed},
                  {"learning_rate", cfg.train.learning_rate},
                  {"weight_decay", cfg.train.weight_decay},
                  {"momentum", cfg.train.momentum},
                  {"tau_iou", cfg.train.tau_iou},
                  {"tau_drop", cfg.train.tau_drop},
                  {"tau_nms", cfg.train.tau_nms},
                  {"lambda", cfg.train.lambda},
                  {"epsilon", cfg.train.epsilon},
                  {"discovery_enabled", cfg.train.discovery_enabled},
                  {"wscl_enabled", cfg.train.wscl_enabled},
                  {"dropblock_enabled", cfg.train.dropblock_enabled},
                  {"regression_enabled", cfg.train.regression_enabled},
                  {"discovery_criterion", cfg.train.discovery_criterion},
                  {"cls_threshold", cfg.train.cls_threshold},
                  {"cls_adaptive", cfg.train.cls_adaptive},
                  {"omega_denominator", cfg.train.omega_denominator},
                  {"discovered_omega", cfg.train.discovered_omega},
                  {"discovered_regression", cfg.train.discovered_regression},
                  {"log_every", cfg.train.log_every}};
    j["infer"] = {{"nms", cfg.infer.nms},
                  {"confidence_threshold", cfg.infer.confidence_threshold}};
    j["eval"] = {{"iou_threshold", cfg.eval.iou_threshold},
                 {"eleven_point", cfg.eval.eleven_point}};
    return j;
}

Config from_json_doc(const json& j) {
    Config cfg;
    Section root(j, "config");
    if (const json* c = root.child("data")) read_data(*c, cfg.data);
    if (const json* c = root.child("model")) read_model(*c, cfg.model);
    if (const json* c = root.child("train")) read_train(*c, cfg.train);
    if (const json* c = root.child("infer")) read_infer(*c, cfg.infer);
    if (const json* c = root.child("eval")) read_eval(*c, cfg.eval);
    root.finish();
    validate(cfg);
    return cfg;
}

}  // namespace

Config config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
    }
    return from_json_doc(j);
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

std::string config_to_json(const Config& cfg) { return to_json_doc(cfg).dump(2); }

void apply_override(Config& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw std::invalid_argument("override: expected key=value, got: " + assignment);
    }
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    json doc = to_json_doc(cfg);
    json* node = &doc;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (true) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) {
            throw std::invalid_argument("override: unknown key " + key);
        }
        node = &(*node)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!node->is_object() || !node->contains(leaf)) {
        throw std::invalid_argument("override: unknown key " + key);
    }

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // bare strings stay strings
    }
    const json& current = (*node)[leaf];
    const bool both_numeric = current.is_number() && parsed.is_number();
    if (!both_numeric && current.type() != parsed.type()) {
        throw std::invalid_argument("override: type mismatch for " + key + " (expected " +
                                    std::string(current.type_name()) + ")");
    }
    (*node)[leaf] = parsed;
    cfg = from_json_doc(doc);
}

std::string config_hash(const Config& cfg) {
    const std::string text = to_json_doc(cfg).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace wsod
