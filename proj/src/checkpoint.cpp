#include "wsod/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

using nlohmann::json;

namespace wsod {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'O', 'D', 'C', 'K', '0', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     std::uint64_t iteration, const std::string& config_hash) {
    const auto params = model.parameters();
    json header;
    header["iteration"] = iteration;
    header["config_hash"] = config_hash;
    header["tensors"] = json::array();
    for (const auto& [name, var] : params) {
        header["tensors"].push_back(
            {{"name", name}, {"rows", var.rows()}, {"cols", var.cols()}});
    }
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint64_t head_len = head.size();
    out.write(reinterpret_cast<const char*>(&head_len), sizeof(head_len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& [name, var] : params) {
        out.write(reinterpret_cast<const char*>(var.value().data()),
                  static_cast<std::streamsize>(sizeof(double) * var.rows() * var.cols()));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed: " + path);
}

namespace {

json read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    std::uint64_t head_len = 0;
    in.read(reinterpret_cast<char*>(&head_len), sizeof(head_len));
    std::string head(head_len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(head_len));
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    return json::parse(head);
}

}  // namespace

CheckpointInfo load_checkpoint(const std::string& path, Model& model) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    const json header = read_header(in, path);

    std::map<std::string, ad::Var> by_name;
    for (auto& [name, var] : model.parameters()) by_name.emplace(name, var);

    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const int rows = entry.at("rows").get<int>();
        const int cols = entry.at("cols").get<int>();
        const auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw std::runtime_error("load_checkpoint: unexpected tensor " + name);
        }
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        }
        in.read(reinterpret_cast<char*>(it->second.mutable_value().data()),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw std::runtime_error("load_checkpoint: missing tensor " +
                                 by_name.begin()->first);
    }
    if (!in) throw std::runtime_error("load_checkpoint: truncated data in " + path);

    CheckpointInfo info;
    info.iteration = header.at("iteration").get<std::uint64_t>();
    info.config_hash = header.at("config_hash").get<std::string>();
    return info;
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_checkpoint_info: cannot open " + path);
    const json header = read_header(in, path);
    CheckpointInfo info;
    info.iteration = header.at("iteration").get<std::uint64_t>();
    info.config_hash = header.at("config_hash").get<std::string>();
    return info;
}

}  // namespace wsod
