#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "wsod/dataset.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace wsod {

VocLoadReport load_voc_annotations(const std::string& dir) {
    VocLoadReport report;
    if (!fs::exists(dir) || !fs::is_directory(dir)) {
        throw std::invalid_argument("load_voc_annotations: not a directory: " + dir);
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".xml") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    for (const auto& file : files) {
        try {
            pt::ptree tree;
            pt::read_xml(file.string(), tree);
            const auto& ann = tree.get_child("annotation");

            VocImageRecord rec;
            rec.id = ann.get<std::string>("filename", file.stem().string());
            for (const auto& [key, obj] : ann) {
                if (key != "object") continue;
                const auto name = obj.get<std::string>("name");
                const bool difficult = obj.get<int>("difficult", 0) != 0;
                // bndbox fields must parse as numbers even though counting
                // does not use them; a broken box means a broken file
                obj.get<double>("bndbox.xmin");
                obj.get<double>("bndbox.ymin");
                obj.get<double>("bndbox.xmax");
                obj.get<double>("bndbox.ymax");
                if (difficult) {
                    rec.difficult_counts[name] += 1;
                } else {
                    rec.counts[name] += 1;
                }
            }
            report.records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            report.errors.emplace_back(file.string(), e.what());
        }
    }
    return report;
}

}  // namespace wsod
