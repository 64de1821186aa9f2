#include "wsod/coverage.hpp"

#include <set>

namespace wsod {

CoverageReport argmax_coverage(const VocLoadReport& voc) {
    CoverageReport report;
    for (const auto& rec : voc.records) {
        for (const auto& [name, count] : rec.counts) {
            if (count <= 0) continue;
            auto& pc = report.per_class[name];
            pc.selected += 1;
            pc.total += count;
            report.overall.selected += 1;
            report.overall.total += count;
        }
        // with-difficult pass: presence from either kind of instance
        std::set<std::string> names;
        for (const auto& [name, count] : rec.counts)
            if (count > 0) names.insert(name);
        for (const auto& [name, count] : rec.difficult_counts)
            if (count > 0) names.insert(name);
        for (const auto& name : names) {
            int count = 0;
            if (auto it = rec.counts.find(name); it != rec.counts.end()) count += it->second;
            if (auto it = rec.difficult_counts.find(name); it != rec.difficult_counts.end())
                count += it->second;
            auto& pc = report.per_class_with_difficult[name];
            pc.selected += 1;
            pc.total += count;
            report.overall_with_difficult.selected += 1;
            report.overall_with_difficult.total += count;
        }
    }
    return report;
}

CoverageReport argmax_coverage(const std::vector<LabeledImage>& images,
                               const std::vector<std::string>& category_names) {
    VocLoadReport voc;
    for (const auto& img : images) {
        VocImageRecord rec;
        rec.id = img.id;
        for (const auto& g : img.gt) {
            const std::string& name = category_names.at(g.category);
            if (g.difficult) {
                rec.difficult_counts[name] += 1;
            } else {
                rec.counts[name] += 1;
            }
        }
        voc.records.push_back(std::move(rec));
    }
    return argmax_coverage(voc);
}

CoverageReport discovery_dump_coverage(
    const std::vector<LabeledImage>& images,
    const std::vector<std::string>& category_names,
    const std::map<std::string, std::vector<PseudoGroundTruth>>& dump_by_image,
    double iou_threshold) {
    CoverageReport report;
    for (const auto& img : images) {
        const auto it = dump_by_image.find(img.id);
        for (std::size_t g = 0; g < img.gt.size(); ++g) {
            const auto& inst = img.gt[g];
            const std::string& name = category_names.at(inst.category);
            bool covered = false;
            if (it != dump_by_image.end()) {
                for (const auto& pgt : it->second) {
                    if (pgt.category == inst.category &&
                        iou(pgt.box, inst.box) >= iou_threshold) {
                        covered = true;
                        break;
                    }
                }
            }
            auto bump = [&](std::map<std::string, CoverageCounts>& per_class,
                            CoverageCounts& overall) {
                per_class[name].total += 1;
                overall.total += 1;
                if (covered) {
                    per_class[name].selected += 1;
                    overall.selected += 1;
                }
            };
            if (!inst.difficult) bump(report.per_class, report.overall);
            bump(report.per_class_with_difficult, report.overall_with_difficult);
        }
    }
    return report;
}

}  // namespace wsod
