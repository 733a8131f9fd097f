#include "latentscope/volume.hpp"

#include "latentscope/error.hpp"

#include <algorithm>
#include <unordered_set>

namespace latentscope {

std::string to_string(const Dims& dims) {
    return std::to_string(dims.x) + "x" + std::to_string(dims.y) + "x" + std::to_string(dims.z);
}

Volume::Volume(Dims dims, float fill) : dims_(dims), voxels_(dims.count(), fill) {
    if (dims.x == 0 || dims.y == 0 || dims.z == 0) {
        throw ShapeError("volume dims must be strictly positive, got " + to_string(dims));
    }
}

Volume::Volume(Dims dims, std::vector<float> voxels) : dims_(dims), voxels_(std::move(voxels)) {
    if (dims.x == 0 || dims.y == 0 || dims.z == 0) {
        throw ShapeError("volume dims must be strictly positive, got " + to_string(dims));
    }
    if (voxels_.size() != dims.count()) {
        throw ShapeError("voxel count " + std::to_string(voxels_.size()) + " does not match dims " +
                         to_string(dims));
    }
}

bool Volume::in_unit_range() const {
    return std::all_of(voxels_.begin(), voxels_.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

AtlasMap::AtlasMap(Dims dims, std::vector<std::uint32_t> labels, std::uint32_t region_count)
    : dims_(dims), labels_(std::move(labels)), region_count_(region_count) {
    if (labels_.size() != dims.count()) {
        throw ShapeError("atlas label count does not match dims " + to_string(dims));
    }
    if (region_count_ == 0) {
        throw ConfigError("atlas region count must be positive");
    }
    std::vector<bool> seen(region_count_ + 1, false);
    for (auto label : labels_) {
        if (label > region_count_) {
            throw ConfigError("atlas label " + std::to_string(label) + " exceeds region count " +
                              std::to_string(region_count_));
        }
        seen[label] = true;
    }
    for (std::uint32_t r = 1; r <= region_count_; ++r) {
        if (!seen[r]) {
            throw ConfigError("atlas region " + std::to_string(r) + " has no voxels");
        }
    }
}

std::vector<std::size_t> AtlasMap::region_sizes() const {
    std::vector<std::size_t> sizes(region_count_ + 1, 0);
    for (auto label : labels_) {
        ++sizes[label];
    }
    return sizes;
}

std::string_view class_name(ClassLabel label) {
    switch (label) {
        case ClassLabel::NOR: return "NOR";
        case ClassLabel::MCI: return "MCI";
        case ClassLabel::MCIc: return "MCIc";
        case ClassLabel::AD: return "AD";
    }
    return "?";
}

std::optional<ClassLabel> parse_class(std::string_view text) {
    for (auto label : kAllClasses) {
        if (text == class_name(label)) {
            return label;
        }
    }
    if (text.size() == 1 && text[0] >= '0' && text[0] <= '3') {
        return static_cast<ClassLabel>(text[0] - '0');
    }
    return std::nullopt;
}

ClassLabel class_from_index(int index) {
    if (index < 0 || index > 3) {
        throw ConfigError("class label must be in 0..3, got " + std::to_string(index));
    }
    return static_cast<ClassLabel>(index);
}

std::vector<ClassLabel> Cohort::labels() const {
    std::vector<ClassLabel> out;
    out.reserve(subjects.size());
    for (const auto& s : subjects) {
        out.push_back(s.label);
    }
    return out;
}

std::size_t Cohort::count(ClassLabel label) const {
    return static_cast<std::size_t>(
        std::count_if(subjects.begin(), subjects.end(), [&](const Subject& s) { return s.label == label; }));
}

void Cohort::validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& s : subjects) {
        if (!ids.insert(s.id).second) {
            throw ConfigError("duplicate subject id '" + s.id + "'");
        }
        if (s.volume.dims() != atlas.dims()) {
            throw ShapeError("subject '" + s.id + "' dims " + to_string(s.volume.dims()) +
                             " differ from atlas dims " + to_string(atlas.dims()));
        }
    }
}

}  // namespace latentscope
