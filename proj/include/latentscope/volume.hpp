#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace latentscope {

/// Voxel counts along x, y, z. Storage is x-fastest.
struct Dims {
    std::size_t x = 0;
    std::size_t y = 0;
    std::size_t z = 0;

    [[nodiscard]] std::size_t count() const { return x * y * z; }
    [[nodiscard]] std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return ix + x * (iy + y * iz);
    }
    [[nodiscard]] std::array<std::size_t, 3> as_array() const { return {x, y, z}; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Dense scalar field with intensities in [0,1].
class Volume {
public:
    Volume() = default;
    explicit Volume(Dims dims, float fill = 0.0f);
    Volume(Dims dims, std::vector<float> voxels);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] std::size_t size() const { return voxels_.size(); }
    [[nodiscard]] const std::vector<float>& voxels() const { return voxels_; }
    [[nodiscard]] std::vector<float>& voxels() { return voxels_; }

    float& operator[](std::size_t i) { return voxels_[i]; }
    float operator[](std::size_t i) const { return voxels_[i]; }
    float& at(std::size_t ix, std::size_t iy, std::size_t iz) { return voxels_[dims_.index(ix, iy, iz)]; }
    [[nodiscard]] float at(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return voxels_[dims_.index(ix, iy, iz)];
    }

    /// True when every voxel lies in [0,1].
    [[nodiscard]] bool in_unit_range() const;

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    Dims dims_{};
    std::vector<float> voxels_;
};

/// Per-voxel region labels; 0 is background, regions are 1..region_count.
class AtlasMap {
public:
    AtlasMap() = default;
    AtlasMap(Dims dims, std::vector<std::uint32_t> labels, std::uint32_t region_count);

    [[nodiscard]] const Dims& dims() const { return dims_; }
    [[nodiscard]] const std::vector<std::uint32_t>& labels() const { return labels_; }
    [[nodiscard]] std::uint32_t region_count() const { return region_count_; }
    [[nodiscard]] std::uint32_t operator[](std::size_t i) const { return labels_[i]; }

    /// Voxel count per region; index 0 holds the background count.
    [[nodiscard]] std::vector<std::size_t> region_sizes() const;

    friend bool operator==(const AtlasMap&, const AtlasMap&) = default;

private:
    Dims dims_{};
    std::vector<std::uint32_t> labels_;
    std::uint32_t region_count_ = 0;
};

/// Diagnostic classes, encoded with the original class indices.
enum class ClassLabel : std::uint8_t { NOR = 0, MCI = 1, MCIc = 2, AD = 3 };

inline constexpr std::array<ClassLabel, 4> kAllClasses = {ClassLabel::NOR, ClassLabel::MCI, ClassLabel::MCIc,
                                                          ClassLabel::AD};

std::string_view class_name(ClassLabel label);
std::optional<ClassLabel> parse_class(std::string_view text);
ClassLabel class_from_index(int index);
inline int class_index(ClassLabel label) { return static_cast<int>(label); }

struct Subject {
    std::string id;
    ClassLabel label = ClassLabel::NOR;
    Volume volume;
};

struct Cohort {
    std::vector<Subject> subjects;
    AtlasMap atlas;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t size() const { return subjects.size(); }
    [[nodiscard]] std::vector<ClassLabel> labels() const;
    [[nodiscard]] std::size_t count(ClassLabel label) const;

    /// Checks shared dims, unique ids and atlas consistency; throws ConfigError.
    void validate() const;
};

}  // namespace latentscope
