#pragma once

#include "latentscope/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace latentscope {

inline constexpr std::string_view kVolumeMagic = "LSVOL1\n";
inline constexpr std::string_view kAtlasMagic = "LSATL1\n";

/// Raw volume: magic, ASCII "dx dy dz\n", then little-endian float32 voxels (x fastest).
void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

void write_volume(std::ostream& out, const Volume& volume);
Volume read_volume(std::istream& in);

/// Atlas: same layout as volumes with magic "LSATL1\n" and uint32 labels.
/// The region count is the largest label present.
void save_atlas(const AtlasMap& atlas, const std::filesystem::path& path);
AtlasMap load_atlas(const std::filesystem::path& path);

struct ManifestEntry {
    std::string id;
    ClassLabel label = ClassLabel::NOR;
    std::string volume_path;
};

/// CSV with header id,class_label,volume_path, after optional "# " preamble lines.
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path,
                   const std::vector<std::string>& preamble = {});
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

/// Writes volumes under `dir/volumes/`, the atlas as `dir/atlas.lsatl` and `dir/manifest.csv`.
void save_cohort(const Cohort& cohort, const std::filesystem::path& dir, const std::vector<std::string>& preamble = {});
/// Volume paths in the manifest are resolved relative to the manifest's directory.
Cohort load_cohort(const std::filesystem::path& manifest, const std::filesystem::path& atlas);

namespace binary {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);

std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);

}  // namespace binary

}  // namespace latentscope
