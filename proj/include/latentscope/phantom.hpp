#pragma once

#include "latentscope/volume.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <vector>

namespace latentscope {

/// A planted group effect: every subject of `label` gets `shift` added to region `region`.
struct RegionEffect {
    std::uint32_t region = 0;
    ClassLabel label = ClassLabel::AD;
    double shift = 0.0;  // in [-1, 1]
};

struct PhantomConfig {
    Dims dims{32, 32, 32};
    std::uint32_t region_count = 32;
    std::map<ClassLabel, std::size_t> class_counts{{ClassLabel::NOR, 30}, {ClassLabel::AD, 30}};
    std::vector<RegionEffect> effects;
    double noise_sigma = 0.02;
    double smoothness = 1.0;  // Gaussian blur sigma in voxels; 0 disables
    /// Per-subject severity: each subject's shifts are scaled by 1 + severity_spread * U(-1, 1).
    double severity_spread = 0.0;
    std::uint64_t seed = 1;
};

/// Class counts of the four-class reference cohort (818 subjects).
std::map<ClassLabel, std::size_t> reference_class_counts();

/// Voronoi parcellation of R seeded centroids inside an ellipsoidal foreground mask.
AtlasMap generate_atlas(Dims dims, std::uint32_t region_count, std::uint64_t seed);

/// Per-region base intensities of the noise-free template (index r-1 for region r).
std::vector<double> template_region_intensities(std::uint32_t region_count, std::uint64_t seed);

/// Deterministic for a fixed config; voxels always in [0,1], background exactly 0.
Cohort generate_phantom_cohort(const PhantomConfig& config);

/// Seeded subsample with equal counts (the minimum over `groups`) per requested class, order preserved.
Cohort balanced_subset(const Cohort& cohort, const std::set<ClassLabel>& groups, std::uint64_t seed);

/// Indices (into cohort.subjects) selected by balanced_subset for the same arguments.
std::vector<std::size_t> balanced_subset_indices(const std::vector<ClassLabel>& labels,
                                                 const std::set<ClassLabel>& groups, std::uint64_t seed);

/// Separable Gaussian blur with edge clamping.
void gaussian_smooth(std::vector<double>& field, Dims dims, double sigma);

}  // namespace latentscope
