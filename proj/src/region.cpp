#include "latentscope/region.hpp"

#include "latentscope/error.hpp"

namespace latentscope {

std::vector<double> region_means(const Volume& volume, const AtlasMap& atlas) {
    if (volume.dims() != atlas.dims()) {
        throw ShapeError("volume dims " + to_string(volume.dims()) + " differ from atlas dims " +
                         to_string(atlas.dims()));
    }
    const auto R = atlas.region_count();
    std::vector<double> sums(R + 1, 0.0);
    std::vector<std::size_t> counts(R + 1, 0);
    const auto& labels = atlas.labels();
    const auto& voxels = volume.voxels();
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        sums[labels[i]] += voxels[i];
        ++counts[labels[i]];
    }
    std::vector<double> means(R);
    for (std::uint32_t r = 1; r <= R; ++r) {
        if (counts[r] == 0) {
            throw ConfigError("region " + std::to_string(r) + " is empty");
        }
        means[r - 1] = sums[r] / static_cast<double>(counts[r]);
    }
    return means;
}

RegionProfileMatrix build_region_profiles(const Cohort& cohort) {
    if (cohort.subjects.empty()) {
        throw ConfigError("cannot build region profiles of an empty cohort");
    }
    const auto R = static_cast<Eigen::Index>(cohort.atlas.region_count());
    RegionProfileMatrix out;
    out.values.resize(static_cast<Eigen::Index>(cohort.size()), R);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto means = region_means(cohort.subjects[i].volume, cohort.atlas);
        for (Eigen::Index r = 0; r < R; ++r) {
            out.values(static_cast<Eigen::Index>(i), r) = means[static_cast<std::size_t>(r)];
        }
        out.subject_ids.push_back(cohort.subjects[i].id);
    }
    for (Eigen::Index r = 1; r <= R; ++r) {
        out.region_ids.push_back(static_cast<int>(r));
    }
    return out;
}

RegionProfileMatrix select_rows(const RegionProfileMatrix& profiles, const std::vector<std::size_t>& rows) {
    RegionProfileMatrix out;
    out.region_ids = profiles.region_ids;
    out.values.resize(static_cast<Eigen::Index>(rows.size()), profiles.values.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.values.row(static_cast<Eigen::Index>(i)) = profiles.values.row(static_cast<Eigen::Index>(rows[i]));
        out.subject_ids.push_back(profiles.subject_ids.at(rows[i]));
    }
    return out;
}

}  // namespace latentscope
