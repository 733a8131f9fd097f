#pragma once

#include "latentscope/volume.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace latentscope {

/// n_subjects x R matrix of region mean intensities. Row order follows the cohort.
struct RegionProfileMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> subject_ids;
    std::vector<int> region_ids;

    [[nodiscard]] Eigen::Index rows() const { return values.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return values.cols(); }
};

/// Mean intensity per region 1..R (background excluded). Throws ConfigError naming an empty region.
std::vector<double> region_means(const Volume& volume, const AtlasMap& atlas);

RegionProfileMatrix build_region_profiles(const Cohort& cohort);

/// Keeps the given rows (by index) in the given order.
RegionProfileMatrix select_rows(const RegionProfileMatrix& profiles, const std::vector<std::size_t>& rows);

}  // namespace latentscope
