#include "latentscope/phantom.hpp"

#include "latentscope/error.hpp"
#include "latentscope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace latentscope {

namespace {

constexpr std::uint64_t kAtlasStream = 1;
constexpr std::uint64_t kTemplateStream = 2;
constexpr std::uint64_t kSubjectStream = 1000;

std::vector<bool> foreground_mask(Dims dims) {
    std::vector<bool> mask(dims.count(), false);
    for (std::size_t z = 0; z < dims.z; ++z) {
        const double cz = ((static_cast<double>(z) + 0.5) / static_cast<double>(dims.z) - 0.5) / 0.45;
        for (std::size_t y = 0; y < dims.y; ++y) {
            const double cy = ((static_cast<double>(y) + 0.5) / static_cast<double>(dims.y) - 0.5) / 0.45;
            for (std::size_t x = 0; x < dims.x; ++x) {
                const double cx = ((static_cast<double>(x) + 0.5) / static_cast<double>(dims.x) - 0.5) / 0.45;
                mask[dims.index(x, y, z)] = cx * cx + cy * cy + cz * cz <= 1.0;
            }
        }
    }
    return mask;
}

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        kernel[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (auto& w : kernel) {
        w /= total;
    }
    return kernel;
}

// Standard normal via Box-Muller on uniform01, so the stream is library-independent.
class NormalSampler {
public:
    explicit NormalSampler(Rng& rng) : rng_(rng) {}
    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(rng_);
        while (u1 <= 0.0) {
            u1 = uniform01(rng_);
        }
        const double u2 = uniform01(rng_);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    Rng& rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace

std::map<ClassLabel, std::size_t> reference_class_counts() {
    return {{ClassLabel::NOR, 229}, {ClassLabel::MCI, 252}, {ClassLabel::MCIc, 149}, {ClassLabel::AD, 188}};
}

void gaussian_smooth(std::vector<double>& field, Dims dims, double sigma) {
    if (sigma <= 0.0) {
        return;
    }
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<long>(kernel.size() / 2);
    const std::array<std::size_t, 3> extent = dims.as_array();
    const std::array<std::size_t, 3> stride = {1, dims.x, dims.x * dims.y};
    std::vector<double> line;
    std::vector<double> out;
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t n = extent[static_cast<std::size_t>(axis)];
        const std::size_t step = stride[static_cast<std::size_t>(axis)];
        line.resize(n);
        out.resize(n);
        const std::size_t lines = dims.count() / n;
        for (std::size_t l = 0; l < lines; ++l) {
            // Base offset of the l-th line along `axis`.
            std::size_t base = 0;
            if (axis == 0) {
                base = l * dims.x;
            } else if (axis == 1) {
                base = (l % dims.x) + (l / dims.x) * dims.x * dims.y;
            } else {
                base = l;
            }
            for (std::size_t i = 0; i < n; ++i) {
                line[i] = field[base + i * step];
            }
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (long k = -radius; k <= radius; ++k) {
                    const long j = std::clamp(static_cast<long>(i) + k, 0L, static_cast<long>(n) - 1);
                    acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(j)];
                }
                out[i] = acc;
            }
            for (std::size_t i = 0; i < n; ++i) {
                field[base + i * step] = out[i];
            }
        }
    }
}

AtlasMap generate_atlas(Dims dims, std::uint32_t region_count, std::uint64_t seed) {
    if (region_count == 0) {
        throw ConfigError("region count must be positive");
    }
    const auto mask = foreground_mask(dims);
    std::vector<std::size_t> foreground;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            foreground.push_back(i);
        }
    }
    if (foreground.size() < region_count) {
        throw ConfigError("dims " + to_string(dims) + " are too small to host " + std::to_string(region_count) +
                          " regions (" + std::to_string(foreground.size()) + " foreground voxels)");
    }
    Rng rng(derive_seed(seed, kAtlasStream));
    // Partial Fisher-Yates for the first R centroid voxels.
    for (std::size_t i = 0; i < region_count; ++i) {
        const auto span = foreground.size() - i;
        const auto j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span));
        std::swap(foreground[i], foreground[std::min(j, foreground.size() - 1)]);
    }
    struct Point {
        double x, y, z;
    };
    std::vector<Point> centroids;
    for (std::size_t r = 0; r < region_count; ++r) {
        const auto idx = foreground[r];
        centroids.push_back({static_cast<double>(idx % dims.x), static_cast<double>((idx / dims.x) % dims.y),
                             static_cast<double>(idx / (dims.x * dims.y))});
    }
    std::vector<std::uint32_t> labels(dims.count(), 0);
    for (std::size_t z = 0; z < dims.z; ++z) {
        for (std::size_t y = 0; y < dims.y; ++y) {
            for (std::size_t x = 0; x < dims.x; ++x) {
                const auto idx = dims.index(x, y, z);
                if (!mask[idx]) {
                    continue;
                }
                double best = std::numeric_limits<double>::infinity();
                std::uint32_t best_region = 0;
                for (std::uint32_t r = 0; r < region_count; ++r) {
                    const double dx = centroids[r].x - static_cast<double>(x);
                    const double dy = centroids[r].y - static_cast<double>(y);
                    const double dz = centroids[r].z - static_cast<double>(z);
                    const double d = dx * dx + dy * dy + dz * dz;
                    if (d < best) {
                        best = d;
                        best_region = r + 1;
                    }
                }
                labels[idx] = best_region;
            }
        }
    }
    return AtlasMap(dims, std::move(labels), region_count);
}

std::vector<double> template_region_intensities(std::uint32_t region_count, std::uint64_t seed) {
    Rng rng(derive_seed(seed, kTemplateStream));
    std::vector<double> base(region_count);
    for (auto& b : base) {
        b = 0.35 + 0.4 * uniform01(rng);
    }
    return base;
}

Cohort generate_phantom_cohort(const PhantomConfig& config) {
    if (config.region_count < 2) {
        throw ConfigError("phantom needs at least 2 regions");
    }
    std::size_t total = 0;
    for (const auto& [label, count] : config.class_counts) {
        total += count;
    }
    if (config.class_counts.empty() || total == 0) {
        throw ConfigError("phantom class counts are empty");
    }
    if (config.noise_sigma < 0.0 || config.smoothness < 0.0 || config.severity_spread < 0.0) {
        throw ConfigError("noise_sigma, smoothness and severity_spread must be non-negative");
    }
    for (const auto& e : config.effects) {
        if (e.region < 1 || e.region > config.region_count) {
            throw ConfigError("effect region " + std::to_string(e.region) + " outside 1.." +
                              std::to_string(config.region_count));
        }
        if (e.shift < -1.0 || e.shift > 1.0) {
            throw ConfigError("effect shift must lie in [-1, 1]");
        }
    }

    Cohort cohort;
    cohort.seed = config.seed;
    cohort.atlas = generate_atlas(config.dims, config.region_count, config.seed);
    const auto base = template_region_intensities(config.region_count, config.seed);
    const auto& labels = cohort.atlas.labels();
    const auto n_vox = config.dims.count();

    std::size_t subject_index = 0;
    std::vector<double> field(n_vox);
    for (const auto& [label, count] : config.class_counts) {
        std::vector<double> shifts(config.region_count + 1, 0.0);
        for (const auto& e : config.effects) {
            if (e.label == label) {
                shifts[e.region] += e.shift;
            }
        }
        for (std::size_t k = 0; k < count; ++k, ++subject_index) {
            Rng rng(derive_seed(config.seed, kSubjectStream + subject_index));
            NormalSampler normal(rng);
            const double severity = 1.0 + config.severity_spread * (2.0 * uniform01(rng) - 1.0);
            for (std::size_t i = 0; i < n_vox; ++i) {
                const auto r = labels[i];
                if (r == 0) {
                    field[i] = 0.0;
                    continue;
                }
                const double mean = std::clamp(base[r - 1] + severity * shifts[r], 0.0, 1.0);
                field[i] = config.noise_sigma > 0.0 ? mean + config.noise_sigma * normal() : mean;
            }
            gaussian_smooth(field, config.dims, config.smoothness);
            std::vector<float> voxels(n_vox);
            for (std::size_t i = 0; i < n_vox; ++i) {
                voxels[i] = labels[i] == 0 ? 0.0f : static_cast<float>(std::clamp(field[i], 0.0, 1.0));
            }
            char id[32];
            std::snprintf(id, sizeof(id), "sub-%04zu", subject_index + 1);
            cohort.subjects.push_back({id, label, Volume(config.dims, std::move(voxels))});
        }
    }
    return cohort;
}

std::vector<std::size_t> balanced_subset_indices(const std::vector<ClassLabel>& labels,
                                                 const std::set<ClassLabel>& groups, std::uint64_t seed) {
    if (groups.empty()) {
        throw ConfigError("balanced subset needs at least one group");
    }
    std::map<ClassLabel, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (groups.count(labels[i]) != 0) {
            members[labels[i]].push_back(i);
        }
    }
    std::size_t target = std::numeric_limits<std::size_t>::max();
    for (auto g : groups) {
        const auto it = members.find(g);
        if (it == members.end()) {
            throw ConfigError("requested class " + std::string(class_name(g)) + " is absent from the cohort");
        }
        target = std::min(target, it->second.size());
    }
    Rng rng(seed);
    std::vector<std::size_t> selected;
    for (auto& [label, idx] : members) {
        for (std::size_t i = 0; i < target; ++i) {
            const auto span = idx.size() - i;
            const auto j = i + std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(span)), span - 1);
            std::swap(idx[i], idx[j]);
        }
        selected.insert(selected.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(target));
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

Cohort balanced_subset(const Cohort& cohort, const std::set<ClassLabel>& groups, std::uint64_t seed) {
    const auto idx = balanced_subset_indices(cohort.labels(), groups, seed);
    Cohort out;
    out.atlas = cohort.atlas;
    out.seed = cohort.seed;
    out.subjects.reserve(idx.size());
    for (auto i : idx) {
        out.subjects.push_back(cohort.subjects[i]);
    }
    return out;
}

}  // namespace latentscope
