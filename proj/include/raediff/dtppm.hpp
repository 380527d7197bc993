#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "raediff/bgd.hpp"
#include "raediff/rng.hpp"
#include "raediff/schedule.hpp"
#include "raediff/tensor.hpp"

namespace raediff {

/// One training-performance permission level: level index m and the forward
/// diffusion stopping step that produces it.
struct PermissionLevel {
    int m = 0;
    int t_sn = 0;
};

inline void validate_levels(const std::vector<PermissionLevel>& levels, int timesteps) {
    if (levels.empty())
        throw std::invalid_argument("permission levels: empty list");
    int prev_t = 0;
    int prev_m = 0;
    for (const PermissionLevel& lv : levels) {
        if (lv.m <= prev_m)
            throw std::invalid_argument("permission levels: level indices must increase");
        if (lv.t_sn < 1 || lv.t_sn > timesteps)
            throw std::invalid_argument("permission levels: t_sn outside 1..T");
        if (lv.t_sn <= prev_t)
            throw std::invalid_argument("permission levels: t_sn must strictly increase");
        prev_t = lv.t_sn;
        prev_m = lv.m;
    }
}

/// One graded release: every image diffused to this level's t_sn, with the
/// per-image seeds that make the draw replayable.
struct GradedDataset {
    PermissionLevel level;
    std::vector<ImageTensor> images;
    std::vector<std::uint64_t> image_seeds;  // derive_seed(master_seed, index)
};

/// Produce one slight-noise dataset per permission level. Noise is fresh and
/// independent per (image, level): image i at level m uses the stream seeded
/// with derive_seed(derive_seed(master_seed, i), m).
inline std::vector<GradedDataset> grade(const std::vector<ImageTensor>& dataset,
                                        const std::vector<PermissionLevel>& levels,
                                        const VarianceSchedule& sched, const BgdParams& bgd,
                                        std::uint64_t master_seed) {
    validate_levels(levels, sched.timesteps);
    std::vector<GradedDataset> out;
    out.reserve(levels.size());
    for (const PermissionLevel& lv : levels) {
        GradedDataset g;
        g.level = lv;
        g.images.reserve(dataset.size());
        g.image_seeds.reserve(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const std::uint64_t image_seed = derive_seed(master_seed, i);
            Rng rng(derive_seed(image_seed, static_cast<std::uint64_t>(lv.m)));
            const ImageTensor eps = gaussian_like(dataset[i], rng);
            g.images.push_back(forward_diffuse(dataset[i], lv.t_sn, eps, sched, bgd));
            g.image_seeds.push_back(image_seed);
        }
        out.push_back(std::move(g));
    }
    return out;
}

/// Result of checking the noise-level ordering across graded releases.
/// The ordering is asserted on the dataset mean; individual images may
/// violate it (the draws are independent), so violations are only counted.
struct OrderingReport {
    std::vector<double> mean_distances;       // dataset-mean L2 distance per level
    bool strictly_increasing = false;         // on the dataset means
    std::vector<int> per_image_violations;    // per adjacent level pair
};

inline OrderingReport verify_ordering(const std::vector<ImageTensor>& clean,
                                      const std::vector<GradedDataset>& graded) {
    if (graded.empty())
        throw std::invalid_argument("verify_ordering: no graded datasets");
    for (const GradedDataset& g : graded)
        if (g.images.size() != clean.size())
            throw std::invalid_argument("verify_ordering: misaligned image lists");

    OrderingReport report;
    std::vector<std::vector<double>> dist(graded.size());
    for (std::size_t l = 0; l < graded.size(); ++l) {
        double sum = 0.0;
        dist[l].reserve(clean.size());
        for (std::size_t i = 0; i < clean.size(); ++i) {
            const double d = l2_distance(clean[i], graded[l].images[i]);
            dist[l].push_back(d);
            sum += d;
        }
        report.mean_distances.push_back(sum / clean.size());
    }
    report.strictly_increasing = true;
    for (std::size_t l = 0; l + 1 < graded.size(); ++l) {
        if (!(report.mean_distances[l + 1] > report.mean_distances[l]))
            report.strictly_increasing = false;
        int violations = 0;
        for (std::size_t i = 0; i < clean.size(); ++i)
            if (!(dist[l + 1][i] > dist[l][i])) ++violations;
        report.per_image_violations.push_back(violations);
    }
    return report;
}

}  // namespace raediff
