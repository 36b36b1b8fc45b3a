#ifndef HDIFF_PHANTOM_HPP
#define HDIFF_PHANTOM_HPP

#include <array>
#include <cstdint>

#include "hdiff/rng.hpp"
#include "hdiff/volume.hpp"

namespace hdiff {

// Synthetic T1-like head: nested smooth ellipsoids (white-matter core,
// grey-matter shell, CSF ventricle inclusions) with per-tissue intensities
// WM 0.75 > GM 0.5 > CSF 0.15 on [0, 1], partial-volume smoothing, a low-
// frequency multiplicative bias field and additive noise. Labels are exact
// (pre-smoothing geometry) and partition the nonzero voxels.
struct Phantom {
    Volume volume;
    LabelVolume labels;
};

inline constexpr double kCsfIntensity = 0.15;
inline constexpr double kGmIntensity = 0.50;
inline constexpr double kWmIntensity = 0.75;

Phantom generate_phantom(std::uint64_t seed, std::array<int, 3> shape,
                         std::array<double, 3> spacing = {1.0, 1.0, 1.0});

// axis-aligned ellipsoid indicator on a grid
Tensor ellipsoid_mask(std::array<int, 3> shape, std::array<double, 3> center, std::array<double, 3> radii);

// Translates a lesion mask to a random location where every masked voxel
// lands on nonzero tissue of `healthy`; rejection-samples placements.
MaskVolume transplant_mask(const Volume& healthy, const MaskVolume& lesion, Rng& rng, int max_tries = 1000);

// Midpoint-threshold segmenter on raw [0,1] intensities; the stand-in for an
// external tissue segmentation tool when evaluating label overlap.
LabelVolume threshold_segment(const Volume& v);

}  // namespace hdiff

#endif
