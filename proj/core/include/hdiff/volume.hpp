#ifndef HDIFF_VOLUME_HPP
#define HDIFF_VOLUME_HPP

#include <array>
#include <cstddef>

#include "hdiff/tensor.hpp"

namespace hdiff {

// 3D scalar grid, (nx, ny, nz) with x fastest in memory (NIfTI order), plus
// voxel spacing in mm. `normalized` records whether intensities live on the
// model's [-1, 1] scale or are raw.
struct Volume {
    Tensor data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    bool normalized = false;

    int nx() const { return data.dim(0); }
    int ny() const { return data.dim(1); }
    int nz() const { return data.dim(2); }
    void validate() const;
};

// Binary grid aligned to a Volume; values strictly in {0, 1}.
struct MaskVolume {
    Tensor data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    void validate() const;
    bool empty_mask() const;
    std::size_t count() const;
};

// Integer tissue labels: 0 background, 1 CSF, 2 GM, 3 WM.
struct LabelVolume {
    Tensor data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    void validate() const;
};

inline constexpr int kLabelBackground = 0;
inline constexpr int kLabelCsf = 1;
inline constexpr int kLabelGm = 2;
inline constexpr int kLabelWm = 3;

// Affine record mapping raw [lo, hi] onto [-1, 1].
struct NormalizationRecord {
    double lo = 0.0;
    double hi = 1.0;
};

// Maps the range of the nonzero voxels onto [-1, 1]; the affine is applied to
// every voxel (zero background may land slightly below -1 if the brain's
// minimum exceeds 0). Throws on constant or all-zero input.
std::pair<Volume, NormalizationRecord> normalize_intensity(const Volume& v);

Volume denormalize_intensity(const Volume& v, const NormalizationRecord& rec);

}  // namespace hdiff

#endif
