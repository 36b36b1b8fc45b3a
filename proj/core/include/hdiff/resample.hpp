#ifndef HDIFF_RESAMPLE_HPP
#define HDIFF_RESAMPLE_HPP

#include <tuple>

#include "hdiff/rng.hpp"
#include "hdiff/tensor.hpp"

namespace hdiff {

// Bookkeeping for the crop + depth-resample applied before the first stage,
// sufficient to restore the original cropped depth afterwards.
struct ResampleRecord {
    int z_lo = 0;            // crop bounds, inclusive slice indices
    int z_hi = -1;
    int original_depth = 0;  // z_hi - z_lo + 1
    int target_depth = 0;    // depth after the budget resample
    int margin = 0;

    double scale() const { return static_cast<double>(target_depth) / original_depth; }
};

// Crops volume and mask along z to the mask's slice extent +/- margin
// (clamped to the volume). Volume/mask are (nx, ny, nz) grids.
std::tuple<Tensor, Tensor, ResampleRecord> crop_to_mask_z(const Tensor& volume, const Tensor& mask, int margin);

// If the cropped depth exceeds z_max, linearly resamples the volume along z
// to exactly z_max slices (in-plane untouched); the mask is resampled
// nearest-neighbor and stays binary. Under budget it is the identity.
std::tuple<Tensor, Tensor, ResampleRecord> adaptive_downsample_z(const Tensor& volume, const Tensor& mask,
                                                                const ResampleRecord& rec, int z_max);

// Catmull-Rom interpolation along z back to the original cropped depth.
Tensor restore_z_cubic(const Tensor& volume, const ResampleRecord& rec);

// plain depth resamplers along the z axis of an (nx, ny, nz) grid
Tensor resample_z_linear(const Tensor& volume, int new_depth);
Tensor resample_z_nearest(const Tensor& volume, int new_depth);
Tensor resample_z_cubic(const Tensor& volume, int new_depth);

// Training augmentation: thins a slice stack (b, c, h, w) along b by a factor
// drawn uniformly from [f_lo, f_hi], emulating thicker slice spacing.
// draw_spacing_factor + thin_stack let callers push a stack and its mask
// through the same draw (linear for intensities, nearest for masks).
double draw_spacing_factor(Rng& rng, double f_lo, double f_hi);
Tensor thin_stack(const Tensor& stack, double factor, bool nearest);
Tensor spacing_augmentation(const Tensor& stack, Rng& rng, double f_lo, double f_hi);

// Resamples a (b, c, h, w) stack along b to an exact depth (linear for
// intensities, nearest + re-binarize for masks). Identity when depths match.
Tensor resize_stack(const Tensor& stack, int new_depth, bool nearest);

}  // namespace hdiff

#endif
