#include "hdiff/resample.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

enum class Interp { Linear, Nearest, Cubic };

int clampi(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

// Resamples along the slowest axis, whose slices are contiguous planes. This
// covers both (nx,ny,nz) volumes (z slowest) and (b,c,h,w) stacks (b slowest).
void resample_planes(const double* src, int n_in, std::size_t plane, double* dst, int n_out, Interp interp) {
    for (int zo = 0; zo < n_out; ++zo) {
        const double zs = (n_out == 1) ? (n_in - 1) / 2.0
                                       : static_cast<double>(zo) * (n_in - 1) / (n_out - 1);
        double* out = dst + static_cast<std::size_t>(zo) * plane;
        if (interp == Interp::Nearest) {
            const int zi = clampi(static_cast<int>(std::lround(zs)), 0, n_in - 1);
            std::memcpy(out, src + static_cast<std::size_t>(zi) * plane, plane * sizeof(double));
            continue;
        }
        const int i1 = clampi(static_cast<int>(std::floor(zs)), 0, n_in - 1);
        const double t = zs - i1;
        if (interp == Interp::Linear) {
            const int i2 = clampi(i1 + 1, 0, n_in - 1);
            const double* p1 = src + static_cast<std::size_t>(i1) * plane;
            const double* p2 = src + static_cast<std::size_t>(i2) * plane;
            for (std::size_t i = 0; i < plane; ++i) out[i] = (1.0 - t) * p1[i] + t * p2[i];
        } else {  // Catmull-Rom, edge stencils clamped
            const double t2 = t * t, t3 = t2 * t;
            const double w0 = 0.5 * (-t3 + 2.0 * t2 - t);
            const double w1 = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
            const double w2 = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
            const double w3 = 0.5 * (t3 - t2);
            const double* p0 = src + static_cast<std::size_t>(clampi(i1 - 1, 0, n_in - 1)) * plane;
            const double* p1 = src + static_cast<std::size_t>(i1) * plane;
            const double* p2 = src + static_cast<std::size_t>(clampi(i1 + 1, 0, n_in - 1)) * plane;
            const double* p3 = src + static_cast<std::size_t>(clampi(i1 + 2, 0, n_in - 1)) * plane;
            for (std::size_t i = 0; i < plane; ++i)
                out[i] = w0 * p0[i] + w1 * p1[i] + w2 * p2[i] + w3 * p3[i];
        }
    }
}

Tensor resample_volume_z(const Tensor& volume, int new_depth, Interp interp) {
    if (volume.ndim() != 3) throw ConfigError("resample: rank-3 volume required");
    if (new_depth < 1) throw ConfigError("resample: new depth must be >= 1");
    const std::size_t plane = static_cast<std::size_t>(volume.dim(0)) * volume.dim(1);
    Tensor out({volume.dim(0), volume.dim(1), new_depth});
    resample_planes(volume.data(), volume.dim(2), plane, out.data(), new_depth, interp);
    return out;
}

}  // namespace

std::tuple<Tensor, Tensor, ResampleRecord> crop_to_mask_z(const Tensor& volume, const Tensor& mask, int margin) {
    if (volume.ndim() != 3 || mask.ndim() != 3) throw ConfigError("crop_to_mask_z: rank-3 grids required");
    if (!volume.same_shape(mask)) throw DataError("crop_to_mask_z: volume/mask shape mismatch");
    if (margin < 0) throw ConfigError("crop_to_mask_z: margin must be >= 0");
    const int nx = volume.dim(0), ny = volume.dim(1), nz = volume.dim(2);

    int first = -1, last = -1;
    for (int k = 0; k < nz; ++k) {
        bool any = false;
        const double* plane = mask.data() + static_cast<std::size_t>(k) * nx * ny;
        for (std::size_t i = 0; i < static_cast<std::size_t>(nx) * ny; ++i)
            if (plane[i] != 0.0) {
                any = true;
                break;
            }
        if (!any) continue;
        if (first < 0) first = k;
        last = k;
    }
    if (first < 0) throw DataError("crop_to_mask_z: mask is empty, no region to inpaint");

    ResampleRecord rec;
    rec.margin = margin;
    rec.z_lo = std::max(0, first - margin);
    rec.z_hi = std::min(nz - 1, last + margin);
    rec.original_depth = rec.z_hi - rec.z_lo + 1;
    rec.target_depth = rec.original_depth;

    const std::size_t plane = static_cast<std::size_t>(nx) * ny;
    Tensor subv({nx, ny, rec.original_depth});
    Tensor subm({nx, ny, rec.original_depth});
    std::memcpy(subv.data(), volume.data() + static_cast<std::size_t>(rec.z_lo) * plane,
                static_cast<std::size_t>(rec.original_depth) * plane * sizeof(double));
    std::memcpy(subm.data(), mask.data() + static_cast<std::size_t>(rec.z_lo) * plane,
                static_cast<std::size_t>(rec.original_depth) * plane * sizeof(double));
    return {std::move(subv), std::move(subm), rec};
}

std::tuple<Tensor, Tensor, ResampleRecord> adaptive_downsample_z(const Tensor& volume, const Tensor& mask,
                                                                const ResampleRecord& rec, int z_max) {
    if (z_max < 2) throw ConfigError("adaptive_downsample_z: z_max must be >= 2");
    if (volume.dim(2) != rec.original_depth)
        throw DataError("adaptive_downsample_z: depth " + std::to_string(volume.dim(2)) +
                        " does not match record depth " + std::to_string(rec.original_depth));
    ResampleRecord out = rec;
    if (rec.original_depth <= z_max) {
        out.target_depth = rec.original_depth;
        return {volume, mask, out};
    }
    out.target_depth = z_max;
    Tensor v = resample_volume_z(volume, z_max, Interp::Linear);
    Tensor m = resample_volume_z(mask, z_max, Interp::Nearest);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] >= 0.5 ? 1.0 : 0.0;
    return {std::move(v), std::move(m), out};
}

Tensor restore_z_cubic(const Tensor& volume, const ResampleRecord& rec) {
    if (volume.ndim() != 3) throw ConfigError("restore_z_cubic: rank-3 volume required");
    if (volume.dim(2) != rec.target_depth)
        throw DataError("restore_z_cubic: depth " + std::to_string(volume.dim(2)) +
                        " does not match record target depth " + std::to_string(rec.target_depth));
    if (rec.target_depth == rec.original_depth) return volume;
    return resample_volume_z(volume, rec.original_depth, Interp::Cubic);
}

Tensor resample_z_linear(const Tensor& volume, int new_depth) {
    return resample_volume_z(volume, new_depth, Interp::Linear);
}
Tensor resample_z_nearest(const Tensor& volume, int new_depth) {
    return resample_volume_z(volume, new_depth, Interp::Nearest);
}
Tensor resample_z_cubic(const Tensor& volume, int new_depth) {
    return resample_volume_z(volume, new_depth, Interp::Cubic);
}

double draw_spacing_factor(Rng& rng, double f_lo, double f_hi) {
    if (!(1.0 <= f_lo && f_lo <= f_hi && f_hi <= 5.0))
        throw ConfigError("spacing factor range must satisfy 1 <= lo <= hi <= 5");
    return rng.uniform(f_lo, f_hi);
}

Tensor thin_stack(const Tensor& stack, double factor, bool nearest) {
    if (stack.ndim() != 4) throw ConfigError("thin_stack: rank-4 stack required");
    if (!(factor >= 1.0)) throw ConfigError("thin_stack: factor must be >= 1");
    const int b = stack.dim(0);
    const int nb = std::max(2, static_cast<int>(std::lround(b / factor)));
    if (nb >= b) return stack;
    const std::size_t plane = static_cast<std::size_t>(stack.dim(1)) * stack.dim(2) * stack.dim(3);
    Tensor out({nb, stack.dim(1), stack.dim(2), stack.dim(3)});
    resample_planes(stack.data(), b, plane, out.data(), nb, nearest ? Interp::Nearest : Interp::Linear);
    if (nearest)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.5 ? 1.0 : 0.0;
    return out;
}

Tensor spacing_augmentation(const Tensor& stack, Rng& rng, double f_lo, double f_hi) {
    return thin_stack(stack, draw_spacing_factor(rng, f_lo, f_hi), false);
}

Tensor resize_stack(const Tensor& stack, int new_depth, bool nearest) {
    if (stack.ndim() != 4) throw ConfigError("resize_stack: rank-4 stack required");
    if (new_depth < 1) throw ConfigError("resize_stack: new depth must be >= 1");
    if (new_depth == stack.dim(0)) return stack;
    const std::size_t plane = static_cast<std::size_t>(stack.dim(1)) * stack.dim(2) * stack.dim(3);
    Tensor out({new_depth, stack.dim(1), stack.dim(2), stack.dim(3)});
    resample_planes(stack.data(), stack.dim(0), plane, out.data(), new_depth, nearest ? Interp::Nearest : Interp::Linear);
    if (nearest)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.5 ? 1.0 : 0.0;
    return out;
}

}  // namespace hdiff
