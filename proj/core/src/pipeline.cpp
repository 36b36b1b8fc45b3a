#include "hdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "hdiff/diffusion.hpp"
#include "hdiff/errors.hpp"

namespace hdiff {

// ---- reorientation -------------------------------------------------------

Tensor volume_to_axial_stack(const Tensor& vol) {
    if (vol.ndim() != 3) throw ConfigError("volume_to_axial_stack: rank-3 volume required");
    const int nx = vol.dim(0), ny = vol.dim(1), nz = vol.dim(2);
    // a z-plane of the volume is already laid out rows=y, cols=x
    Tensor out({nz, 1, ny, nx});
    std::memcpy(out.data(), vol.data(), vol.size() * sizeof(double));
    return out;
}

Tensor axial_stack_to_volume(const Tensor& stack) {
    if (stack.ndim() != 4 || stack.dim(1) != 1)
        throw ConfigError("axial_stack_to_volume: (b, 1, h, w) stack required");
    const int nz = stack.dim(0), ny = stack.dim(2), nx = stack.dim(3);
    Tensor out({nx, ny, nz});
    std::memcpy(out.data(), stack.data(), stack.size() * sizeof(double));
    return out;
}

Tensor volume_to_coronal_stack(const Tensor& vol) {
    if (vol.ndim() != 3) throw ConfigError("volume_to_coronal_stack: rank-3 volume required");
    const int nx = vol.dim(0), ny = vol.dim(1), nz = vol.dim(2);
    Tensor out({ny, 1, nx, nz});
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            for (int k = 0; k < nz; ++k) out.at(j, 0, i, k) = vol.vox(i, j, k);
    return out;
}

Tensor coronal_stack_to_volume(const Tensor& stack) {
    if (stack.ndim() != 4 || stack.dim(1) != 1)
        throw ConfigError("coronal_stack_to_volume: (b, 1, h, w) stack required");
    const int ny = stack.dim(0), nx = stack.dim(2), nz = stack.dim(3);
    Tensor out({nx, ny, nz});
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            for (int k = 0; k < nz; ++k) out.vox(i, j, k) = stack.at(j, 0, i, k);
    return out;
}

// ---- padding -------------------------------------------------------------

std::pair<Tensor, PadRecord> pad_to_shape(const Tensor& vol, std::array<int, 3> target) {
    if (vol.ndim() != 3) throw ConfigError("pad_to_shape: rank-3 volume required");
    PadRecord rec;
    for (int a = 0; a < 3; ++a) {
        rec.original[a] = vol.dim(a);
        rec.padded[a] = target[a];
        if (target[a] < vol.dim(a))
            throw ConfigError("pad_to_shape: target dim " + std::to_string(target[a]) +
                              " smaller than volume dim " + std::to_string(vol.dim(a)));
        rec.offset[a] = (target[a] - vol.dim(a)) / 2;  // odd difference: extra voxel high side
    }
    Tensor out({target[0], target[1], target[2]});
    for (int k = 0; k < vol.dim(2); ++k)
        for (int j = 0; j < vol.dim(1); ++j)
            for (int i = 0; i < vol.dim(0); ++i)
                out.vox(i + rec.offset[0], j + rec.offset[1], k + rec.offset[2]) = vol.vox(i, j, k);
    return {std::move(out), rec};
}

std::pair<Tensor, PadRecord> pad_to_multiple(const Tensor& vol, int multiple) {
    if (multiple < 1) throw ConfigError("pad_to_multiple: multiple must be >= 1");
    std::array<int, 3> target{};
    for (int a = 0; a < 3; ++a)
        target[a] = ((vol.dim(a) + multiple - 1) / multiple) * multiple;
    return pad_to_shape(vol, target);
}

Tensor pad_like(const Tensor& vol, const PadRecord& rec) {
    for (int a = 0; a < 3; ++a)
        if (vol.dim(a) != rec.original[a]) throw DataError("pad_like: volume does not match pad record");
    Tensor out({rec.padded[0], rec.padded[1], rec.padded[2]});
    for (int k = 0; k < vol.dim(2); ++k)
        for (int j = 0; j < vol.dim(1); ++j)
            for (int i = 0; i < vol.dim(0); ++i)
                out.vox(i + rec.offset[0], j + rec.offset[1], k + rec.offset[2]) = vol.vox(i, j, k);
    return out;
}

Tensor unpad(const Tensor& vol, const PadRecord& rec) {
    if (vol.ndim() != 3) throw ConfigError("unpad: rank-3 volume required");
    for (int a = 0; a < 3; ++a)
        if (rec.offset[a] + rec.original[a] > vol.dim(a))
            throw DataError("unpad: pad record exceeds volume bounds");
    Tensor out({rec.original[0], rec.original[1], rec.original[2]});
    for (int k = 0; k < out.dim(2); ++k)
        for (int j = 0; j < out.dim(1); ++j)
            for (int i = 0; i < out.dim(0); ++i)
                out.vox(i, j, k) = vol.vox(i + rec.offset[0], j + rec.offset[1], k + rec.offset[2]);
    return out;
}

// ---- chunking ------------------------------------------------------------

std::vector<ChunkSpec> make_chunks(int extent, int chunk, int overlap) {
    if (extent < 1) throw ConfigError("make_chunks: extent must be >= 1");
    if (chunk < 1) throw ConfigError("make_chunks: chunk must be >= 1");
    if (overlap < 0 || overlap >= chunk) throw ConfigError("make_chunks: need 0 <= overlap < chunk");
    if (extent <= chunk) return {{0, extent}};
    std::vector<ChunkSpec> chunks;
    const int stride = chunk - overlap;
    for (int s = 0; s + chunk < extent; s += stride) chunks.push_back({s, chunk});
    chunks.push_back({extent - chunk, chunk});
    return chunks;
}

std::vector<double> chunk_blend_weights(int size, int overlap, bool first, bool last) {
    if (size < 1) throw ConfigError("chunk_blend_weights: size must be >= 1");
    if (overlap < 0 || 2 * overlap > size + 1)
        throw ConfigError("chunk_blend_weights: overlap too large for chunk size");
    std::vector<double> w(static_cast<std::size_t>(size), 1.0);
    for (int i = 0; i < overlap; ++i) {
        const double ramp = static_cast<double>(i + 1) / (overlap + 1);
        if (!first) w[static_cast<std::size_t>(i)] = ramp;
        if (!last) w[static_cast<std::size_t>(size - 1 - i)] = std::min(w[static_cast<std::size_t>(size - 1 - i)], ramp);
    }
    return w;
}

Tensor take_slices(const Tensor& stack, int start, int count) {
    if (stack.ndim() != 4) throw ConfigError("take_slices: rank-4 stack required");
    if (start < 0 || count < 1 || start + count > stack.dim(0))
        throw ConfigError("take_slices: slice range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside stack of depth " +
                          std::to_string(stack.dim(0)));
    const std::size_t plane = static_cast<std::size_t>(stack.dim(1)) * stack.dim(2) * stack.dim(3);
    Tensor out({count, stack.dim(1), stack.dim(2), stack.dim(3)});
    std::memcpy(out.data(), stack.data() + static_cast<std::size_t>(start) * plane,
                static_cast<std::size_t>(count) * plane * sizeof(double));
    return out;
}

// ---- stages --------------------------------------------------------------

void InpaintRequest::validate() const {
    volume.validate();
    if (!volume.normalized) throw ConfigError("inpaint: volume must be normalized to [-1, 1] first");
    if (!mask.same_shape(volume.data)) throw DataError("inpaint: mask/volume shape mismatch");
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0 && mask[i] != 1.0) throw DataError("inpaint: mask must be binary");
    config1.validate();
    config2.validate();
    if (params1 == nullptr || params2 == nullptr) throw ConfigError("inpaint: both stage parameter stores required");
    if (schedule.T < 1 || static_cast<int>(schedule.beta.size()) != schedule.T)
        throw ConfigError("inpaint: schedule is empty or inconsistent");
    if (steps < 0 || steps > schedule.T) throw ConfigError("inpaint: steps must lie in [0, T]");
    if (z_max < 2) throw ConfigError("inpaint: z_max must be >= 2");
    if (margin < 0) throw ConfigError("inpaint: margin must be >= 0");
    if (chunk < 1 || overlap < 0 || overlap >= chunk)
        throw ConfigError("inpaint: need chunk >= 1 and 0 <= overlap < chunk");
}

namespace {

// Volumes entering the stages are normalized to [-1, 1] (background can sit
// slightly below -1), so the implied clean image is clamped a little wider
// during the reverse chain to keep it on the data manifold.
constexpr double kX0Clip = 1.25;

int required_divisor(const InpaintRequest& req) {
    const int l = std::max(req.config1.num_resolutions(), req.config2.num_resolutions());
    return 1 << (l - 1);
}

ResampleRecord identity_record(int depth, int margin) {
    ResampleRecord rec;
    rec.z_lo = 0;
    rec.z_hi = depth - 1;
    rec.original_depth = depth;
    rec.target_depth = depth;
    rec.margin = margin;
    return rec;
}

Volume with_data(const Volume& like, Tensor data, double z_scale = 1.0) {
    Volume v;
    v.data = std::move(data);
    v.spacing = like.spacing;
    v.spacing[2] *= z_scale;
    v.normalized = like.normalized;
    return v;
}

}  // namespace

StageOutput axial_stage(const InpaintRequest& req) {
    req.validate();
    if (req.mask.sum() == 0.0)
        return {req.volume, "axial_coarse", identity_record(req.volume.data.dim(2), req.margin)};

    auto [subv, subm, crop_rec] = crop_to_mask_z(req.volume.data, req.mask, req.margin);
    auto [lowv, lowm, rec] = adaptive_downsample_z(subv, subm, crop_rec, req.z_max);

    const Tensor sv = volume_to_axial_stack(lowv);
    const Tensor sm = volume_to_axial_stack(lowm);
    const int d = required_divisor(req);
    if (sv.dim(2) % d != 0 || sv.dim(3) % d != 0)
        throw ConfigError("axial_stage: in-plane dims must be divisible by " + std::to_string(d) +
                          "; pad the volume first");

    DenoiserFn denoiser = as_denoiser(req.config1, *req.params1);
    Rng rng = Rng(req.seed).fork(1);
    Tensor out_stack = sample_inpaint(denoiser, sv, sm, req.schedule, rng, req.sampler_steps(), nullptr, kX0Clip);
    return {with_data(req.volume, axial_stack_to_volume(out_stack), 1.0 / rec.scale()), "axial_coarse", rec};
}

StageOutput restore_stage(const StageOutput& coarse, const InpaintRequest& req) {
    const ResampleRecord& rec = coarse.record;
    Tensor restored_sub = restore_z_cubic(coarse.volume.data, rec);
    Tensor out = req.volume.data;
    const int nx = out.dim(0), ny = out.dim(1);
    for (int k = rec.z_lo; k <= rec.z_hi; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                if (req.mask.vox(i, j, k) != 0.0) out.vox(i, j, k) = restored_sub.vox(i, j, k - rec.z_lo);
    return {with_data(req.volume, std::move(out)), "restored", rec};
}

StageOutput coronal_stage(const StageOutput& restored, const InpaintRequest& req) {
    if (!restored.volume.data.same_shape(req.volume.data))
        throw DataError("coronal_stage: restored volume/request shape mismatch");
    const Tensor cs_x0 = volume_to_coronal_stack(req.volume.data);
    const Tensor cs_ctx = volume_to_coronal_stack(restored.volume.data);
    const Tensor cs_m = volume_to_coronal_stack(req.mask);
    const int ny = cs_x0.dim(0);
    const std::size_t plane = static_cast<std::size_t>(cs_x0.dim(2)) * cs_x0.dim(3);

    const int d = required_divisor(req);
    if (cs_x0.dim(2) % d != 0 || cs_x0.dim(3) % d != 0)
        throw ConfigError("coronal_stage: in-plane dims must be divisible by " + std::to_string(d) +
                          "; pad the volume first");

    DenoiserFn denoiser = as_denoiser(req.config2, *req.params2);
    Rng stage_rng = Rng(req.seed).fork(2);

    Tensor accum = Tensor::zeros(cs_x0.shape());
    std::vector<double> wsum(static_cast<std::size_t>(ny), 0.0);

    const auto chunks = make_chunks(ny, std::min(req.chunk, ny), std::min(req.overlap, std::min(req.chunk, ny) - 1));
    for (std::size_t c = 0; c < chunks.size(); ++c) {
        const auto& spec = chunks[c];
        Tensor m_chunk = take_slices(cs_m, spec.start, spec.size);
        if (m_chunk.sum() == 0.0) continue;  // nothing to refine here
        Tensor x0_chunk = take_slices(cs_x0, spec.start, spec.size);
        Tensor ctx_chunk = take_slices(cs_ctx, spec.start, spec.size);
        Rng rng = stage_rng.fork(c);
        Tensor out_chunk = sample_inpaint(denoiser, x0_chunk, m_chunk, req.schedule, rng,
                                          req.sampler_steps(), &ctx_chunk, kX0Clip);
        const auto w = chunk_blend_weights(spec.size, std::min(req.overlap, spec.size / 2),
                                           c == 0, c + 1 == chunks.size());
        for (int s = 0; s < spec.size; ++s) {
            const double* src = out_chunk.data() + static_cast<std::size_t>(s) * plane;
            double* dst = accum.data() + static_cast<std::size_t>(spec.start + s) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += w[static_cast<std::size_t>(s)] * src[i];
            wsum[static_cast<std::size_t>(spec.start + s)] += w[static_cast<std::size_t>(s)];
        }
    }

    // blend where covered, fall back to the restored context elsewhere, and
    // composite so unmasked voxels keep the input bit-exactly
    Tensor blended = cs_x0;
    for (int s = 0; s < ny; ++s) {
        const double ws = wsum[static_cast<std::size_t>(s)];
        const double* acc = accum.data() + static_cast<std::size_t>(s) * plane;
        const double* ctx = cs_ctx.data() + static_cast<std::size_t>(s) * plane;
        const double* m = cs_m.data() + static_cast<std::size_t>(s) * plane;
        double* dst = blended.data() + static_cast<std::size_t>(s) * plane;
        for (std::size_t i = 0; i < plane; ++i)
            if (m[i] != 0.0) dst[i] = ws > 0.0 ? acc[i] / ws : ctx[i];
    }
    return {with_data(req.volume, coronal_stack_to_volume(blended)), "coronal_refined", restored.record};
}

Volume run_hierarchical_inpaint(const InpaintRequest& req, std::vector<StageOutput>* trace) {
    req.validate();
    const int d = required_divisor(req);

    auto [padded_vol, rec] = pad_to_multiple(req.volume.data, d);

    InpaintRequest padded = req;
    padded.mask = pad_like(req.mask, rec);
    padded.volume.data = std::move(padded_vol);

    StageOutput coarse = axial_stage(padded);
    StageOutput restored = restore_stage(coarse, padded);
    StageOutput refined = coronal_stage(restored, padded);
    if (trace != nullptr) {
        trace->push_back(coarse);
        trace->push_back(restored);
        trace->push_back(refined);
    }

    Volume out = req.volume;
    out.data = unpad(refined.volume.data, rec);
    // unmasked voxels are copied from the request verbatim
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (req.mask[i] == 0.0) out.data[i] = req.volume.data[i];
    return out;
}

Tensor mean_fill(const Tensor& vol, const Tensor& mask, double background) {
    if (!vol.same_shape(mask)) throw DataError("mean_fill: volume/mask shape mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (mask[i] == 0.0 && vol[i] != background) {
            sum += vol[i];
            ++n;
        }
    if (n == 0) throw DataError("mean_fill: no unmasked foreground voxels to average");
    const double mean = sum / static_cast<double>(n);
    Tensor out = vol;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i] != 0.0) out[i] = mean;
    return out;
}

}  // namespace hdiff
