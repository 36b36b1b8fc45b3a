#ifndef HDIFF_PIPELINE_HPP
#define HDIFF_PIPELINE_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hdiff/backbone.hpp"
#include "hdiff/params.hpp"
#include "hdiff/resample.hpp"
#include "hdiff/schedule.hpp"
#include "hdiff/volume.hpp"

namespace hdiff {

// ---- reorientation -------------------------------------------------------
// Volumes are (nx, ny, nz), x fastest. Axial slices stack along z with rows=y
// and cols=x; coronal slices stack along y with rows=x and cols=z. All four
// maps are lossless permutations and exact mutual inverses.
Tensor volume_to_axial_stack(const Tensor& vol);    // -> (nz, 1, ny, nx)
Tensor axial_stack_to_volume(const Tensor& stack);  // inverse
Tensor volume_to_coronal_stack(const Tensor& vol);  // -> (ny, 1, nx, nz)
Tensor coronal_stack_to_volume(const Tensor& stack);

// ---- padding -------------------------------------------------------------
struct PadRecord {
    std::array<int, 3> offset{0, 0, 0};    // where the original sits in the padded grid
    std::array<int, 3> original{0, 0, 0};  // original dims
    std::array<int, 3> padded{0, 0, 0};    // padded dims
};

// symmetric zero padding; the extra voxel of an odd difference goes high
std::pair<Tensor, PadRecord> pad_to_shape(const Tensor& vol, std::array<int, 3> target);
std::pair<Tensor, PadRecord> pad_to_multiple(const Tensor& vol, int multiple);
Tensor pad_like(const Tensor& vol, const PadRecord& rec);  // same placement, zeros elsewhere
Tensor unpad(const Tensor& vol, const PadRecord& rec);

// ---- chunking ------------------------------------------------------------
struct ChunkSpec {
    int start = 0;
    int size = 0;
};

// Covers [0, extent) with windows of `chunk` slices sharing `overlap` slices;
// the final window is re-aligned to end exactly at the extent.
std::vector<ChunkSpec> make_chunks(int extent, int chunk, int overlap);

// Trapezoid cross-fade: ramps over `overlap` slices at interior chunk edges,
// flat at the outer edges of the first/last chunk.
std::vector<double> chunk_blend_weights(int size, int overlap, bool first, bool last);

Tensor take_slices(const Tensor& stack, int start, int count);

// ---- the two-stage run ---------------------------------------------------
struct InpaintRequest {
    Volume volume;  // normalized [-1, 1]
    Tensor mask;    // binary, same shape
    BackboneConfig config1, config2;
    const ParamStore* params1 = nullptr;
    const ParamStore* params2 = nullptr;
    NoiseSchedule schedule;
    int steps = 0;  // 0 means full schedule length
    int z_max = 24;
    int margin = 4;
    int chunk = 16;
    int overlap = 4;
    std::uint64_t seed = 0;

    void validate() const;
    int sampler_steps() const { return steps > 0 ? steps : schedule.T; }
};

struct StageOutput {
    Volume volume;
    std::string stage_tag;  // axial_coarse | restored | coronal_refined
    ResampleRecord record;
};

// Coarse pass: crop to the mask's z extent, resample into the depth budget,
// inpaint the axial stack. Output volume is the resampled subvolume.
StageOutput axial_stage(const InpaintRequest& req);

// Cubic depth restoration of the coarse output, pasted into the full volume
// at masked voxels only (unmasked voxels keep the input bit-exactly).
StageOutput restore_stage(const StageOutput& coarse, const InpaintRequest& req);

// Refinement pass over coronal chunks; the restored volume serves as the
// blurred-context stand-in inside the mask.
StageOutput coronal_stage(const StageOutput& restored, const InpaintRequest& req);

// Full pipeline: pad -> axial -> restore -> coronal -> unpad. Deterministic
// in the seed; every unmasked voxel of the result equals the input exactly.
// When `trace` is non-null the three stage outputs are appended to it.
Volume run_hierarchical_inpaint(const InpaintRequest& req, std::vector<StageOutput>* trace = nullptr);

// Baseline: masked voxels replaced by the mean of unmasked non-background
// voxels.
Tensor mean_fill(const Tensor& vol, const Tensor& mask, double background = 0.0);

}  // namespace hdiff

#endif
