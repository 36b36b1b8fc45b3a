#include "hdiff/volume.hpp"

#include <cmath>
#include <string>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

void require_3d(const Tensor& t, const char* what) {
    if (t.ndim() != 3) throw DataError(std::string(what) + ": rank-3 grid required");
}

void require_positive_spacing(const std::array<double, 3>& s, const char* what) {
    for (double v : s)
        if (!(v > 0.0)) throw DataError(std::string(what) + ": spacing must be positive");
}

}  // namespace

void Volume::validate() const {
    require_3d(data, "volume");
    require_positive_spacing(spacing, "volume");
    if (!data.all_finite()) throw DataError("volume: non-finite voxel values");
}

void MaskVolume::validate() const {
    require_3d(data, "mask");
    require_positive_spacing(spacing, "mask");
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i] != 0.0 && data[i] != 1.0)
            throw DataError("mask: values must be 0 or 1, found " + std::to_string(data[i]));
}

bool MaskVolume::empty_mask() const {
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data[i] != 0.0) return false;
    return true;
}

std::size_t MaskVolume::count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < data.size(); ++i) n += data[i] != 0.0;
    return n;
}

void LabelVolume::validate() const {
    require_3d(data, "labels");
    require_positive_spacing(spacing, "labels");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = data[i];
        if (v != 0.0 && v != 1.0 && v != 2.0 && v != 3.0)
            throw DataError("labels: values must be in {0,1,2,3}, found " + std::to_string(v));
    }
}

std::pair<Volume, NormalizationRecord> normalize_intensity(const Volume& v) {
    v.validate();
    if (v.normalized) throw ConfigError("normalize_intensity: volume already normalized");
    double lo = 0.0, hi = 0.0;
    bool seen = false;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double x = v.data[i];
        if (x == 0.0) continue;  // padding / background does not skew the range
        if (!seen) {
            lo = hi = x;
            seen = true;
        } else {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    }
    if (!seen) throw DataError("normalize_intensity: volume has no nonzero voxels");
    if (!(hi > lo)) throw DataError("normalize_intensity: constant foreground, range is empty");

    Volume out = v;
    const double s = 2.0 / (hi - lo);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (out.data[i] - lo) * s - 1.0;
    out.normalized = true;
    return {std::move(out), NormalizationRecord{lo, hi}};
}

Volume denormalize_intensity(const Volume& v, const NormalizationRecord& rec) {
    if (!(rec.hi > rec.lo)) throw ConfigError("denormalize_intensity: invalid record");
    Volume out = v;
    const double s = (rec.hi - rec.lo) / 2.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (out.data[i] + 1.0) * s + rec.lo;
    out.normalized = false;
    return out;
}

}  // namespace hdiff
