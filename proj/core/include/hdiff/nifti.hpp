#ifndef HDIFF_NIFTI_HPP
#define HDIFF_NIFTI_HPP

#include <string>

#include "hdiff/volume.hpp"

namespace hdiff {

// NIfTI-1 single-file I/O (.nii, .nii.gz). Scalar volumes are written as
// float64 so save/load round trips are bit-exact; masks and labels as uint8.
// Loading supports uint8/int16/int32/float32/float64 payloads, byte-swapped
// files, and scl_slope/scl_inter intensity scaling.

Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

MaskVolume load_mask(const std::string& path);
void save_mask(const MaskVolume& m, const std::string& path);

LabelVolume load_labels(const std::string& path);
void save_labels(const LabelVolume& l, const std::string& path);

}  // namespace hdiff

#endif
