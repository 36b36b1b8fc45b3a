#ifndef HDIFF_DATASET_HPP
#define HDIFF_DATASET_HPP

#include <string>
#include <utility>
#include <vector>

#include "hdiff/rng.hpp"
#include "hdiff/tensor.hpp"
#include "hdiff/volume.hpp"

namespace hdiff {

// One case: a scalar volume, its inpainting mask, optional tissue labels.
// Paths are stored as written in the manifest; relative ones resolve against
// the manifest's directory on load.
struct ManifestEntry {
    std::string volume;
    std::string mask;
    std::string labels;  // empty when absent
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path);

// A case loaded into memory and normalized for training.
struct TrainingCase {
    Volume volume;  // normalized [-1, 1]
    Tensor mask;    // binary, volume-shaped
    NormalizationRecord record;
};

struct TrainingSet {
    std::vector<TrainingCase> cases;
};

TrainingSet load_training_set(const std::string& manifest_path);

enum class StackOrientation { Axial, Coronal };

struct PairConfig {
    int z_max = 24;       // slice budget for axial stacks
    int margin = 4;       // crop margin around the mask's z extent
    int chunk = 16;       // coronal chunk depth
    double f_lo = 1.0;    // slice-spacing augmentation factor range
    double f_hi = 3.0;
};

// Draws one (slices, mask) training stack. Axial: crop to the mask's z extent,
// apply spacing augmentation, then resample into the slice budget. Coronal:
// a random chunk of coronal slices overlapping the mask. Cases whose mask is
// empty are skipped.
std::pair<Tensor, Tensor> make_training_pair(const TrainingSet& set, StackOrientation orientation,
                                             const PairConfig& cfg, Rng& rng);

}  // namespace hdiff

#endif
