#ifndef HDIFF_CHECKPOINT_HPP
#define HDIFF_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <utility>

#include "hdiff/backbone.hpp"
#include "hdiff/params.hpp"

namespace hdiff {

// Everything needed to resume training or run inference: the architecture,
// the noise schedule it was trained against, and training progress. Stored as
// JSON inside the binary archive, ahead of the raw tensors.
struct CheckpointMeta {
    int version = 1;
    std::string stage;  // "axial" or "coronal"
    BackboneConfig config;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int iteration = 0;
    std::uint64_t seed = 0;
};

// Single-file binary archive: magic "HDIF", format version, JSON metadata,
// then named float64 tensors (parameter values plus both Adam moments).
void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const ParamStore& store);
std::pair<CheckpointMeta, ParamStore> load_checkpoint(const std::string& path);

}  // namespace hdiff

#endif
