#ifndef HDIFF_BACKBONE_HPP
#define HDIFF_BACKBONE_HPP

#include <string>
#include <vector>

#include "hdiff/autograd.hpp"
#include "hdiff/diffusion.hpp"
#include "hdiff/params.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/tensor.hpp"

namespace hdiff {

// Denoising network over a stack of slices, slice index as batch. 2D U-Net
// blocks are followed by Dirac-initialized per-channel 1D convolutions along
// the slice axis, so at initialization the network treats every slice
// independently. With use_tam, cross-slice attention blocks are added at the
// two coarsest resolutions.
struct BackboneConfig {
    int base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 4, 4};
    int timestep_embedding_dim = 128;
    int conditioning_channels = 3;  // x_t, x_m, m concatenated
    int norm_groups = 8;
    int attention_heads = 4;
    int depthwise_width = 3;
    bool use_tam = false;
    bool use_depthwise = true;

    int num_resolutions() const { return static_cast<int>(channel_multipliers.size()); }
    int channels_at(int level) const { return base_channels * channel_multipliers[level]; }
    void validate() const;
};

// sinusoidal features, sine half then cosine half; dim must be even
Tensor timestep_embedding(int t, int dim);

// center-tap-one kernels, shape (channels, width), width odd
Tensor init_dirac(int channels, int width);

// registers every backbone parameter (deterministic order, rng-driven values)
void init_backbone_params(const BackboneConfig& cfg, ParamStore& store, Rng& rng);

// forward pass on an existing tape with bound parameters
Var unet_forward(Tape& tape, const BackboneConfig& cfg, const TapeBinding& params, const ConditioningTuple& cond);

// inference-only convenience: fresh tape, no gradients
Tensor unet_predict(const BackboneConfig& cfg, const ParamStore& store, const ConditioningTuple& cond);

// wraps config + store as the sampler-facing callable
DenoiserFn as_denoiser(const BackboneConfig& cfg, const ParamStore& store);

// standalone depth-wise slice convolution on plain tensors (shares the tape op)
Tensor depthwise_slice_conv(const Tensor& fm, const Tensor& kernel);

}  // namespace hdiff

#endif
