#ifndef HDIFF_DIFFUSION_HPP
#define HDIFF_DIFFUSION_HPP

#include <functional>

#include "hdiff/rng.hpp"
#include "hdiff/schedule.hpp"
#include "hdiff/tensor.hpp"

namespace hdiff {

// The conditioning fed to the denoiser: noisy slices, context slices, mask,
// timestep. All three tensors share shape (b, c, h, w); m is binary.
struct ConditioningTuple {
    Tensor x_t;
    Tensor x_m;
    Tensor m;
    int t = 0;

    void validate() const;
};

enum class ContextMode { Inpaint, Refine };

// Any callable that predicts the noise from (x_t, x_m, m, t).
using DenoiserFn = std::function<Tensor(const Tensor& x_t, const Tensor& x_m, const Tensor& m, int t)>;

// Closed-form forward marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule);

// x0 outside the mask, zero inside.
Tensor build_context_inpaint(const Tensor& x0, const Tensor& m);

// Gaussian-blurred x0 inside the mask, untouched x0 outside. The blur is 2D
// per slice, kernel truncated at 4*sigma, reflect boundary handling.
Tensor build_context_refine(const Tensor& x0, const Tensor& m, double blur_sigma);

// Per-slice separable Gaussian blur over (h, w); shared with phantom synthesis.
Tensor gaussian_blur_slices(const Tensor& stack, double sigma);

// Draws (t, eps), corrupts x0 and assembles the conditioning for one training
// example. Shared by the inference-only loss below and the recorded training
// step so both consume the rng identically.
struct TrainingExample {
    Tensor x_t;
    Tensor x_m;
    Tensor eps;
    int t = 0;
};
TrainingExample make_training_example(const Tensor& x0, const Tensor& m, ContextMode mode,
                                      const NoiseSchedule& schedule, Rng& rng, double blur_sigma = 1.0);

// Noise-prediction objective: mean squared error between the drawn noise and
// the denoiser output, restricted to the masked region (the fill task is the
// supervised target; the context reaches the model as an input channel and
// carries no training signal of its own). Empty mask yields 0.
double training_loss(const DenoiserFn& denoiser, const Tensor& x0, const Tensor& m, ContextMode mode,
                     const NoiseSchedule& schedule, Rng& rng, double blur_sigma = 1.0);

// Ancestral reverse process from pure noise, running t = steps-1 .. 0 with
// fixed per-step variance beta_t. At each step unmasked voxels are re-drawn
// from the forward marginal of the known content (training always pairs the
// conditioning with a noised copy of the truth outside the mask, so this
// keeps inference on the training distribution); masked voxels follow the
// learned reverse updates. The final output is composited as
// x0*(1-m) + xhat*m so unmasked voxels are bit-exact copies of the input.
// context_override supplies refinement-style context; by default the inpaint
// context x0*(1-m) is used.
//
// x0_clip > 0 clamps the implied clean image to [-x0_clip, x0_clip] before
// each posterior mean, the standard chain stabilizer for data of known range;
// 0 leaves the update exact (required by the analytic-inversion oracles).
Tensor sample_inpaint(const DenoiserFn& denoiser, const Tensor& x0, const Tensor& m, const NoiseSchedule& schedule,
                      Rng& rng, int steps, const Tensor* context_override = nullptr, double x0_clip = 0.0);

}  // namespace hdiff

#endif
