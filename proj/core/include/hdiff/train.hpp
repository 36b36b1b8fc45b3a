#ifndef HDIFF_TRAIN_HPP
#define HDIFF_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "hdiff/backbone.hpp"
#include "hdiff/diffusion.hpp"
#include "hdiff/params.hpp"
#include "hdiff/schedule.hpp"

namespace hdiff {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One update over every parameter; step is 1-based for bias correction.
void adam_step(ParamStore& store, const AdamConfig& cfg, int step);

// Produces one (x0 stack, mask stack) training example from the iteration's
// private rng stream.
using ExampleSampler = std::function<std::pair<Tensor, Tensor>(Rng&)>;

struct TrainConfig {
    int iterations = 2000;
    int start_iteration = 0;  // resume point; iterations is the end, not a count
    AdamConfig adam;
    std::uint64_t seed = 0;
    ContextMode mode = ContextMode::Inpaint;
    double blur_sigma = 1.0;
    int log_every = 10;
};

struct TrainLogEntry {
    int iteration = 0;
    double loss = 0.0;
};

struct TrainResult {
    double final_loss = 0.0;
    std::vector<TrainLogEntry> log;
};

// Runs noise-prediction training. Each iteration derives its rng purely from
// (seed, iteration), so a resumed run replays the exact same example and
// noise draws it would have seen uninterrupted.
TrainResult train_loop(const BackboneConfig& cfg, ParamStore& store, const NoiseSchedule& schedule,
                       const ExampleSampler& sampler, const TrainConfig& tc,
                       const std::function<void(int, double)>& on_step = {});

}  // namespace hdiff

#endif
