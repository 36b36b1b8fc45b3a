#include "hdiff/train.hpp"

#include <cmath>
#include <string>

#include "hdiff/errors.hpp"

namespace hdiff {

void adam_step(ParamStore& store, const AdamConfig& cfg, int step) {
    if (step < 1) throw ConfigError("adam_step: step must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.beta2, step);
    for (auto& [name, st] : store) {
        for (std::size_t i = 0; i < st.value.size(); ++i) {
            const double g = st.grad[i];
            st.adam_m[i] = cfg.beta1 * st.adam_m[i] + (1.0 - cfg.beta1) * g;
            st.adam_v[i] = cfg.beta2 * st.adam_v[i] + (1.0 - cfg.beta2) * g * g;
            const double mh = st.adam_m[i] / bc1;
            const double vh = st.adam_v[i] / bc2;
            st.value[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

TrainResult train_loop(const BackboneConfig& cfg, ParamStore& store, const NoiseSchedule& schedule,
                       const ExampleSampler& sampler, const TrainConfig& tc,
                       const std::function<void(int, double)>& on_step) {
    if (tc.iterations <= tc.start_iteration)
        throw ConfigError("train_loop: iterations must exceed the resume point");
    cfg.validate();

    TrainResult result;
    Rng master(tc.seed);
    for (int iter = tc.start_iteration; iter < tc.iterations; ++iter) {
        // stream keyed by iteration only: resume-stable and order-independent
        Rng it_rng = master.fork(static_cast<std::uint64_t>(iter));
        auto [x0, m] = sampler(it_rng);
        TrainingExample ex = make_training_example(x0, m, tc.mode, schedule, it_rng, tc.blur_sigma);

        Tape tape;
        TapeBinding binding = bind_params(tape, store, true);
        Var pred = unet_forward(tape, cfg, binding, ConditioningTuple{ex.x_t, ex.x_m, m, ex.t});
        // supervise the fill task only: context voxels reach the model as an
        // input channel, so they carry no training signal of their own
        Var loss = tape.masked_mse(pred, tape.leaf(ex.eps), m);
        const double loss_val = tape.value(loss)[0];
        if (!std::isfinite(loss_val))
            throw NumericalError("train_loop: loss not finite at iteration " + std::to_string(iter));

        store.zero_grad();
        tape.backward(loss);
        accumulate_grads(tape, binding, store);
        adam_step(store, tc.adam, iter + 1);

        result.final_loss = loss_val;
        if (iter % tc.log_every == 0 || iter + 1 == tc.iterations)
            result.log.push_back({iter, loss_val});
        if (on_step) on_step(iter, loss_val);
    }
    return result;
}

}  // namespace hdiff
