#include "hdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

void check_binary_mask(const Tensor& m) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i] != 0.0 && m[i] != 1.0)
            throw DataError("mask must be binary {0,1}, found " + std::to_string(m[i]));
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

// reflect indexing: -1 -> 0, -2 -> 1, n -> n-1
int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace

void ConditioningTuple::validate() const {
    if (!x_t.same_shape(x_m) || !x_t.same_shape(m))
        throw DataError("conditioning tuple: x_t, x_m, m must share shape");
    check_binary_mask(m);
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    if (!x0.same_shape(eps)) throw DataError("forward_diffuse: eps shape differs from x0");
    if (t < 0 || t >= schedule.T)
        throw ConfigError("forward_diffuse: t=" + std::to_string(t) + " outside [0, " + std::to_string(schedule.T) + ")");
    const double abar = schedule.alpha_bar[t];
    const double cs = std::sqrt(abar);
    const double cn = std::sqrt(1.0 - abar);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cs * x0[i] + cn * eps[i];
    return out;
}

Tensor build_context_inpaint(const Tensor& x0, const Tensor& m) {
    if (!x0.same_shape(m)) throw DataError("build_context_inpaint: mask shape differs from x0");
    check_binary_mask(m);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0[i] * (1.0 - m[i]);
    return out;
}

Tensor gaussian_blur_slices(const Tensor& stack, double sigma) {
    if (stack.ndim() != 4) throw ConfigError("gaussian_blur_slices: rank-4 stack required");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_blur_slices: sigma must be > 0");
    const int B = stack.dim(0), C = stack.dim(1), H = stack.dim(2), W = stack.dim(3);
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);

    Tensor tmp(stack.shape());
    // horizontal pass
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int j = -radius; j <= radius; ++j)
                        acc += k[j + radius] * stack.at(b, c, y, reflect(x + j, W));
                    tmp.at(b, c, y, x) = acc;
                }
    // vertical pass
    Tensor out(stack.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int j = -radius; j <= radius; ++j)
                        acc += k[j + radius] * tmp.at(b, c, reflect(y + j, H), x);
                    out.at(b, c, y, x) = acc;
                }
    return out;
}

Tensor build_context_refine(const Tensor& x0, const Tensor& m, double blur_sigma) {
    if (!x0.same_shape(m)) throw DataError("build_context_refine: mask shape differs from x0");
    check_binary_mask(m);
    Tensor blurred = gaussian_blur_slices(x0, blur_sigma);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = blurred[i] * m[i] + x0[i] * (1.0 - m[i]);
    return out;
}

TrainingExample make_training_example(const Tensor& x0, const Tensor& m, ContextMode mode,
                                      const NoiseSchedule& schedule, Rng& rng, double blur_sigma) {
    TrainingExample ex;
    ex.t = static_cast<int>(rng.uniform_int(schedule.T));
    ex.eps = Tensor::randn(x0.shape(), rng);
    ex.x_t = forward_diffuse(x0, ex.t, ex.eps, schedule);
    ex.x_m = mode == ContextMode::Inpaint ? build_context_inpaint(x0, m) : build_context_refine(x0, m, blur_sigma);
    return ex;
}

double training_loss(const DenoiserFn& denoiser, const Tensor& x0, const Tensor& m, ContextMode mode,
                     const NoiseSchedule& schedule, Rng& rng, double blur_sigma) {
    TrainingExample ex = make_training_example(x0, m, mode, schedule, rng, blur_sigma);
    Tensor pred = denoiser(ex.x_t, ex.x_m, m, ex.t);
    if (!pred.same_shape(ex.eps)) throw DataError("training_loss: denoiser output shape differs from noise");
    if (!pred.all_finite())
        throw NumericalError("training_loss: non-finite denoiser output at t=" + std::to_string(ex.t));
    // mean over the masked region only: the model is supervised on the fill
    // task, while context voxels are an input, not a target
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (m[i] == 0.0) continue;
        const double d = ex.eps[i] - pred[i];
        s += d * d;
        ++cnt;
    }
    return cnt > 0 ? s / static_cast<double>(cnt) : 0.0;
}

Tensor sample_inpaint(const DenoiserFn& denoiser, const Tensor& x0, const Tensor& m, const NoiseSchedule& schedule,
                      Rng& rng, int steps, const Tensor* context_override, double x0_clip) {
    if (!x0.same_shape(m)) throw DataError("sample_inpaint: mask shape differs from x0");
    check_binary_mask(m);
    if (steps < 1 || steps > schedule.T)
        throw ConfigError("sample_inpaint: steps=" + std::to_string(steps) + " outside [1, " +
                          std::to_string(schedule.T) + "]");
    if (x0_clip < 0.0) throw ConfigError("sample_inpaint: x0_clip must be >= 0");
    Tensor context = context_override ? *context_override : build_context_inpaint(x0, m);
    if (!context.same_shape(x0)) throw DataError("sample_inpaint: context shape differs from x0");

    Tensor x = Tensor::randn(x0.shape(), rng);
    for (int t = steps - 1; t >= 0; --t) {
        const double beta = schedule.beta[t];
        const double alpha = schedule.alpha[t];
        const double abar = schedule.alpha_bar[t];
        const double abar_prev = t > 0 ? schedule.alpha_bar[t - 1] : 1.0;
        const double sq_abar = std::sqrt(abar);
        const double sq_1m_abar = std::sqrt(1.0 - abar);
        const double c_x = std::sqrt(alpha) * (1.0 - abar_prev) / (1.0 - abar);
        const double c_0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
        const double sigma = std::sqrt(beta);

        // anchor the known region: training always pairs the conditioning
        // with a noised copy of the true content outside the mask, so keep
        // inference on that distribution by re-projecting unmasked voxels
        // onto the forward marginal at every step instead of free-running
        for (std::size_t i = 0; i < x.size(); ++i)
            if (m[i] == 0.0) x[i] = sq_abar * x0[i] + sq_1m_abar * rng.normal();

        Tensor eps_hat = denoiser(x, context, m, t);
        if (!eps_hat.same_shape(x)) throw DataError("sample_inpaint: denoiser output shape mismatch");
        // posterior-mean form of the ancestral update: recover the implied
        // clean image, optionally clamp it to the data range, then take the
        // exact posterior q(x_{t-1} | x_t, x0_hat). With no clamp this is
        // algebraically the usual 1/sqrt(alpha) * (x - beta/sqrt(1-abar) eps)
        for (std::size_t i = 0; i < x.size(); ++i) {
            double x0_hat = (x[i] - sq_1m_abar * eps_hat[i]) / sq_abar;
            if (x0_clip > 0.0) x0_hat = std::clamp(x0_hat, -x0_clip, x0_clip);
            const double mean = c_x * x[i] + c_0 * x0_hat;
            x[i] = t > 0 ? mean + sigma * rng.normal() : mean;
        }
        if (!x.all_finite()) throw NumericalError("sample_inpaint: NaN at step t=" + std::to_string(t));
    }

    // final composite, unmasked voxels come from the input verbatim
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] == 0.0 ? x0[i] : x[i];
    return out;
}

}  // namespace hdiff
