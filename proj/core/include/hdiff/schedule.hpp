#ifndef HDIFF_SCHEDULE_HPP
#define HDIFF_SCHEDULE_HPP

#include <vector>

namespace hdiff {

// Per-step diffusion variances and the derived signal-retention products.
// alpha[t] = 1 - beta[t], alpha_bar[t] = prod_{s<=t} alpha[s].
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

// Arithmetic progression from beta_start to beta_end inclusive over T steps.
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);

}  // namespace hdiff

#endif
