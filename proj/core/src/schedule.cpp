#include "hdiff/schedule.hpp"

#include <string>

#include "hdiff/errors.hpp"

namespace hdiff {

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(T));
    if (!(beta_start > 0.0)) throw ConfigError("schedule: beta_start must be > 0, got " + std::to_string(beta_start));
    if (!(beta_end < 1.0)) throw ConfigError("schedule: beta_end must be < 1, got " + std::to_string(beta_end));
    if (beta_start > beta_end)
        throw ConfigError("schedule: beta_start " + std::to_string(beta_start) + " exceeds beta_end " +
                          std::to_string(beta_end));

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = T == 1 ? beta_start
                           : beta_start + (beta_end - beta_start) * static_cast<double>(t) / static_cast<double>(T - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

}  // namespace hdiff
