#include "hdiff/params.hpp"

#include <cmath>

#include "hdiff/errors.hpp"

namespace hdiff {

Tensor& ParamStore::create(const std::string& name, Tensor init) {
    if (items_.count(name)) throw ConfigError("parameter already registered: " + name);
    ParamState st;
    st.value = std::move(init);
    st.grad = Tensor::zeros(st.value.shape());
    st.adam_m = Tensor::zeros(st.value.shape());
    st.adam_v = Tensor::zeros(st.value.shape());
    auto [it, ok] = items_.emplace(name, std::move(st));
    (void)ok;
    return it->second.value;
}

ParamState& ParamStore::state(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

const ParamState& ParamStore::state(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, st] : items_) st.grad.fill(0.0);
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, st] : items_) n += st.value.size();
    return n;
}

Var TapeBinding::operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("parameter not bound on tape: " + name);
    return it->second;
}

TapeBinding bind_params(Tape& tape, const ParamStore& store, bool needs_grad) {
    TapeBinding b;
    b.tape = &tape;
    for (const auto& [name, st] : store) b.vars.emplace(name, tape.leaf(st.value, needs_grad));
    return b;
}

void accumulate_grads(const Tape& tape, const TapeBinding& binding, ParamStore& store) {
    for (const auto& [name, var] : binding.vars) {
        const Tensor& g = tape.grad(var);
        if (g.empty()) continue;
        Tensor& acc = store.state(name).grad;
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
}

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::randn(std::move(shape), rng);
    const double s = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
    return t;
}

Tensor xavier_normal(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    Tensor t = Tensor::randn(std::move(shape), rng);
    const double s = std::sqrt(2.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= s;
    return t;
}

}  // namespace hdiff
