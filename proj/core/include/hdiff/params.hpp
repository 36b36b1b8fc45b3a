#ifndef HDIFF_PARAMS_HPP
#define HDIFF_PARAMS_HPP

#include <map>
#include <string>

#include "hdiff/autograd.hpp"
#include "hdiff/tensor.hpp"

namespace hdiff {

// One learnable tensor plus its accumulated gradient and Adam moments. The
// moments live here so a checkpoint carries the full optimizer state.
struct ParamState {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
};

// Named parameters in deterministic (lexicographic) order. Ordering matters:
// iteration order defines both the checkpoint layout and the order random
// initialization draws from the rng.
class ParamStore {
  public:
    Tensor& create(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return items_.count(name) > 0; }
    ParamState& state(const std::string& name);
    const ParamState& state(const std::string& name) const;
    Tensor& value(const std::string& name) { return state(name).value; }
    const Tensor& value(const std::string& name) const { return state(name).value; }

    void zero_grad();
    std::size_t count() const { return items_.size(); }
    std::size_t scalar_count() const;

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

  private:
    std::map<std::string, ParamState> items_;
};

// Parameters registered as tape leaves for one forward/backward pass.
struct TapeBinding {
    Tape* tape = nullptr;
    std::map<std::string, Var> vars;

    Var operator[](const std::string& name) const;
};

TapeBinding bind_params(Tape& tape, const ParamStore& store, bool needs_grad);

// Adds each bound parameter's tape gradient into store.grad. Parameters that
// never saw gradient flow are left untouched.
void accumulate_grads(const Tape& tape, const TapeBinding& binding, ParamStore& store);

// initializers
Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng);
Tensor xavier_normal(std::vector<int> shape, int fan_in, int fan_out, Rng& rng);

}  // namespace hdiff

#endif
