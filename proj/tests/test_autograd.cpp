#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "hdiff/autograd.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/tensor.hpp"

using namespace hdiff;

namespace {

using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval_scalar(const BuildFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var loss = f(tape, vars);
    return tape.value(loss)[0];
}

// central finite differences against tape gradients, every element of every input
void check_gradients(const BuildFn& f, std::vector<Tensor> inputs, double h = 1e-5, double tol = 1e-6) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var loss = f(tape, vars);
    tape.backward(loss);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& analytic = tape.grad(vars[k]);
        REQUIRE(!analytic.empty());
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k][i];
            inputs[k][i] = orig + h;
            const double fp = eval_scalar(f, inputs);
            inputs[k][i] = orig - h;
            const double fm = eval_scalar(f, inputs);
            inputs[k][i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[i];
            const double err = std::fabs(fd - an);
            const double bound = tol + 1e-6 * std::max(std::fabs(fd), std::fabs(an));
            INFO("input ", k, " element ", i, " fd=", fd, " analytic=", an);
            CHECK(err <= bound);
        }
    }
}

Var to_scalar(Tape& t, Var y, const Tensor& target) { return t.mse(y, t.leaf(target)); }

}  // namespace

TEST_CASE("autograd elementwise ops") {
    Rng rng(11);
    Tensor a = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({2, 3}, rng);
    Tensor tgt = Tensor::randn({2, 3}, rng);

    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.add(v[0], v[1]), tgt); }, {a, b});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.sub(v[0], v[1]), tgt); }, {a, b});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.mul(v[0], v[1]), tgt); }, {a, b});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.scale(v[0], -1.7), tgt); }, {a});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.silu(v[0]), tgt); }, {a});
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.sigmoid(v[0]), tgt); }, {a});
}

TEST_CASE("autograd conv2d stride 1") {
    Rng rng(12);
    Tensor x = Tensor::randn({2, 2, 5, 4}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
    Tensor bias = Tensor::randn({3}, rng);
    Tensor tgt = Tensor::randn({2, 3, 5, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.conv2d(v[0], v[1], v[2], 1, 1), tgt); },
        {x, w, bias});
}

TEST_CASE("autograd conv2d stride 2") {
    Rng rng(13);
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor w = Tensor::randn({2, 2, 3, 3}, rng);
    Tensor bias = Tensor::randn({2}, rng);
    Tensor tgt = Tensor::randn({1, 2, 3, 3}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.conv2d(v[0], v[1], v[2], 2, 1), tgt); },
        {x, w, bias});
}

TEST_CASE("autograd conv2d forward oracle 1x1") {
    // 1x1 conv equals a per-pixel linear map
    Tape tape;
    Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor w = Tensor::from({1, 2, 1, 1}, {2.0, -1.0});
    Tensor b = Tensor::from({1}, {0.5});
    Var y = tape.conv2d(tape.leaf(x), tape.leaf(w), tape.leaf(b), 1, 0);
    // out = 2*x[c0] - x[c1] + 0.5
    CHECK(tape.value(y).at(0, 0, 0, 0) == doctest::Approx(2 * 1 - 5 + 0.5));
    CHECK(tape.value(y).at(0, 0, 1, 1) == doctest::Approx(2 * 4 - 8 + 0.5));
}

TEST_CASE("autograd depthwise slice conv") {
    Rng rng(14);
    Tensor x = Tensor::randn({4, 3, 2, 2}, rng);
    Tensor k = Tensor::randn({3, 3}, rng);
    Tensor tgt = Tensor::randn({4, 3, 2, 2}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.depthwise_slice_conv(v[0], v[1]), tgt); },
        {x, k});
}

TEST_CASE("autograd group norm") {
    Rng rng(15);
    Tensor x = Tensor::randn({2, 4, 3, 3}, rng);
    Tensor gamma = Tensor::randn({4}, rng);
    Tensor beta = Tensor::randn({4}, rng);
    Tensor tgt = Tensor::randn({2, 4, 3, 3}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.group_norm(v[0], v[1], v[2], 2), tgt); },
        {x, gamma, beta}, 1e-5, 5e-6);
}

TEST_CASE("autograd linear and matmul") {
    Rng rng(16);
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor w = Tensor::randn({2, 4}, rng);
    Tensor b = Tensor::randn({2}, rng);
    Tensor tgt = Tensor::randn({3, 2}, rng);
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.linear(v[0], v[1], v[2]), tgt); },
                    {x, w, b});

    Tensor a2 = Tensor::randn({3, 4}, rng);
    Tensor b2 = Tensor::randn({4, 2}, rng);
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.matmul(v[0], v[1]), tgt); },
                    {a2, b2});

    Tensor a3 = Tensor::randn({2, 3, 4}, rng);
    Tensor b3 = Tensor::randn({2, 4, 2}, rng);
    Tensor tgt3 = Tensor::randn({2, 3, 2}, rng);
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.bmm(v[0], v[1]), tgt3); },
                    {a3, b3});
}

TEST_CASE("autograd permute reshape softmax") {
    Rng rng(17);
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    Tensor tgt = Tensor::randn({4, 2, 3}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.permute(v[0], {2, 0, 1}), tgt); }, {x});

    Tensor tgt2 = Tensor::randn({6, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.reshape(v[0], {6, 4}), tgt2); }, {x});

    Tensor tgt3 = Tensor::randn({2, 3, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.softmax_lastdim(v[0]), tgt3); }, {x});
}

TEST_CASE("autograd permute forward oracle") {
    Tape tape;
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Var y = tape.permute(tape.leaf(x), {1, 0});
    CHECK(tape.value(y).at(0, 0) == 1);
    CHECK(tape.value(y).at(1, 0) == 2);
    CHECK(tape.value(y).at(2, 1) == 6);
}

TEST_CASE("autograd feature map helpers") {
    Rng rng(18);
    Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor y2 = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor tok = Tensor::randn({2, 3}, rng);
    Tensor v1 = Tensor::randn({3}, rng);

    Tensor tgt_cat = Tensor::randn({2, 6, 4, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.concat_channels(v[0], v[1]), tgt_cat); },
        {x, y2});

    Tensor tgt_tok = Tensor::randn({2, 3}, rng);
    check_gradients([&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.mean_hw(v[0]), tgt_tok); }, {x});

    Tensor tgt_bc = Tensor::randn({2, 3, 4, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.broadcast_hw(v[0], 4, 4), tgt_bc); }, {tok});

    Tensor tgt_up = Tensor::randn({2, 3, 8, 8}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.upsample_nearest2x(v[0]), tgt_up); }, {x});

    Tensor tgt_cv = Tensor::randn({2, 3, 4, 4}, rng);
    check_gradients(
        [&](Tape& t, const std::vector<Var>& v) { return to_scalar(t, t.add_channel_vec(v[0], v[1]), tgt_cv); },
        {x, v1});
}

TEST_CASE("autograd mse value and gradient") {
    Tape tape;
    Tensor p = Tensor::from({4}, {1, 2, 3, 4});
    Tensor q = Tensor::from({4}, {1, 1, 1, 1});
    Var pv = tape.leaf(p, true);
    Var loss = tape.mse(pv, tape.leaf(q));
    CHECK(tape.value(loss)[0] == doctest::Approx((0.0 + 1.0 + 4.0 + 9.0) / 4.0));
    tape.backward(loss);
    CHECK(tape.grad(pv)[1] == doctest::Approx(2.0 * 1.0 / 4.0));
}

TEST_CASE("autograd constant leaves receive no gradient work") {
    Tape tape;
    Tensor x = Tensor::from({2}, {1.0, 2.0});
    Var c = tape.leaf(x, false);
    Var p = tape.leaf(x, true);
    Var loss = tape.mse(tape.mul(c, p), tape.leaf(Tensor::zeros({2})));
    tape.backward(loss);
    CHECK(tape.grad(c).empty());
    CHECK(!tape.grad(p).empty());
}
