#include "hdiff/tam.hpp"

#include <cmath>

#include "hdiff/errors.hpp"

namespace hdiff {

void init_tam_params(ParamStore& store, const std::string& prefix, int channels, Rng& rng) {
    const int c = channels;
    auto lin = [&](const std::string& n) {
        store.create(prefix + "." + n + ".w", xavier_normal({c, c}, c, c, rng));
        store.create(prefix + "." + n + ".b", Tensor::zeros({c}));
    };
    lin("wq");
    lin("wk");
    lin("wv");
    lin("wo");
    // gated fusion sees the concat of the feature map and the broadcast tokens
    store.create(prefix + ".phi.w", he_normal({c, 2 * c, 3, 3}, 2 * c * 9, rng));
    store.create(prefix + ".phi.b", Tensor::zeros({c}));
    store.create(prefix + ".gate.w", he_normal({c, 2 * c, 3, 3}, 2 * c * 9, rng));
    store.create(prefix + ".gate.b", Tensor::full({c}, 5.0));  // sigmoid(5) ~ 0.9933, near-open gate
    // zero projection => residual block is exact identity until trained
    store.create(prefix + ".proj.w", Tensor::zeros({c, c, 1, 1}));
    store.create(prefix + ".proj.b", Tensor::zeros({c}));
}

TamVars bind_tam(const TapeBinding& b, const std::string& prefix) {
    TamVars v;
    v.wq_w = b[prefix + ".wq.w"];
    v.wq_b = b[prefix + ".wq.b"];
    v.wk_w = b[prefix + ".wk.w"];
    v.wk_b = b[prefix + ".wk.b"];
    v.wv_w = b[prefix + ".wv.w"];
    v.wv_b = b[prefix + ".wv.b"];
    v.wo_w = b[prefix + ".wo.w"];
    v.wo_b = b[prefix + ".wo.b"];
    v.phi_w = b[prefix + ".phi.w"];
    v.phi_b = b[prefix + ".phi.b"];
    v.gate_w = b[prefix + ".gate.w"];
    v.gate_b = b[prefix + ".gate.b"];
    v.proj_w = b[prefix + ".proj.w"];
    v.proj_b = b[prefix + ".proj.b"];
    return v;
}

Var pool_slice_tokens(Tape& t, Var fm) { return t.mean_hw(fm); }

Var cross_slice_attention(Tape& t, Var tokens, int heads, Var wq_w, Var wq_b, Var wk_w, Var wk_b, Var wv_w,
                          Var wv_b, Var wo_w, Var wo_b) {
    const Tensor& tv = t.value(tokens);
    if (tv.ndim() != 2) throw ConfigError("cross_slice_attention: tokens must be rank 2 (B, C)");
    const int B = tv.dim(0), C = tv.dim(1);
    if (heads < 1 || C % heads != 0)
        throw ConfigError("cross_slice_attention: channels " + std::to_string(C) + " not divisible by heads " +
                          std::to_string(heads));
    const int dh = C / heads;

    Var q = t.linear(tokens, wq_w, wq_b);
    Var k = t.linear(tokens, wk_w, wk_b);
    Var v = t.linear(tokens, wv_w, wv_b);

    // (B, C) -> (heads, B, dh)
    auto split = [&](Var x) { return t.permute(t.reshape(x, {B, heads, dh}), {1, 0, 2}); };
    Var qh = split(q), kh = split(k), vh = split(v);

    Var scores = t.scale(t.bmm(qh, t.permute(kh, {0, 2, 1})), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = t.softmax_lastdim(scores);            // (heads, B, B)
    Var ctx = t.bmm(attn, vh);                       // (heads, B, dh)
    Var merged = t.reshape(t.permute(ctx, {1, 0, 2}), {B, C});
    return t.linear(merged, wo_w, wo_b);
}

Var broadcast_tokens(Tape& t, Var tokens, int h, int w) { return t.broadcast_hw(tokens, h, w); }

Var gated_conv(Tape& t, Var x, Var phi_w, Var phi_b, Var gate_w, Var gate_b) {
    Var phi = t.conv2d(x, phi_w, phi_b, 1, 1);
    Var gate = t.sigmoid(t.conv2d(x, gate_w, gate_b, 1, 1));
    return t.mul(phi, gate);
}

Var tam_forward(Tape& t, Var fm, const TamVars& p, int heads) {
    const Tensor& v = t.value(fm);
    if (v.ndim() != 4) throw ConfigError("tam_forward: feature map must be rank 4");
    const int h = v.dim(2), w = v.dim(3);

    Var tokens = pool_slice_tokens(t, fm);
    Var attended = cross_slice_attention(t, tokens, heads, p.wq_w, p.wq_b, p.wk_w, p.wk_b, p.wv_w, p.wv_b,
                                         p.wo_w, p.wo_b);
    Var spread = broadcast_tokens(t, attended, h, w);
    Var fused = gated_conv(t, t.concat_channels(fm, spread), p.phi_w, p.phi_b, p.gate_w, p.gate_b);
    Var proj = t.conv2d(fused, p.proj_w, p.proj_b, 1, 0);
    return t.add(fm, proj);
}

}  // namespace hdiff
