#ifndef HDIFF_TAM_HPP
#define HDIFF_TAM_HPP

#include <string>

#include "hdiff/autograd.hpp"
#include "hdiff/params.hpp"
#include "hdiff/rng.hpp"

namespace hdiff {

// Cross-slice attention block. Each slice of a (b, c, h, w) feature map is
// pooled to one token, tokens attend to each other (no positional encoding,
// so the block is permutation-equivariant over slices), the attended tokens
// are broadcast back and fused through a gated convolution. A zero-initialized
// projection plus residual makes the whole block an exact identity at init.

struct TamVars {
    Var wq_w, wq_b, wk_w, wk_b, wv_w, wv_b, wo_w, wo_b;
    Var phi_w, phi_b, gate_w, gate_b;
    Var proj_w, proj_b;
};

// registers all parameters for one block under `prefix.`; channels = c of the
// feature map the block will see
void init_tam_params(ParamStore& store, const std::string& prefix, int channels, Rng& rng);

TamVars bind_tam(const TapeBinding& binding, const std::string& prefix);

// tokens[b, c] = spatial mean of fm[b, c, :, :]
Var pool_slice_tokens(Tape& t, Var fm);

// standard scaled-dot-product multi-head self-attention over the slice axis;
// tokens (B, C) -> (B, C), C divisible by heads
Var cross_slice_attention(Tape& t, Var tokens, int heads, Var wq_w, Var wq_b, Var wk_w, Var wk_b, Var wv_w,
                          Var wv_b, Var wo_w, Var wo_b);

// tokens (B, C) -> (B, C, h, w), every spatial site gets its slice's token
Var broadcast_tokens(Tape& t, Var tokens, int h, int w);

// phi(x) * sigmoid(gate(x)); both 3x3 convs, gate bias initialized to +5
Var gated_conv(Tape& t, Var x, Var phi_w, Var phi_b, Var gate_w, Var gate_b);

// fm + proj(gated_conv(concat(fm, broadcast(attention(pool(fm))))))
Var tam_forward(Tape& t, Var fm, const TamVars& p, int heads);

}  // namespace hdiff

#endif
