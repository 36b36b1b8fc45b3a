#include "hdiff/backbone.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "hdiff/errors.hpp"
#include "hdiff/tam.hpp"

namespace hdiff {

void BackboneConfig::validate() const {
    if (base_channels < 1) throw ConfigError("backbone: base_channels must be >= 1");
    if (channel_multipliers.size() < 2) throw ConfigError("backbone: need at least 2 resolutions");
    for (int m : channel_multipliers)
        if (m < 1) throw ConfigError("backbone: channel multipliers must be >= 1");
    if (timestep_embedding_dim < 2 || timestep_embedding_dim % 2 != 0)
        throw ConfigError("backbone: timestep_embedding_dim must be even and >= 2");
    if (conditioning_channels < 1) throw ConfigError("backbone: conditioning_channels must be >= 1");
    if (norm_groups < 1) throw ConfigError("backbone: norm_groups must be >= 1");
    for (int l = 0; l < num_resolutions(); ++l)
        if (channels_at(l) % norm_groups != 0)
            throw ConfigError("backbone: norm_groups " + std::to_string(norm_groups) +
                              " does not divide channel count " + std::to_string(channels_at(l)));
    if (depthwise_width < 1 || depthwise_width % 2 == 0)
        throw ConfigError("backbone: depthwise_width must be odd");
    if (use_tam) {
        const int L = num_resolutions();
        for (int l : {L - 2, L - 1})
            if (channels_at(l) % attention_heads != 0)
                throw ConfigError("backbone: attention_heads " + std::to_string(attention_heads) +
                                  " does not divide channel count " + std::to_string(channels_at(l)));
    }
}

Tensor timestep_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Tensor out({dim});
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        out[i] = std::sin(t * freq);
        out[half + i] = std::cos(t * freq);
    }
    return out;
}

Tensor init_dirac(int channels, int width) {
    if (width < 1 || width % 2 == 0) throw ConfigError("init_dirac: width must be odd");
    Tensor k = Tensor::zeros({channels, width});
    for (int c = 0; c < channels; ++c) k.at(c, width / 2) = 1.0;
    return k;
}

Tensor depthwise_slice_conv(const Tensor& fm, const Tensor& kernel) {
    Tape tape;
    return tape.value(tape.depthwise_slice_conv(tape.leaf(fm), tape.leaf(kernel)));
}

namespace {

struct BlockPlan {
    std::string prefix;
    int in_ch = 0;
    int out_ch = 0;
    bool tam = false;
};

struct Plan {
    std::vector<BlockPlan> enc;  // levels 0 .. L-2
    BlockPlan mid;
    std::vector<BlockPlan> dec;  // decoder order: levels L-2 .. 0
};

Plan make_plan(const BackboneConfig& cfg) {
    const int L = cfg.num_resolutions();
    Plan p;
    for (int l = 0; l <= L - 2; ++l) {
        BlockPlan b;
        b.prefix = "enc" + std::to_string(l);
        b.in_ch = (l == 0) ? cfg.channels_at(0) : cfg.channels_at(l - 1);
        b.out_ch = cfg.channels_at(l);
        b.tam = cfg.use_tam && l >= L - 2;
        p.enc.push_back(b);
    }
    p.mid = {"mid", cfg.channels_at(L - 2), cfg.channels_at(L - 1), cfg.use_tam};
    for (int l = L - 2; l >= 0; --l) {
        BlockPlan b;
        b.prefix = "dec" + std::to_string(l);
        b.in_ch = cfg.channels_at(l + 1) + cfg.channels_at(l);  // upsampled + skip
        b.out_ch = cfg.channels_at(l);
        b.tam = cfg.use_tam && l >= L - 2;
        p.dec.push_back(b);
    }
    return p;
}

void init_res_block(const BackboneConfig& cfg, ParamStore& s, const BlockPlan& b, Rng& rng) {
    const std::string p = b.prefix + ".res.";
    const int ci = b.in_ch, co = b.out_ch, D = cfg.timestep_embedding_dim;
    s.create(p + "gn1.g", Tensor::full({ci}, 1.0));
    s.create(p + "gn1.b", Tensor::zeros({ci}));
    s.create(p + "conv1.w", he_normal({co, ci, 3, 3}, ci * 9, rng));
    s.create(p + "conv1.b", Tensor::zeros({co}));
    s.create(p + "temb.w", xavier_normal({co, D}, D, co, rng));
    s.create(p + "temb.b", Tensor::zeros({co}));
    s.create(p + "gn2.g", Tensor::full({co}, 1.0));
    s.create(p + "gn2.b", Tensor::zeros({co}));
    s.create(p + "conv2.w", he_normal({co, co, 3, 3}, co * 9, rng));
    s.create(p + "conv2.b", Tensor::zeros({co}));
    if (ci != co) {
        s.create(p + "skip.w", he_normal({co, ci, 1, 1}, ci, rng));
        s.create(p + "skip.b", Tensor::zeros({co}));
    }
}

void init_block(const BackboneConfig& cfg, ParamStore& s, const BlockPlan& b, Rng& rng) {
    init_res_block(cfg, s, b, rng);
    s.create(b.prefix + ".dw.k", init_dirac(b.out_ch, cfg.depthwise_width));
    if (b.tam) init_tam_params(s, b.prefix + ".tam", b.out_ch, rng);
}

Var res_block(Tape& t, const BackboneConfig& cfg, const TapeBinding& P, const BlockPlan& b, Var x, Var temb_row) {
    const std::string p = b.prefix + ".res.";
    Var h = t.group_norm(x, P[p + "gn1.g"], P[p + "gn1.b"], cfg.norm_groups);
    h = t.conv2d(t.silu(h), P[p + "conv1.w"], P[p + "conv1.b"], 1, 1);
    Var tv = t.reshape(t.linear(temb_row, P[p + "temb.w"], P[p + "temb.b"]), {b.out_ch});
    h = t.add_channel_vec(h, tv);
    h = t.group_norm(h, P[p + "gn2.g"], P[p + "gn2.b"], cfg.norm_groups);
    h = t.conv2d(t.silu(h), P[p + "conv2.w"], P[p + "conv2.b"], 1, 1);
    Var skip = (b.in_ch == b.out_ch) ? x : t.conv2d(x, P[p + "skip.w"], P[p + "skip.b"], 1, 0);
    return t.add(skip, h);
}

Var run_block(Tape& t, const BackboneConfig& cfg, const TapeBinding& P, const BlockPlan& b, Var x, Var temb_row) {
    Var h = res_block(t, cfg, P, b, x, temb_row);
    if (cfg.use_depthwise) h = t.depthwise_slice_conv(h, P[b.prefix + ".dw.k"]);
    if (b.tam) h = tam_forward(t, h, bind_tam(P, b.prefix + ".tam"), cfg.attention_heads);
    return h;
}

}  // namespace

void init_backbone_params(const BackboneConfig& cfg, ParamStore& store, Rng& rng) {
    cfg.validate();
    const Plan plan = make_plan(cfg);
    const int D = cfg.timestep_embedding_dim;

    store.create("temb.l1.w", xavier_normal({D, D}, D, D, rng));
    store.create("temb.l1.b", Tensor::zeros({D}));
    store.create("temb.l2.w", xavier_normal({D, D}, D, D, rng));
    store.create("temb.l2.b", Tensor::zeros({D}));

    store.create("conv_in.w",
                 he_normal({cfg.channels_at(0), cfg.conditioning_channels, 3, 3}, cfg.conditioning_channels * 9, rng));
    store.create("conv_in.b", Tensor::zeros({cfg.channels_at(0)}));

    for (std::size_t i = 0; i < plan.enc.size(); ++i) {
        init_block(cfg, store, plan.enc[i], rng);
        const int c = plan.enc[i].out_ch;
        store.create("down" + std::to_string(i) + ".w", he_normal({c, c, 3, 3}, c * 9, rng));
        store.create("down" + std::to_string(i) + ".b", Tensor::zeros({c}));
    }
    init_block(cfg, store, plan.mid, rng);
    for (const auto& d : plan.dec) {
        const int cu = d.in_ch - d.out_ch;  // channels arriving from below, pre-concat
        const std::string l = d.prefix.substr(3);
        store.create("up" + l + ".w", he_normal({cu, cu, 3, 3}, cu * 9, rng));
        store.create("up" + l + ".b", Tensor::zeros({cu}));
        init_block(cfg, store, d, rng);
    }

    store.create("head.gn.g", Tensor::full({cfg.channels_at(0)}, 1.0));
    store.create("head.gn.b", Tensor::zeros({cfg.channels_at(0)}));
    // zero head: the untrained network predicts zero noise
    store.create("head.conv.w", Tensor::zeros({1, cfg.channels_at(0), 3, 3}));
    store.create("head.conv.b", Tensor::zeros({1}));
}

Var unet_forward(Tape& t, const BackboneConfig& cfg, const TapeBinding& P, const ConditioningTuple& cond) {
    cfg.validate();
    cond.validate();
    const Tensor& xt = cond.x_t;
    const int L = cfg.num_resolutions();
    const int div = 1 << (L - 1);
    if (xt.dim(2) % div != 0 || xt.dim(3) % div != 0)
        throw ConfigError("backbone: spatial dims " + std::to_string(xt.dim(2)) + "x" + std::to_string(xt.dim(3)) +
                          " not divisible by " + std::to_string(div));
    if (xt.dim(1) * 3 != cfg.conditioning_channels)
        throw ConfigError("backbone: conditioning_channels must be 3x image channels");

    const Plan plan = make_plan(cfg);

    Var temb = t.reshape(t.leaf(timestep_embedding(cond.t, cfg.timestep_embedding_dim)),
                         {1, cfg.timestep_embedding_dim});
    temb = t.linear(temb, P["temb.l1.w"], P["temb.l1.b"]);
    temb = t.linear(t.silu(temb), P["temb.l2.w"], P["temb.l2.b"]);

    Var x = t.concat_channels(t.concat_channels(t.leaf(cond.x_t), t.leaf(cond.x_m)), t.leaf(cond.m));
    Var h = t.conv2d(x, P["conv_in.w"], P["conv_in.b"], 1, 1);

    std::vector<Var> skips;
    for (std::size_t i = 0; i < plan.enc.size(); ++i) {
        h = run_block(t, cfg, P, plan.enc[i], h, temb);
        skips.push_back(h);
        h = t.conv2d(h, P["down" + std::to_string(i) + ".w"], P["down" + std::to_string(i) + ".b"], 2, 1);
    }
    h = run_block(t, cfg, P, plan.mid, h, temb);
    for (const auto& d : plan.dec) {
        const std::string l = d.prefix.substr(3);
        h = t.upsample_nearest2x(h);
        h = t.conv2d(h, P["up" + l + ".w"], P["up" + l + ".b"], 1, 1);
        h = t.concat_channels(h, skips[static_cast<std::size_t>(std::stoi(l))]);
        h = run_block(t, cfg, P, d, h, temb);
    }

    h = t.group_norm(h, P["head.gn.g"], P["head.gn.b"], cfg.norm_groups);
    h = t.conv2d(t.silu(h), P["head.conv.w"], P["head.conv.b"], 1, 1);
    return h;
}

Tensor unet_predict(const BackboneConfig& cfg, const ParamStore& store, const ConditioningTuple& cond) {
    Tape tape;
    TapeBinding binding = bind_params(tape, store, false);
    Var out = unet_forward(tape, cfg, binding, cond);
    Tensor result = tape.value(out);
    if (!result.all_finite())
        throw NumericalError("backbone: non-finite output at t=" + std::to_string(cond.t));
    return result;
}

DenoiserFn as_denoiser(const BackboneConfig& cfg, const ParamStore& store) {
    const ParamStore* sp = &store;  // caller keeps the store alive for the denoiser's lifetime
    return [cfg, sp](const Tensor& x_t, const Tensor& x_m, const Tensor& m, int t) {
        ConditioningTuple cond{x_t, x_m, m, t};
        return unet_predict(cfg, *sp, cond);
    };
}

}  // namespace hdiff
