#include "hdiff/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace

int Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

Var Tape::leaf(Tensor value, bool needs_grad) {
    return Var{push(std::move(value), needs_grad, nullptr)};
}

void Tape::backward(Var loss) {
    if (value(loss).size() != 1) throw ConfigError("backward: loss must be scalar");
    grad_buf(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.back && n.needs_grad && !n.grad.empty()) n.back(*this);
    }
}

Var Tape::add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ConfigError("add: shape mismatch");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    };
    return Var{id};
}

Var Tape::sub(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ConfigError("sub: shape mismatch");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    };
    return Var{id};
}

Var Tape::mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) throw ConfigError("mul: shape mismatch");
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
        }
    };
    return Var{id};
}

Var Tape::scale(Var a, double c) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, c, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    };
    return Var{id};
}

Var Tape::sigmoid(Var a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor& ga = t.grad_buf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return Var{id};
}

Var Tape::silu(Var a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-av[i]));
        out[i] = av[i] * s;
    }
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& x = t.value(a);
        Tensor& ga = t.grad_buf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-x[i]));
            ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    };
    return Var{id};
}

Var Tape::conv2d(Var x, Var w, Var bias, int stride, int pad) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(bias);
    if (xv.ndim() != 4 || wv.ndim() != 4) throw ConfigError("conv2d: rank-4 input and weight required");
    const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int Co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    if (wv.dim(1) != Ci) throw ConfigError("conv2d: channel mismatch");
    if (bv.ndim() != 1 || bv.dim(0) != Co) throw ConfigError("conv2d: bias shape mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ConfigError("conv2d: output would be empty");

    Tensor out({B, Co, Ho, Wo});
    const double* xp = xv.data();
    const double* wp = wv.data();
    double* op = out.data();
    const std::size_t x_plane = static_cast<std::size_t>(H) * W;
    const std::size_t o_plane = static_cast<std::size_t>(Ho) * Wo;
    for (int b = 0; b < B; ++b) {
        for (int oc = 0; oc < Co; ++oc) {
            double* outp = op + (static_cast<std::size_t>(b) * Co + oc) * o_plane;
            const double bval = bv[oc];
            for (std::size_t i = 0; i < o_plane; ++i) outp[i] = bval;
            for (int ic = 0; ic < Ci; ++ic) {
                const double* inp = xp + (static_cast<std::size_t>(b) * Ci + ic) * x_plane;
                const double* wrow = wp + ((static_cast<std::size_t>(oc) * Ci + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        // note: zero weights are NOT skipped so NaN/inf inputs
                        // propagate to the output instead of being laundered
                        const double wval = wrow[ky * kw + kx];
                        // valid ox range: 0 <= ox*stride + kx - pad < W
                        int ox_lo = 0, ox_hi = Wo;
                        while (ox_lo < Wo && ox_lo * stride + kx - pad < 0) ++ox_lo;
                        while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= W) --ox_hi;
                        for (int oy = 0; oy < Ho; ++oy) {
                            const int iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= H) continue;
                            const double* in_row = inp + static_cast<std::size_t>(iy) * W + (kx - pad);
                            double* out_row = outp + static_cast<std::size_t>(oy) * Wo;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] += wval * in_row[ox];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    out_row[ox] += wval * in_row[static_cast<std::size_t>(ox) * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    int id = push(std::move(out), needs(x.id) || needs(w.id) || needs(bias.id), nullptr);
    nodes_[id].back = [x, w, bias, stride, pad, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& xv2 = t.value(x);
        const Tensor& wv2 = t.value(w);
        const int B = xv2.dim(0), Ci = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
        const int Co = wv2.dim(0), kh = wv2.dim(2), kw = wv2.dim(3);
        const int Ho = g.dim(2), Wo = g.dim(3);
        const std::size_t x_plane = static_cast<std::size_t>(H) * W;
        const std::size_t o_plane = static_cast<std::size_t>(Ho) * Wo;
        const double* gp = g.data();
        const double* xp = xv2.data();
        const double* wp = wv2.data();

        if (t.needs(bias.id)) {
            Tensor& gb = t.grad_buf(bias.id);
            for (int b = 0; b < B; ++b)
                for (int oc = 0; oc < Co; ++oc) {
                    const double* gid = gp + (static_cast<std::size_t>(b) * Co + oc) * o_plane;
                    double s = 0.0;
                    for (std::size_t i = 0; i < o_plane; ++i) s += gid[i];
                    gb[oc] += s;
                }
        }
        if (t.needs(w.id)) {
            Tensor& gw = t.grad_buf(w.id);
            double* gwp = gw.data();
            for (int oc = 0; oc < Co; ++oc) {
                for (int ic = 0; ic < Ci; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        for (int kx = 0; kx < kw; ++kx) {
                            int ox_lo = 0, ox_hi = Wo;
                            while (ox_lo < Wo && ox_lo * stride + kx - pad < 0) ++ox_lo;
                            while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= W) --ox_hi;
                            double acc = 0.0;
                            for (int b = 0; b < B; ++b) {
                                const double* gplane = gp + (static_cast<std::size_t>(b) * Co + oc) * o_plane;
                                const double* xplane = xp + (static_cast<std::size_t>(b) * Ci + ic) * x_plane;
                                for (int oy = 0; oy < Ho; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = gplane + static_cast<std::size_t>(oy) * Wo;
                                    const double* xrow = xplane + static_cast<std::size_t>(iy) * W + (kx - pad);
                                    if (stride == 1) {
                                        for (int ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * xrow[ox];
                                    } else {
                                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                                            acc += grow[ox] * xrow[static_cast<std::size_t>(ox) * stride];
                                    }
                                }
                            }
                            gwp[((static_cast<std::size_t>(oc) * Ci + ic) * kh + ky) * kw + kx] += acc;
                        }
                    }
                }
            }
        }
        if (t.needs(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            double* gxp = gx.data();
            for (int b = 0; b < B; ++b) {
                for (int oc = 0; oc < Co; ++oc) {
                    const double* gplane = gp + (static_cast<std::size_t>(b) * Co + oc) * o_plane;
                    for (int ic = 0; ic < Ci; ++ic) {
                        double* gxplane = gxp + (static_cast<std::size_t>(b) * Ci + ic) * x_plane;
                        const double* wrow = wp + ((static_cast<std::size_t>(oc) * Ci + ic) * kh) * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wval = wrow[ky * kw + kx];
                                if (wval == 0.0) continue;
                                int ox_lo = 0, ox_hi = Wo;
                                while (ox_lo < Wo && ox_lo * stride + kx - pad < 0) ++ox_lo;
                                while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= W) --ox_hi;
                                for (int oy = 0; oy < Ho; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* grow = gplane + static_cast<std::size_t>(oy) * Wo;
                                    double* gxrow = gxplane + static_cast<std::size_t>(iy) * W + (kx - pad);
                                    if (stride == 1) {
                                        for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wval * grow[ox];
                                    } else {
                                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                                            gxrow[static_cast<std::size_t>(ox) * stride] += wval * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return Var{id};
}

Var Tape::depthwise_slice_conv(Var x, Var k) {
    const Tensor& xv = value(x);
    const Tensor& kv = value(k);
    if (xv.ndim() != 4) throw ConfigError("depthwise_slice_conv: rank-4 input required");
    if (kv.ndim() != 2) throw ConfigError("depthwise_slice_conv: kernel must be (channels, width)");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const int K = kv.dim(1);
    if (kv.dim(0) != C) throw ConfigError("depthwise_slice_conv: kernel channel count mismatch");
    if (K % 2 == 0) throw ConfigError("depthwise_slice_conv: kernel width must be odd, got " + std::to_string(K));
    const int c0 = K / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    Tensor out({B, C, H, W});
    const double* xp = xv.data();
    double* op = out.data();
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < C; ++c) {
            double* outp = op + (static_cast<std::size_t>(b) * C + c) * plane;
            for (int j = 0; j < K; ++j) {
                const int bs = b + j - c0;
                if (bs < 0 || bs >= B) continue;  // zero padding along the slice axis
                // zero taps still multiply so NaN/inf inputs stay visible
                const double kval = kv.at(c, j);
                const double* inp = xp + (static_cast<std::size_t>(bs) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) outp[i] += kval * inp[i];
            }
        }
    }

    int id = push(std::move(out), needs(x.id) || needs(k.id), nullptr);
    nodes_[id].back = [x, k, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& xv2 = t.value(x);
        const Tensor& kv2 = t.value(k);
        const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
        const int K = kv2.dim(1);
        const int c0 = K / 2;
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const double* gp = g.data();
        const double* xp = xv2.data();
        if (t.needs(k.id)) {
            Tensor& gk = t.grad_buf(k.id);
            for (int c = 0; c < C; ++c) {
                for (int j = 0; j < K; ++j) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) {
                        const int bs = b + j - c0;
                        if (bs < 0 || bs >= B) continue;
                        const double* grow = gp + (static_cast<std::size_t>(b) * C + c) * plane;
                        const double* xrow = xp + (static_cast<std::size_t>(bs) * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) acc += grow[i] * xrow[i];
                    }
                    gk.at(c, j) += acc;
                }
            }
        }
        if (t.needs(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            double* gxp = gx.data();
            for (int b = 0; b < B; ++b) {
                for (int c = 0; c < C; ++c) {
                    double* gxrow = gxp + (static_cast<std::size_t>(b) * C + c) * plane;
                    for (int j = 0; j < K; ++j) {
                        const int bo = b - (j - c0);
                        if (bo < 0 || bo >= B) continue;
                        const double kval = kv2.at(c, j);
                        if (kval == 0.0) continue;
                        const double* grow = gp + (static_cast<std::size_t>(bo) * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) gxrow[i] += kval * grow[i];
                    }
                }
            }
        }
    };
    return Var{id};
}

Var Tape::group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
    const Tensor& xv = value(x);
    if (xv.ndim() != 4) throw ConfigError("group_norm: rank-4 input required");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    if (groups <= 0 || C % groups != 0) throw ConfigError("group_norm: channels not divisible by groups");
    const int cg = C / groups;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t gsize = static_cast<std::size_t>(cg) * plane;

    Tensor out({B, C, H, W});
    // per (b, group) statistics, needed again in backward
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(B) * groups * 2);
    const double* xp = xv.data();
    double* op = out.data();
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    for (int b = 0; b < B; ++b) {
        for (int g = 0; g < groups; ++g) {
            const double* base = xp + (static_cast<std::size_t>(b) * C + static_cast<std::size_t>(g) * cg) * plane;
            double mean = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) mean += base[i];
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) {
                const double d = base[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(gsize);
            const double inv_std = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<std::size_t>(b) * groups + g) * 2] = mean;
            (*stats)[(static_cast<std::size_t>(b) * groups + g) * 2 + 1] = inv_std;
            for (int cc = 0; cc < cg; ++cc) {
                const int c = g * cg + cc;
                const double* in_c = xp + (static_cast<std::size_t>(b) * C + c) * plane;
                double* out_c = op + (static_cast<std::size_t>(b) * C + c) * plane;
                const double ga = gv[c], be = bv[c];
                for (std::size_t i = 0; i < plane; ++i) out_c[i] = (in_c[i] - mean) * inv_std * ga + be;
            }
        }
    }

    int id = push(std::move(out), needs(x.id) || needs(gamma.id) || needs(beta.id), nullptr);
    nodes_[id].back = [x, gamma, beta, groups, stats, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& xv2 = t.value(x);
        const Tensor& gv2 = t.value(gamma);
        const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
        const int cg = C / groups;
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        const std::size_t gsize = static_cast<std::size_t>(cg) * plane;
        const double* xp = xv2.data();
        const double* gp = g.data();

        if (t.needs(gamma.id) || t.needs(beta.id)) {
            Tensor* ggamma = t.needs(gamma.id) ? &t.grad_buf(gamma.id) : nullptr;
            Tensor* gbeta = t.needs(beta.id) ? &t.grad_buf(beta.id) : nullptr;
            for (int c = 0; c < C; ++c) {
                const int grp = c / cg;
                double sg = 0.0, sb = 0.0;
                for (int b = 0; b < B; ++b) {
                    const double mean = (*stats)[(static_cast<std::size_t>(b) * groups + grp) * 2];
                    const double inv_std = (*stats)[(static_cast<std::size_t>(b) * groups + grp) * 2 + 1];
                    const double* xrow = xp + (static_cast<std::size_t>(b) * C + c) * plane;
                    const double* grow = gp + (static_cast<std::size_t>(b) * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sg += grow[i] * (xrow[i] - mean) * inv_std;
                        sb += grow[i];
                    }
                }
                if (ggamma) (*ggamma)[c] += sg;
                if (gbeta) (*gbeta)[c] += sb;
            }
        }
        if (t.needs(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            double* gxp = gx.data();
            for (int b = 0; b < B; ++b) {
                for (int grp = 0; grp < groups; ++grp) {
                    const double mean = (*stats)[(static_cast<std::size_t>(b) * groups + grp) * 2];
                    const double inv_std = (*stats)[(static_cast<std::size_t>(b) * groups + grp) * 2 + 1];
                    // a = dy * gamma; dx = inv_std * (a - mean(a) - xhat * mean(a*xhat))
                    double m1 = 0.0, m2 = 0.0;
                    for (int cc = 0; cc < cg; ++cc) {
                        const int c = grp * cg + cc;
                        const double ga = gv2[c];
                        const double* xrow = xp + (static_cast<std::size_t>(b) * C + c) * plane;
                        const double* grow = gp + (static_cast<std::size_t>(b) * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double a = grow[i] * ga;
                            m1 += a;
                            m2 += a * (xrow[i] - mean) * inv_std;
                        }
                    }
                    m1 /= static_cast<double>(gsize);
                    m2 /= static_cast<double>(gsize);
                    for (int cc = 0; cc < cg; ++cc) {
                        const int c = grp * cg + cc;
                        const double ga = gv2[c];
                        const double* xrow = xp + (static_cast<std::size_t>(b) * C + c) * plane;
                        const double* grow = gp + (static_cast<std::size_t>(b) * C + c) * plane;
                        double* gxrow = gxp + (static_cast<std::size_t>(b) * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double xhat = (xrow[i] - mean) * inv_std;
                            gxrow[i] += inv_std * (grow[i] * ga - m1 - xhat * m2);
                        }
                    }
                }
            }
        }
    };
    return Var{id};
}

Var Tape::linear(Var x, Var w, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const Tensor& bv = value(bias);
    if (xv.ndim() != 2 || wv.ndim() != 2) throw ConfigError("linear: rank-2 input and weight required");
    const int N = xv.dim(0), D = xv.dim(1), E = wv.dim(0);
    if (wv.dim(1) != D || bv.dim(0) != E) throw ConfigError("linear: shape mismatch");
    Tensor out({N, E});
    for (int n = 0; n < N; ++n) {
        for (int e = 0; e < E; ++e) {
            double acc = bv[e];
            for (int d = 0; d < D; ++d) acc += xv.at(n, d) * wv.at(e, d);
            out.at(n, e) = acc;
        }
    }
    int id = push(std::move(out), needs(x.id) || needs(w.id) || needs(bias.id), nullptr);
    nodes_[id].back = [x, w, bias, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& xv2 = t.value(x);
        const Tensor& wv2 = t.value(w);
        const int N = xv2.dim(0), D = xv2.dim(1), E = wv2.dim(0);
        if (t.needs(bias.id)) {
            Tensor& gb = t.grad_buf(bias.id);
            for (int n = 0; n < N; ++n)
                for (int e = 0; e < E; ++e) gb[e] += g.at(n, e);
        }
        if (t.needs(w.id)) {
            Tensor& gw = t.grad_buf(w.id);
            for (int e = 0; e < E; ++e)
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) acc += g.at(n, e) * xv2.at(n, d);
                    gw.at(e, d) += acc;
                }
        }
        if (t.needs(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            for (int n = 0; n < N; ++n)
                for (int d = 0; d < D; ++d) {
                    double acc = 0.0;
                    for (int e = 0; e < E; ++e) acc += g.at(n, e) * wv2.at(e, d);
                    gx.at(n, d) += acc;
                }
        }
    };
    return Var{id};
}

Var Tape::matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) throw ConfigError("matmul: shape mismatch");
    const int N = av.dim(0), M = av.dim(1), P = bv.dim(1);
    Tensor out({N, P});
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) {
            const double x = av.at(n, m);
            for (int p = 0; p < P; ++p) out.at(n, p) += x * bv.at(m, p);
        }
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        const int N = av2.dim(0), M = av2.dim(1), P = bv2.dim(1);
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (int n = 0; n < N; ++n)
                for (int m = 0; m < M; ++m) {
                    double acc = 0.0;
                    for (int p = 0; p < P; ++p) acc += g.at(n, p) * bv2.at(m, p);
                    ga.at(n, m) += acc;
                }
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (int m = 0; m < M; ++m)
                for (int p = 0; p < P; ++p) {
                    double acc = 0.0;
                    for (int n = 0; n < N; ++n) acc += av2.at(n, m) * g.at(n, p);
                    gb.at(m, p) += acc;
                }
        }
    };
    return Var{id};
}

Var Tape::bmm(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.ndim() != 3 || bv.ndim() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
        throw ConfigError("bmm: shape mismatch");
    const int G = av.dim(0), N = av.dim(1), M = av.dim(2), P = bv.dim(2);
    Tensor out({G, N, P});
    for (int gidx = 0; gidx < G; ++gidx)
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) {
                const double x = av.at(gidx, n, m);
                for (int p = 0; p < P; ++p) out.at(gidx, n, p) += x * bv.at(gidx, m, p);
            }
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        const int G = av2.dim(0), N = av2.dim(1), M = av2.dim(2), P = bv2.dim(2);
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (int gi = 0; gi < G; ++gi)
                for (int n = 0; n < N; ++n)
                    for (int m = 0; m < M; ++m) {
                        double acc = 0.0;
                        for (int p = 0; p < P; ++p) acc += g.at(gi, n, p) * bv2.at(gi, m, p);
                        ga.at(gi, n, m) += acc;
                    }
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (int gi = 0; gi < G; ++gi)
                for (int m = 0; m < M; ++m)
                    for (int p = 0; p < P; ++p) {
                        double acc = 0.0;
                        for (int n = 0; n < N; ++n) acc += av2.at(gi, n, m) * g.at(gi, n, p);
                        gb.at(gi, m, p) += acc;
                    }
        }
    };
    return Var{id};
}

namespace {

std::vector<std::size_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[i] = s[i + 1] * static_cast<std::size_t>(shape[i + 1]);
    return s;
}

void permute_into(const Tensor& in, const std::vector<int>& axes, Tensor& out, bool inverse) {
    const auto& ishape = in.shape();
    const int nd = static_cast<int>(ishape.size());
    auto istr = row_major_strides(ishape);
    auto ostr = row_major_strides(out.shape());
    std::vector<int> idx(nd, 0);
    const std::size_t n = in.size();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t oflat = 0;
        for (int d = 0; d < nd; ++d) {
            // forward: out[axes-permuted index] = in[index]
            if (!inverse)
                oflat += static_cast<std::size_t>(idx[axes[d]]) * ostr[d];
            else
                oflat += static_cast<std::size_t>(idx[d]) * ostr[axes[d]];
        }
        if (!inverse)
            out[oflat] = in[flat];
        else
            out[oflat] += in[flat];
        for (int d = nd - 1; d >= 0; --d) {
            if (++idx[d] < ishape[d]) break;
            idx[d] = 0;
        }
    }
}

}  // namespace

Var Tape::permute(Var a, std::vector<int> axes) {
    const Tensor& av = value(a);
    const int nd = av.ndim();
    if (static_cast<int>(axes.size()) != nd) throw ConfigError("permute: axes rank mismatch");
    std::vector<int> oshape(nd);
    for (int d = 0; d < nd; ++d) oshape[d] = av.dim(axes[d]);
    Tensor out(oshape);
    permute_into(av, axes, out, false);
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, axes, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        // grad flows back through the inverse permutation
        permute_into(g, axes, ga, true);
    };
    return Var{id};
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& av = value(a);
    if (shape_size(shape) != av.size()) throw ConfigError("reshape: element count mismatch");
    Tensor out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i];
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
    return Var{id};
}

Var Tape::softmax_lastdim(Var a) {
    const Tensor& av = value(a);
    const int nd = av.ndim();
    const int D = av.dim(nd - 1);
    const std::size_t rows = av.size() / static_cast<std::size_t>(D);
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = av.data() + r * D;
        double* o = out.data() + r * D;
        double m = in[0];
        for (int i = 1; i < D; ++i) m = std::max(m, in[i]);
        double s = 0.0;
        for (int i = 0; i < D; ++i) {
            o[i] = std::exp(in[i] - m);
            s += o[i];
        }
        for (int i = 0; i < D; ++i) o[i] /= s;
    }
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, D, rows, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& y = t.nodes_[id].value;
        Tensor& ga = t.grad_buf(a.id);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * D;
            const double* gr = g.data() + r * D;
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += gr[i] * yr[i];
            double* gar = ga.data() + r * D;
            for (int i = 0; i < D; ++i) gar[i] += yr[i] * (gr[i] - dot);
        }
    };
    return Var{id};
}

Var Tape::concat_channels(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.ndim() != 4 || bv.ndim() != 4) throw ConfigError("concat_channels: rank-4 required");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
        throw ConfigError("concat_channels: shape mismatch");
    const int B = av.dim(0), C1 = av.dim(1), C2 = bv.dim(1), H = av.dim(2), W = av.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({B, C1 + C2, H, W});
    for (int bb = 0; bb < B; ++bb) {
        std::copy(av.data() + static_cast<std::size_t>(bb) * C1 * plane,
                  av.data() + static_cast<std::size_t>(bb + 1) * C1 * plane,
                  out.data() + static_cast<std::size_t>(bb) * (C1 + C2) * plane);
        std::copy(bv.data() + static_cast<std::size_t>(bb) * C2 * plane,
                  bv.data() + static_cast<std::size_t>(bb + 1) * C2 * plane,
                  out.data() + (static_cast<std::size_t>(bb) * (C1 + C2) + C1) * plane);
    }
    int id = push(std::move(out), needs(a.id) || needs(b.id), nullptr);
    nodes_[id].back = [a, b, C1, C2, plane, B, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        if (t.needs(a.id)) {
            Tensor& ga = t.grad_buf(a.id);
            for (int bb = 0; bb < B; ++bb) {
                const double* src = g.data() + static_cast<std::size_t>(bb) * (C1 + C2) * plane;
                double* dst = ga.data() + static_cast<std::size_t>(bb) * C1 * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(C1) * plane; ++i) dst[i] += src[i];
            }
        }
        if (t.needs(b.id)) {
            Tensor& gb = t.grad_buf(b.id);
            for (int bb = 0; bb < B; ++bb) {
                const double* src = g.data() + (static_cast<std::size_t>(bb) * (C1 + C2) + C1) * plane;
                double* dst = gb.data() + static_cast<std::size_t>(bb) * C2 * plane;
                for (std::size_t i = 0; i < static_cast<std::size_t>(C2) * plane; ++i) dst[i] += src[i];
            }
        }
    };
    return Var{id};
}

Var Tape::mean_hw(Var a) {
    const Tensor& av = value(a);
    if (av.ndim() != 4) throw ConfigError("mean_hw: rank-4 required");
    const int B = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({B, C});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* p = av.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            // extended precision keeps pool(broadcast(x)) == x bit-exact for
            // any plane up to 2^11 sites
            long double s = 0.0L;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            out.at(b, c) = static_cast<double>(s / static_cast<long double>(plane));
        }
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, B, C, plane, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        const double inv = 1.0 / static_cast<double>(plane);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double gv = g.at(b, c) * inv;
                double* p = ga.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
            }
    };
    return Var{id};
}

Var Tape::broadcast_hw(Var a, int h, int w) {
    const Tensor& av = value(a);
    if (av.ndim() != 2) throw ConfigError("broadcast_hw: rank-2 required");
    const int B = av.dim(0), C = av.dim(1);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor out({B, C, h, w});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double* p = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            const double v = av.at(b, c);
            for (std::size_t i = 0; i < plane; ++i) p[i] = v;
        }
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, B, C, plane, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const double* p = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                double s = 0.0;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
                ga.at(b, c) += s;
            }
    };
    return Var{id};
}

Var Tape::upsample_nearest2x(Var a) {
    const Tensor& av = value(a);
    if (av.ndim() != 4) throw ConfigError("upsample_nearest2x: rank-4 required");
    const int B = av.dim(0), C = av.dim(1), H = av.dim(2), W = av.dim(3);
    Tensor out({B, C, 2 * H, 2 * W});
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const double v = av.at(b, c, y, x);
                    out.at(b, c, 2 * y, 2 * x) = v;
                    out.at(b, c, 2 * y, 2 * x + 1) = v;
                    out.at(b, c, 2 * y + 1, 2 * x) = v;
                    out.at(b, c, 2 * y + 1, 2 * x + 1) = v;
                }
    int id = push(std::move(out), needs(a.id), nullptr);
    nodes_[id].back = [a, B, C, H, W, id](Tape& t) {
        if (!t.needs(a.id)) return;
        const Tensor& g = t.nodes_[id].grad;
        Tensor& ga = t.grad_buf(a.id);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        ga.at(b, c, y, x) += g.at(b, c, 2 * y, 2 * x) + g.at(b, c, 2 * y, 2 * x + 1) +
                                             g.at(b, c, 2 * y + 1, 2 * x) + g.at(b, c, 2 * y + 1, 2 * x + 1);
    };
    return Var{id};
}

Var Tape::add_channel_vec(Var x, Var v) {
    const Tensor& xv = value(x);
    const Tensor& vv = value(v);
    if (xv.ndim() != 4 || vv.ndim() != 1 || vv.dim(0) != xv.dim(1))
        throw ConfigError("add_channel_vec: shape mismatch");
    const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out(xv.shape());
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* in = xv.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            double* o = out.data() + (static_cast<std::size_t>(b) * C + c) * plane;
            const double add = vv[c];
            for (std::size_t i = 0; i < plane; ++i) o[i] = in[i] + add;
        }
    int id = push(std::move(out), needs(x.id) || needs(v.id), nullptr);
    nodes_[id].back = [x, v, B, C, plane, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        if (t.needs(x.id)) {
            Tensor& gx = t.grad_buf(x.id);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (t.needs(v.id)) {
            Tensor& gv = t.grad_buf(v.id);
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double* p = g.data() + (static_cast<std::size_t>(b) * C + c) * plane;
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) s += p[i];
                    gv[c] += s;
                }
        }
    };
    return Var{id};
}

Var Tape::mse(Var pred, Var target) {
    const Tensor& pv = value(pred);
    const Tensor& tv = value(target);
    if (!pv.same_shape(tv)) throw ConfigError("mse: shape mismatch");
    const std::size_t n = pv.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pv[i] - tv[i];
        s += d * d;
    }
    Tensor out({1});
    out[0] = s / static_cast<double>(n);
    int id = push(std::move(out), needs(pred.id) || needs(target.id), nullptr);
    nodes_[id].back = [pred, target, n, id](Tape& t) {
        const Tensor& g = t.nodes_[id].grad;
        const Tensor& pv2 = t.value(pred);
        const Tensor& tv2 = t.value(target);
        const double c = 2.0 * g[0] / static_cast<double>(n);
        if (t.needs(pred.id)) {
            Tensor& gp = t.grad_buf(pred.id);
            for (std::size_t i = 0; i < n; ++i) gp[i] += c * (pv2[i] - tv2[i]);
        }
        if (t.needs(target.id)) {
            Tensor& gt = t.grad_buf(target.id);
            for (std::size_t i = 0; i < n; ++i) gt[i] -= c * (pv2[i] - tv2[i]);
        }
    };
    return Var{id};
}

Var Tape::masked_mse(Var pred, Var target, const Tensor& mask) {
    const Tensor& pv = value(pred);
    const Tensor& tv = value(target);
    if (!pv.same_shape(tv) || !pv.same_shape(mask)) throw ConfigError("masked_mse: shape mismatch");
    const std::size_t n = pv.size();
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0.0) continue;
        const double d = pv[i] - tv[i];
        s += d * d;
        ++cnt;
    }
    Tensor out({1});
    out[0] = cnt > 0 ? s / static_cast<double>(cnt) : 0.0;
    int id = push(std::move(out), cnt > 0 && (needs(pred.id) || needs(target.id)), nullptr);
    if (cnt > 0) {
        nodes_[id].back = [pred, target, mask, n, cnt, id](Tape& t) {
            const Tensor& g = t.nodes_[id].grad;
            const Tensor& pv2 = t.value(pred);
            const Tensor& tv2 = t.value(target);
            const double c = 2.0 * g[0] / static_cast<double>(cnt);
            if (t.needs(pred.id)) {
                Tensor& gp = t.grad_buf(pred.id);
                for (std::size_t i = 0; i < n; ++i)
                    if (mask[i] != 0.0) gp[i] += c * (pv2[i] - tv2[i]);
            }
            if (t.needs(target.id)) {
                Tensor& gt = t.grad_buf(target.id);
                for (std::size_t i = 0; i < n; ++i)
                    if (mask[i] != 0.0) gt[i] -= c * (pv2[i] - tv2[i]);
            }
        };
    }
    return Var{id};
}

}  // namespace hdiff
