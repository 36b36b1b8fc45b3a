#include "hdiff/phantom.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

std::vector<double> gaussian_kernel_1d(double sigma) {
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

int reflect(int i, int n) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - 1 - i;
    return i;
}

// separable 3D blur, symmetric boundary
Tensor blur3d(const Tensor& v, double sigma) {
    const auto k = gaussian_kernel_1d(sigma);
    const int r = static_cast<int>(k.size() / 2);
    const int nx = v.dim(0), ny = v.dim(1), nz = v.dim(2);
    Tensor a = v, b(v.shape());
    auto pass = [&](const Tensor& src, Tensor& dst, int axis) {
        const int n[3] = {nx, ny, nz};
        for (int kk = 0; kk < nz; ++kk)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    double acc = 0.0;
                    for (int t = -r; t <= r; ++t) {
                        int c[3] = {i, j, kk};
                        c[axis] = reflect(c[axis] + t, n[axis]);
                        acc += k[static_cast<std::size_t>(t + r)] * src.vox(c[0], c[1], c[2]);
                    }
                    dst.vox(i, j, kk) = acc;
                }
    };
    pass(a, b, 0);
    pass(b, a, 1);
    pass(a, b, 2);
    return b;
}

}  // namespace

Tensor ellipsoid_mask(std::array<int, 3> shape, std::array<double, 3> center, std::array<double, 3> radii) {
    Tensor m = Tensor::zeros({shape[0], shape[1], shape[2]});
    for (int k = 0; k < shape[2]; ++k)
        for (int j = 0; j < shape[1]; ++j)
            for (int i = 0; i < shape[0]; ++i) {
                const double dx = (i - center[0]) / radii[0];
                const double dy = (j - center[1]) / radii[1];
                const double dz = (k - center[2]) / radii[2];
                if (dx * dx + dy * dy + dz * dz <= 1.0) m.vox(i, j, k) = 1.0;
            }
    return m;
}

Phantom generate_phantom(std::uint64_t seed, std::array<int, 3> shape, std::array<double, 3> spacing) {
    if (shape[0] < 32 || shape[1] < 32 || shape[2] < 16)
        throw ConfigError("generate_phantom: shape must be at least 32x32x16, got " + std::to_string(shape[0]) +
                          "x" + std::to_string(shape[1]) + "x" + std::to_string(shape[2]));
    Rng rng(seed);
    const double nx = shape[0], ny = shape[1], nz = shape[2];

    auto jitter = [&](double v, double frac) { return v * (1.0 + rng.uniform(-frac, frac)); };

    const std::array<double, 3> c = {nx / 2 + rng.uniform(-0.03, 0.03) * nx,
                                     ny / 2 + rng.uniform(-0.03, 0.03) * ny,
                                     nz / 2 + rng.uniform(-0.03, 0.03) * nz};
    const std::array<double, 3> brain_r = {jitter(0.42 * nx, 0.05), jitter(0.42 * ny, 0.05),
                                           jitter(0.42 * nz, 0.05)};
    const std::array<double, 3> wm_r = {jitter(0.58 * brain_r[0], 0.05), jitter(0.58 * brain_r[1], 0.05),
                                        jitter(0.58 * brain_r[2], 0.05)};
    // two lateral ventricle-like inclusions inside the core
    const double voff = 0.35 * wm_r[0];
    const std::array<double, 3> vr = {jitter(0.22 * wm_r[0], 0.1), jitter(0.45 * wm_r[1], 0.1),
                                      jitter(0.40 * wm_r[2], 0.1)};
    const std::array<double, 3> vc1 = {c[0] - voff, c[1] + 0.05 * wm_r[1], c[2]};
    const std::array<double, 3> vc2 = {c[0] + voff, c[1] + 0.05 * wm_r[1], c[2]};

    Tensor brain = ellipsoid_mask(shape, c, brain_r);
    Tensor wm = ellipsoid_mask(shape, c, wm_r);
    Tensor v1 = ellipsoid_mask(shape, vc1, vr);
    Tensor v2 = ellipsoid_mask(shape, vc2, vr);

    LabelVolume labels;
    labels.data = Tensor::zeros({shape[0], shape[1], shape[2]});
    labels.spacing = spacing;
    Tensor intensity = Tensor::zeros({shape[0], shape[1], shape[2]});
    for (std::size_t i = 0; i < brain.size(); ++i) {
        if (brain[i] == 0.0) continue;
        int lab;
        if ((v1[i] != 0.0 || v2[i] != 0.0) && wm[i] != 0.0)
            lab = kLabelCsf;
        else if (wm[i] != 0.0)
            lab = kLabelWm;
        else
            lab = kLabelGm;
        labels.data[i] = lab;
        intensity[i] = lab == kLabelCsf ? kCsfIntensity : (lab == kLabelWm ? kWmIntensity : kGmIntensity);
    }

    // partial-volume mixing at tissue borders
    Tensor smooth = blur3d(intensity, 0.5);

    // smooth multiplicative bias of +/-5% and mild sensor noise, brain only
    const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5), fz = rng.uniform(0.5, 1.5);
    const double px = rng.uniform(0.0, 1.0), py = rng.uniform(0.0, 1.0), pz = rng.uniform(0.0, 1.0);
    const double two_pi = 2.0 * M_PI;
    for (int k = 0; k < shape[2]; ++k)
        for (int j = 0; j < shape[1]; ++j)
            for (int i = 0; i < shape[0]; ++i) {
                if (brain.vox(i, j, k) == 0.0) {
                    smooth.vox(i, j, k) = 0.0;  // blur bleed outside the head removed
                    continue;
                }
                const double bias = 1.0 + 0.05 * std::cos(two_pi * (fx * i / nx + px)) *
                                              std::cos(two_pi * (fy * j / ny + py)) *
                                              std::cos(two_pi * (fz * k / nz + pz));
                double val = smooth.vox(i, j, k) * bias + 0.02 * rng.normal();
                smooth.vox(i, j, k) = std::min(1.0, std::max(0.01, val));
            }

    Phantom p;
    p.volume.data = std::move(smooth);
    p.volume.spacing = spacing;
    p.volume.normalized = false;
    p.labels = std::move(labels);
    return p;
}

MaskVolume transplant_mask(const Volume& healthy, const MaskVolume& lesion, Rng& rng, int max_tries) {
    healthy.validate();
    lesion.validate();
    if (lesion.empty_mask()) throw DataError("transplant_mask: lesion mask is empty");

    const int lx = lesion.data.dim(0), ly = lesion.data.dim(1), lz = lesion.data.dim(2);
    int lo[3] = {lx, ly, lz}, hi[3] = {-1, -1, -1};
    std::vector<std::array<int, 3>> voxels;
    for (int k = 0; k < lz; ++k)
        for (int j = 0; j < ly; ++j)
            for (int i = 0; i < lx; ++i) {
                if (lesion.data.vox(i, j, k) == 0.0) continue;
                voxels.push_back({i, j, k});
                lo[0] = std::min(lo[0], i);
                lo[1] = std::min(lo[1], j);
                lo[2] = std::min(lo[2], k);
                hi[0] = std::max(hi[0], i);
                hi[1] = std::max(hi[1], j);
                hi[2] = std::max(hi[2], k);
            }

    const int n[3] = {healthy.nx(), healthy.ny(), healthy.nz()};
    for (int a = 0; a < 3; ++a)
        if (hi[a] - lo[a] >= n[a])
            throw DataError("transplant_mask: lesion extent exceeds target volume along axis " +
                            std::to_string(a));

    for (int attempt = 0; attempt < max_tries; ++attempt) {
        int d[3];
        for (int a = 0; a < 3; ++a) d[a] = -lo[a] + rng.uniform_int(n[a] - (hi[a] - lo[a]));
        bool ok = true;
        for (const auto& v : voxels) {
            if (healthy.data.vox(v[0] + d[0], v[1] + d[1], v[2] + d[2]) == 0.0) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        MaskVolume out;
        out.data = Tensor::zeros({n[0], n[1], n[2]});
        out.spacing = healthy.spacing;
        for (const auto& v : voxels) out.data.vox(v[0] + d[0], v[1] + d[1], v[2] + d[2]) = 1.0;
        return out;
    }
    throw DataError("transplant_mask: no fully-in-tissue placement found after " + std::to_string(max_tries) +
                    " tries");
}

LabelVolume threshold_segment(const Volume& v) {
    v.validate();
    if (v.normalized) throw ConfigError("threshold_segment: expects raw [0,1] intensities");
    // midpoints between background/CSF/GM/WM nominal intensities
    const double t_bg = kCsfIntensity / 2.0;
    const double t_csf = (kCsfIntensity + kGmIntensity) / 2.0;
    const double t_gm = (kGmIntensity + kWmIntensity) / 2.0;
    LabelVolume out;
    out.data = Tensor::zeros(v.data.shape());
    out.spacing = v.spacing;
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const double x = v.data[i];
        if (x <= t_bg)
            out.data[i] = kLabelBackground;
        else if (x < t_csf)
            out.data[i] = kLabelCsf;
        else if (x < t_gm)
            out.data[i] = kLabelGm;
        else
            out.data[i] = kLabelWm;
    }
    return out;
}

}  // namespace hdiff
