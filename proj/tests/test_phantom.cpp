#include <array>
#include <map>

#include <doctest.h>

#include "hdiff/errors.hpp"
#include "hdiff/phantom.hpp"
#include "hdiff/volume.hpp"

using namespace hdiff;

TEST_CASE("ellipsoid mask matches the analytic indicator") {
    const std::array<int, 3> shape{9, 9, 9};
    const Tensor m = ellipsoid_mask(shape, {4.0, 4.0, 4.0}, {3.0, 2.0, 1.5});
    CHECK(m.vox(4, 4, 4) == 1.0);
    CHECK(m.vox(7, 4, 4) == 1.0);   // on the x radius
    CHECK(m.vox(8, 4, 4) == 0.0);   // just outside
    CHECK(m.vox(4, 6, 4) == 1.0);
    CHECK(m.vox(4, 7, 4) == 0.0);
    CHECK(m.vox(4, 4, 6) == 0.0);
    CHECK(m.vox(0, 0, 0) == 0.0);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK((m[i] == 0.0 || m[i] == 1.0));
}

TEST_CASE("phantom generation is deterministic per seed") {
    const Phantom a = generate_phantom(123, {32, 32, 16});
    const Phantom b = generate_phantom(123, {32, 32, 16});
    const Phantom c = generate_phantom(124, {32, 32, 16});
    CHECK(a.volume.data == b.volume.data);
    CHECK(a.labels.data == b.labels.data);
    CHECK(a.volume.data != c.volume.data);
}

TEST_CASE("phantom labels partition the nonzero voxels") {
    const Phantom p = generate_phantom(7, {48, 48, 32});
    REQUIRE(p.volume.data.same_shape(p.labels.data));
    std::map<int, int> counts;
    for (std::size_t i = 0; i < p.volume.data.size(); ++i) {
        const bool tissue = p.volume.data[i] != 0.0;
        const bool labeled = p.labels.data[i] != 0.0;
        CHECK(tissue == labeled);
        counts[static_cast<int>(p.labels.data[i])]++;
    }
    // all four classes present with substantial support
    CHECK(counts[kLabelBackground] > 1000);
    CHECK(counts[kLabelCsf] > 50);
    CHECK(counts[kLabelGm] > 1000);
    CHECK(counts[kLabelWm] > 1000);
}

TEST_CASE("phantom tissue intensities sit near their nominal values") {
    const Phantom p = generate_phantom(99, {48, 48, 32});
    std::map<int, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < p.volume.data.size(); ++i) {
        const int lab = static_cast<int>(p.labels.data[i]);
        if (lab == kLabelBackground) continue;
        acc[lab].first += p.volume.data[i];
        acc[lab].second++;
    }
    const double wm_mean = acc[kLabelWm].first / acc[kLabelWm].second;
    const double gm_mean = acc[kLabelGm].first / acc[kLabelGm].second;
    const double csf_mean = acc[kLabelCsf].first / acc[kLabelCsf].second;
    CHECK(wm_mean == doctest::Approx(kWmIntensity).epsilon(0.07));
    CHECK(gm_mean == doctest::Approx(kGmIntensity).epsilon(0.10));
    CHECK(csf_mean == doctest::Approx(kCsfIntensity).epsilon(0.35));
    CHECK(wm_mean > gm_mean);
    CHECK(gm_mean > csf_mean);
    CHECK(p.volume.data.max() <= 1.0);
    CHECK(p.volume.data.min() >= 0.0);
}

TEST_CASE("threshold segmentation mostly agrees with the true labels") {
    const Phantom p = generate_phantom(5, {48, 48, 32});
    const LabelVolume seg = threshold_segment(p.volume);
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < seg.data.size(); ++i) {
        if (p.labels.data[i] == 0.0 && seg.data[i] == 0.0) continue;
        total++;
        if (p.labels.data[i] == seg.data[i]) agree++;
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(agree) / total > 0.85);

    Volume norm = p.volume;
    norm.normalized = true;
    CHECK_THROWS_AS(threshold_segment(norm), ConfigError);
}

TEST_CASE("phantom rejects undersized grids") {
    CHECK_THROWS_AS(generate_phantom(0, {16, 32, 16}), ConfigError);
    CHECK_THROWS_AS(generate_phantom(0, {32, 32, 8}), ConfigError);
}

TEST_CASE("transplanted lesions land fully on tissue") {
    const Phantom p = generate_phantom(21, {48, 48, 32});
    MaskVolume lesion;
    lesion.data = ellipsoid_mask({48, 48, 32}, {24.0, 24.0, 16.0}, {4.0, 3.0, 2.5});
    lesion.spacing = p.volume.spacing;

    Rng rng(77);
    const MaskVolume placed = transplant_mask(p.volume, lesion, rng);
    CHECK(placed.count() == lesion.count());  // translation preserves the shape
    for (int k = 0; k < 32; ++k)
        for (int j = 0; j < 48; ++j)
            for (int i = 0; i < 48; ++i)
                if (placed.data.vox(i, j, k) != 0.0) CHECK(p.volume.data.vox(i, j, k) != 0.0);

    Rng rng_a(123), rng_b(123);
    const MaskVolume p1 = transplant_mask(p.volume, lesion, rng_a);
    const MaskVolume p2 = transplant_mask(p.volume, lesion, rng_b);
    CHECK(p1.data == p2.data);
}

TEST_CASE("transplant fails cleanly when no placement fits") {
    // tissue exists at a single voxel; a two-voxel lesion can never fit
    Volume sparse;
    sparse.data = Tensor::zeros({8, 8, 8});
    sparse.data.vox(4, 4, 4) = 0.5;
    MaskVolume lesion;
    lesion.data = Tensor::zeros({8, 8, 8});
    lesion.data.vox(0, 0, 0) = 1.0;
    lesion.data.vox(3, 0, 0) = 1.0;
    Rng rng(1);
    CHECK_THROWS_AS(transplant_mask(sparse, lesion, rng, 64), DataError);

    MaskVolume empty;
    empty.data = Tensor::zeros({8, 8, 8});
    CHECK_THROWS_AS(transplant_mask(sparse, empty, rng), DataError);
}
