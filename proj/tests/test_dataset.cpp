#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "hdiff/dataset.hpp"
#include "hdiff/errors.hpp"
#include "hdiff/nifti.hpp"
#include "hdiff/phantom.hpp"
#include "hdiff/pipeline.hpp"
#include "hdiff/rng.hpp"

using namespace hdiff;

namespace {

std::filesystem::path data_dir() {
    static std::filesystem::path dir = [] {
        auto d = std::filesystem::temp_directory_path() / "hdiff_dataset_tests";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

// writes a small phantom corpus and returns the manifest path
std::string write_corpus(int cases, std::array<int, 3> shape = {32, 32, 16}) {
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < cases; ++i) {
        const Phantom p = generate_phantom(static_cast<std::uint64_t>(100 + i), shape);
        MaskVolume lesion;
        lesion.data = ellipsoid_mask(shape, {shape[0] / 2.0, shape[1] / 2.0, shape[2] / 2.0},
                                     {3.0, 3.0, 2.0});
        lesion.spacing = p.volume.spacing;
        Rng rng(static_cast<std::uint64_t>(i));
        const MaskVolume placed = transplant_mask(p.volume, lesion, rng);

        const std::string vname = "case" + std::to_string(i) + "_t1.nii.gz";
        const std::string mname = "case" + std::to_string(i) + "_mask.nii.gz";
        const std::string lname = "case" + std::to_string(i) + "_labels.nii.gz";
        save_volume(p.volume, (data_dir() / vname).string());
        save_mask(placed, (data_dir() / mname).string());
        save_labels(p.labels, (data_dir() / lname).string());
        entries.push_back({vname, mname, lname});
    }
    const std::string manifest = (data_dir() / "manifest.json").string();
    save_manifest(entries, manifest);
    return manifest;
}

}  // namespace

TEST_CASE("manifest round trip keeps entries and optional labels") {
    std::vector<ManifestEntry> entries = {{"a.nii", "am.nii", "al.nii"}, {"b.nii.gz", "bm.nii.gz", ""}};
    const std::string path = (data_dir() / "roundtrip.json").string();
    save_manifest(entries, path);
    const auto back = load_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].volume == "a.nii");
    CHECK(back[0].mask == "am.nii");
    CHECK(back[0].labels == "al.nii");
    CHECK(back[1].labels.empty());
}

TEST_CASE("malformed manifests are rejected with precise errors") {
    CHECK_THROWS_AS(load_manifest((data_dir() / "missing.json").string()), IoError);

    const auto bad = (data_dir() / "bad.json").string();
    { std::ofstream(bad) << "not json at all {"; }
    CHECK_THROWS_AS(load_manifest(bad), DataError);

    { std::ofstream(bad) << "{\"entries\": [{\"volume\": \"v.nii\"}]}"; }
    CHECK_THROWS_AS(load_manifest(bad), DataError);  // mask missing

    { std::ofstream(bad) << "{\"entries\": []}"; }
    CHECK_THROWS_AS(load_manifest(bad), DataError);  // no cases

    { std::ofstream(bad) << "{\"cases\": []}"; }
    CHECK_THROWS_AS(load_manifest(bad), DataError);  // wrong key
}

TEST_CASE("training sets load relative to the manifest and come back normalized") {
    const std::string manifest = write_corpus(2);
    const TrainingSet set = load_training_set(manifest);
    REQUIRE(set.cases.size() == 2);
    for (const auto& c : set.cases) {
        CHECK(c.volume.normalized);
        CHECK(c.volume.data.max() <= 1.0 + 1e-12);
        CHECK(c.mask.same_shape(c.volume.data));
        CHECK(c.mask.sum() > 0.0);
        CHECK(c.record.hi > c.record.lo);
        for (std::size_t i = 0; i < c.mask.size(); ++i) CHECK((c.mask[i] == 0.0 || c.mask[i] == 1.0));
    }
}

TEST_CASE("mismatched mask shapes are caught at load time") {
    const Phantom p = generate_phantom(55, {32, 32, 16});
    MaskVolume wrong;
    wrong.data = Tensor::zeros({32, 32, 20});
    wrong.data.vox(16, 16, 10) = 1.0;
    save_volume(p.volume, (data_dir() / "mm_vol.nii").string());
    save_mask(wrong, (data_dir() / "mm_mask.nii").string());
    const std::string manifest = (data_dir() / "mm.json").string();
    save_manifest({{"mm_vol.nii", "mm_mask.nii", ""}}, manifest);
    CHECK_THROWS_AS(load_training_set(manifest), DataError);
}

TEST_CASE("axial training pairs respect the slice budget and stay aligned") {
    const TrainingSet set = load_training_set(write_corpus(2));
    PairConfig cfg;
    cfg.z_max = 10;
    cfg.margin = 2;

    Rng rng(42);
    for (int trial = 0; trial < 8; ++trial) {
        auto [x0, m] = make_training_pair(set, StackOrientation::Axial, cfg, rng);
        REQUIRE(x0.ndim() == 4);
        CHECK(x0.dim(0) <= cfg.z_max);
        CHECK(x0.dim(0) >= 2);
        CHECK(x0.dim(1) == 1);
        CHECK(x0.dim(2) == 32);  // in-plane untouched
        CHECK(x0.dim(3) == 32);
        CHECK(m.same_shape(x0));
        for (std::size_t i = 0; i < m.size(); ++i) CHECK((m[i] == 0.0 || m[i] == 1.0));
    }

    // identical streams draw identical pairs
    Rng ra(7), rb(7);
    auto [xa, ma] = make_training_pair(set, StackOrientation::Axial, cfg, ra);
    auto [xb, mb] = make_training_pair(set, StackOrientation::Axial, cfg, rb);
    CHECK(xa == xb);
    CHECK(ma == mb);
}

TEST_CASE("coronal training pairs are fixed-depth chunks that touch the mask") {
    const TrainingSet set = load_training_set(write_corpus(2));
    PairConfig cfg;
    cfg.chunk = 16;

    Rng rng(11);
    for (int trial = 0; trial < 8; ++trial) {
        auto [x0, m] = make_training_pair(set, StackOrientation::Coronal, cfg, rng);
        CHECK(x0.dim(0) == 16);  // ny=32 > chunk, so an exact chunk is cut
        CHECK(x0.dim(1) == 1);
        CHECK(x0.dim(2) == 32);  // rows = x
        CHECK(x0.dim(3) == 16);  // cols = z
        CHECK(m.same_shape(x0));
        CHECK(m.sum() > 0.0);  // the chunk overlaps the lesion by construction
    }

    // a volume thinner than the chunk is returned whole
    PairConfig wide = cfg;
    wide.chunk = 64;
    auto [x0, m] = make_training_pair(set, StackOrientation::Coronal, wide, rng);
    CHECK(x0.dim(0) == 32);
    (void)m;
}

TEST_CASE("cases with empty masks are skipped, all-empty sets are an error") {
    const Phantom p = generate_phantom(8, {32, 32, 16});
    auto [norm, rec] = normalize_intensity(p.volume);

    TrainingSet set;
    set.cases.push_back({norm, Tensor::zeros({32, 32, 16}), rec});  // unusable
    Tensor good = Tensor::zeros({32, 32, 16});
    for (int k = 6; k < 10; ++k)
        for (int j = 14; j < 18; ++j)
            for (int i = 14; i < 18; ++i) good.vox(i, j, k) = 1.0;
    set.cases.push_back({norm, good, rec});

    PairConfig cfg;
    Rng rng(3);
    for (int trial = 0; trial < 6; ++trial) {
        auto [x0, m] = make_training_pair(set, StackOrientation::Axial, cfg, rng);
        CHECK(m.sum() > 0.0);  // always the usable case
        (void)x0;
    }

    TrainingSet hopeless;
    hopeless.cases.push_back({norm, Tensor::zeros({32, 32, 16}), rec});
    CHECK_THROWS_AS(make_training_pair(hopeless, StackOrientation::Axial, cfg, rng), DataError);
    CHECK_THROWS_AS(make_training_pair(TrainingSet{}, StackOrientation::Axial, cfg, rng), DataError);
}
