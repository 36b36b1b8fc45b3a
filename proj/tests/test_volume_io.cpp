#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <doctest.h>

#include "hdiff/errors.hpp"
#include "hdiff/nifti.hpp"
#include "hdiff/rng.hpp"
#include "hdiff/volume.hpp"

using namespace hdiff;

namespace {

std::filesystem::path scratch_dir() {
    static std::filesystem::path dir = [] {
        auto d = std::filesystem::temp_directory_path() / "hdiff_io_tests";
        std::filesystem::create_directories(d);
        return d;
    }();
    return dir;
}

Volume random_volume(std::array<int, 3> shape, std::uint64_t seed) {
    Rng rng(seed);
    Volume v;
    v.data = Tensor({shape[0], shape[1], shape[2]});
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = rng.normal();
    v.spacing = {0.5, 1.25, 2.0};
    return v;
}

}  // namespace

TEST_CASE("normalization maps the nonzero range onto [-1, 1]") {
    Volume v;
    v.data = Tensor({3, 3, 3});
    v.data.fill(0.0);
    v.data.vox(0, 0, 0) = 0.2;
    v.data.vox(1, 1, 1) = 0.5;
    v.data.vox(2, 2, 2) = 0.8;

    auto [n, rec] = normalize_intensity(v);
    CHECK(rec.lo == doctest::Approx(0.2));
    CHECK(rec.hi == doctest::Approx(0.8));
    CHECK(n.normalized);
    CHECK(n.data.vox(0, 0, 0) == doctest::Approx(-1.0));
    CHECK(n.data.vox(1, 1, 1) == doctest::Approx(0.0));
    CHECK(n.data.vox(2, 2, 2) == doctest::Approx(1.0));
    // the affine applies everywhere, so true zeros land below -1 here
    CHECK(n.data.vox(0, 1, 0) == doctest::Approx(2.0 * (0.0 - 0.2) / 0.6 - 1.0));

    Volume back = denormalize_intensity(n, rec);
    CHECK_FALSE(back.normalized);
    for (std::size_t i = 0; i < back.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(v.data[i]).epsilon(1e-12));
}

TEST_CASE("normalization rejects degenerate inputs") {
    Volume zeros;
    zeros.data = Tensor({2, 2, 2});
    CHECK_THROWS_AS(normalize_intensity(zeros), DataError);

    Volume constant;
    constant.data = Tensor::full({2, 2, 2}, 0.7);
    CHECK_THROWS_AS(normalize_intensity(constant), DataError);

    Volume v = random_volume({2, 2, 2}, 5);
    v.normalized = true;
    CHECK_THROWS_AS(normalize_intensity(v), ConfigError);
}

TEST_CASE("mask and label grids validate their value sets") {
    MaskVolume m;
    m.data = Tensor({2, 2, 2});
    m.data.fill(0.0);
    m.data.vox(0, 0, 0) = 1.0;
    CHECK_NOTHROW(m.validate());
    CHECK(m.count() == 1);
    m.data.vox(1, 0, 0) = 0.5;
    CHECK_THROWS_AS(m.validate(), DataError);

    LabelVolume l;
    l.data = Tensor({2, 2, 2});
    l.data.fill(3.0);
    CHECK_NOTHROW(l.validate());
    l.data.vox(0, 0, 0) = 4.0;
    CHECK_THROWS_AS(l.validate(), DataError);
}

TEST_CASE("volume round trip through .nii is bit-exact") {
    const Volume v = random_volume({7, 5, 9}, 42);
    const auto path = (scratch_dir() / "vol.nii").string();
    save_volume(v, path);
    const Volume r = load_volume(path);
    REQUIRE(r.data.same_shape(v.data));
    CHECK(r.data == v.data);  // float64 payload, exact
    for (int a = 0; a < 3; ++a) CHECK(r.spacing[a] == doctest::Approx(v.spacing[a]).epsilon(1e-6));
}

TEST_CASE("volume round trip through .nii.gz is bit-exact") {
    const Volume v = random_volume({6, 8, 4}, 43);
    const auto path = (scratch_dir() / "vol.nii.gz").string();
    save_volume(v, path);
    const Volume r = load_volume(path);
    CHECK(r.data == v.data);

    // the gz file is genuinely compressed (gzip magic bytes)
    std::ifstream f(path, std::ios::binary);
    unsigned char sig[2] = {0, 0};
    f.read(reinterpret_cast<char*>(sig), 2);
    CHECK(sig[0] == 0x1f);
    CHECK(sig[1] == 0x8b);
}

TEST_CASE("mask and label round trips preserve integer values") {
    MaskVolume m;
    m.data = Tensor({4, 3, 5});
    m.data.fill(0.0);
    for (int i = 0; i < 4; ++i) m.data.vox(i, 1, 2) = 1.0;
    m.spacing = {1.0, 1.0, 3.0};
    const auto mpath = (scratch_dir() / "mask.nii.gz").string();
    save_mask(m, mpath);
    const MaskVolume mr = load_mask(mpath);
    CHECK(mr.data == m.data);
    CHECK(mr.count() == 4);

    LabelVolume l;
    l.data = Tensor({4, 3, 5});
    l.data.fill(0.0);
    l.data.vox(0, 0, 0) = 1.0;
    l.data.vox(1, 0, 0) = 2.0;
    l.data.vox(2, 0, 0) = 3.0;
    const auto lpath = (scratch_dir() / "labels.nii").string();
    save_labels(l, lpath);
    const LabelVolume lr = load_labels(lpath);
    CHECK(lr.data == l.data);
}

TEST_CASE("saving a fractional mask as uint8 is rejected") {
    Volume v;
    v.data = Tensor({2, 2, 2});
    v.data.fill(0.25);
    LabelVolume l;
    l.data = v.data;
    CHECK_THROWS_AS(l.validate(), DataError);
}

TEST_CASE("missing and malformed files raise io errors") {
    CHECK_THROWS_AS(load_volume((scratch_dir() / "does_not_exist.nii").string()), IoError);

    // truncated: header only up to byte 100
    const auto tpath = (scratch_dir() / "trunc.nii").string();
    {
        std::ofstream f(tpath, std::ios::binary);
        std::vector<char> junk(100, 0);
        f.write(junk.data(), 100);
    }
    CHECK_THROWS_AS(load_volume(tpath), IoError);

    // valid file with dim[0] patched to 4 (a 4D image)
    const Volume v = random_volume({3, 3, 3}, 7);
    const auto path4d = (scratch_dir() / "fourd.nii").string();
    save_volume(v, path4d);
    {
        std::fstream f(path4d, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        const std::int16_t four = 4;
        f.write(reinterpret_cast<const char*>(&four), 2);
    }
    CHECK_THROWS_AS(load_volume(path4d), IoError);

    // corrupted magic
    const auto badmagic = (scratch_dir() / "badmagic.nii").string();
    save_volume(v, badmagic);
    {
        std::fstream f(badmagic, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(344);
        f.write("xxx", 3);
    }
    CHECK_THROWS_AS(load_volume(badmagic), IoError);
}

namespace {

void swap2b(void* p) {
    auto* b = static_cast<std::uint8_t*>(p);
    std::swap(b[0], b[1]);
}
void swap4b(void* p) {
    auto* b = static_cast<std::uint8_t*>(p);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
}
void swap8b(void* p) {
    auto* b = static_cast<std::uint8_t*>(p);
    std::swap(b[0], b[7]);
    std::swap(b[1], b[6]);
    std::swap(b[2], b[5]);
    std::swap(b[3], b[4]);
}

}  // namespace

TEST_CASE("byte-swapped files load to the same values") {
    // write a normal file, then produce an opposite-endian twin by swapping
    // every multi-byte header field we rely on plus the float64 payload
    const Volume v = random_volume({3, 4, 2}, 11);
    const auto native = (scratch_dir() / "native.nii").string();
    save_volume(v, native);

    std::vector<std::uint8_t> bytes;
    {
        std::ifstream f(native, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(f), {});
    }
    REQUIRE(bytes.size() == 352 + v.data.size() * 8);

    auto at = [&](std::size_t off) { return bytes.data() + off; };
    swap4b(at(0));                                     // sizeof_hdr
    for (int i = 0; i < 8; ++i) swap2b(at(40 + 2 * i));  // dim
    swap2b(at(70));                                    // datatype
    swap2b(at(72));                                    // bitpix
    for (int i = 0; i < 8; ++i) swap4b(at(76 + 4 * i));  // pixdim
    swap4b(at(108));                                   // vox_offset
    swap4b(at(112));                                   // scl_slope
    swap4b(at(116));                                   // scl_inter
    for (std::size_t i = 0; i < v.data.size(); ++i) swap8b(at(352 + 8 * i));

    const auto swapped = (scratch_dir() / "swapped.nii").string();
    {
        std::ofstream f(swapped, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    const Volume r = load_volume(swapped);
    CHECK(r.data == v.data);
    for (int a = 0; a < 3; ++a) CHECK(r.spacing[a] == doctest::Approx(v.spacing[a]).epsilon(1e-6));
}

TEST_CASE("int16 payloads honour scl_slope and scl_inter") {
    // craft a minimal int16 file by patching a saved header
    const auto path = (scratch_dir() / "scaled.nii").string();
    Volume proto;
    proto.data = Tensor({2, 2, 1});
    proto.data.fill(0.0);
    save_volume(proto, path);

    std::vector<std::uint8_t> bytes;
    {
        std::ifstream f(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(f), {});
    }
    const std::int16_t dtype = 4, bitpix = 16;
    std::memcpy(bytes.data() + 70, &dtype, 2);
    std::memcpy(bytes.data() + 72, &bitpix, 2);
    const float slope = 0.5f, inter = 10.0f;
    std::memcpy(bytes.data() + 112, &slope, 4);
    std::memcpy(bytes.data() + 116, &inter, 4);
    bytes.resize(352);
    const std::int16_t raw[4] = {-20, 0, 6, 100};
    bytes.insert(bytes.end(), reinterpret_cast<const std::uint8_t*>(raw),
                 reinterpret_cast<const std::uint8_t*>(raw) + sizeof(raw));
    {
        std::ofstream f(path, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }

    const Volume r = load_volume(path);
    const double expect[4] = {-20 * 0.5 + 10, 10.0, 6 * 0.5 + 10, 100 * 0.5 + 10};
    for (int i = 0; i < 4; ++i) CHECK(r.data[static_cast<std::size_t>(i)] == doctest::Approx(expect[i]));
}
