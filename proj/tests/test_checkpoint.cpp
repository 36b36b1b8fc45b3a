#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "hdiff/backbone.hpp"
#include "hdiff/checkpoint.hpp"
#include "hdiff/errors.hpp"
#include "hdiff/params.hpp"
#include "hdiff/rng.hpp"

using namespace hdiff;

namespace {

std::string ckpt_path(const char* name) {
    auto d = std::filesystem::temp_directory_path() / "hdiff_ckpt_tests";
    std::filesystem::create_directories(d);
    return (d / name).string();
}

BackboneConfig tiny_config() {
    BackboneConfig cfg;
    cfg.base_channels = 4;
    cfg.channel_multipliers = {1, 2};
    cfg.timestep_embedding_dim = 8;
    cfg.norm_groups = 2;
    cfg.attention_heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round trip restores parameters, moments and metadata") {
    BackboneConfig cfg = tiny_config();
    cfg.use_tam = true;
    ParamStore store;
    Rng rng(31);
    init_backbone_params(cfg, store, rng);

    // leave fingerprints in the optimizer state
    for (auto& [name, st] : store) {
        (void)name;
        for (std::size_t i = 0; i < st.adam_m.size(); ++i) {
            st.adam_m[i] = 0.01 * static_cast<double>(i % 7);
            st.adam_v[i] = 0.001 * static_cast<double>(i % 5);
        }
    }

    CheckpointMeta meta;
    meta.stage = "axial";
    meta.config = cfg;
    meta.T = 120;
    meta.beta_start = 1e-4 * 1000.0 / 120.0;
    meta.beta_end = 2e-2 * 1000.0 / 120.0;
    meta.iteration = 1234;
    meta.seed = 99;

    const std::string path = ckpt_path("round.ckpt");
    save_checkpoint(path, meta, store);
    auto [meta2, store2] = load_checkpoint(path);

    CHECK(meta2.stage == "axial");
    CHECK(meta2.T == 120);
    CHECK(meta2.beta_start == doctest::Approx(meta.beta_start).epsilon(1e-15));
    CHECK(meta2.beta_end == doctest::Approx(meta.beta_end).epsilon(1e-15));
    CHECK(meta2.iteration == 1234);
    CHECK(meta2.seed == 99);
    CHECK(meta2.config.base_channels == cfg.base_channels);
    CHECK(meta2.config.channel_multipliers == cfg.channel_multipliers);
    CHECK(meta2.config.use_tam == cfg.use_tam);
    CHECK(meta2.config.use_depthwise == cfg.use_depthwise);

    CHECK(store2.count() == store.count());
    for (const auto& [name, st] : store) {
        REQUIRE(store2.has(name));
        const ParamState& st2 = store2.state(name);
        CHECK(st2.value == st.value);    // float64 payload, bit-exact
        CHECK(st2.adam_m == st.adam_m);
        CHECK(st2.adam_v == st.adam_v);
    }
}

TEST_CASE("checkpoint loading reports corruption clearly") {
    CHECK_THROWS_AS(load_checkpoint(ckpt_path("nope.ckpt")), IoError);

    BackboneConfig cfg = tiny_config();
    ParamStore store;
    Rng rng(32);
    init_backbone_params(cfg, store, rng);
    CheckpointMeta meta;
    meta.stage = "coronal";
    meta.config = cfg;

    const std::string good = ckpt_path("good.ckpt");
    save_checkpoint(good, meta, store);

    // bad magic
    const std::string bad = ckpt_path("badmagic.ckpt");
    std::filesystem::copy_file(good, bad, std::filesystem::copy_options::overwrite_existing);
    {
        std::fstream f(bad, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), DataError);

    // truncated tensor payload
    const std::string trunc = ckpt_path("trunc.ckpt");
    {
        std::ifstream in(good, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        bytes.resize(bytes.size() / 2);
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(trunc), IoError);

    // unsupported format version
    const std::string badver = ckpt_path("badver.ckpt");
    std::filesystem::copy_file(good, badver, std::filesystem::copy_options::overwrite_existing);
    {
        std::fstream f(badver, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t v = 99;
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(load_checkpoint(badver), DataError);
}
