#include "hdiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'H', 'D', 'I', 'F'};
constexpr std::uint32_t kFormatVersion = 1;

json meta_to_json(const CheckpointMeta& m) {
    return json{{"version", m.version},
                {"stage", m.stage},
                {"iteration", m.iteration},
                {"seed", m.seed},
                {"schedule", {{"T", m.T}, {"beta_start", m.beta_start}, {"beta_end", m.beta_end}}},
                {"config",
                 {{"base_channels", m.config.base_channels},
                  {"channel_multipliers", m.config.channel_multipliers},
                  {"timestep_embedding_dim", m.config.timestep_embedding_dim},
                  {"conditioning_channels", m.config.conditioning_channels},
                  {"norm_groups", m.config.norm_groups},
                  {"attention_heads", m.config.attention_heads},
                  {"depthwise_width", m.config.depthwise_width},
                  {"use_tam", m.config.use_tam},
                  {"use_depthwise", m.config.use_depthwise}}}};
}

CheckpointMeta meta_from_json(const json& j) {
    CheckpointMeta m;
    m.version = j.at("version").get<int>();
    m.stage = j.at("stage").get<std::string>();
    m.iteration = j.at("iteration").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    const json& s = j.at("schedule");
    m.T = s.at("T").get<int>();
    m.beta_start = s.at("beta_start").get<double>();
    m.beta_end = s.at("beta_end").get<double>();
    const json& c = j.at("config");
    m.config.base_channels = c.at("base_channels").get<int>();
    m.config.channel_multipliers = c.at("channel_multipliers").get<std::vector<int>>();
    m.config.timestep_embedding_dim = c.at("timestep_embedding_dim").get<int>();
    m.config.conditioning_channels = c.at("conditioning_channels").get<int>();
    m.config.norm_groups = c.at("norm_groups").get<int>();
    m.config.attention_heads = c.at("attention_heads").get<int>();
    m.config.depthwise_width = c.at("depthwise_width").get<int>();
    m.config.use_tam = c.at("use_tam").get<bool>();
    m.config.use_depthwise = c.at("use_depthwise").get<bool>();
    return m;
}

void put_u32(std::ofstream& f, std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ofstream& f, std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) {
        const std::int32_t v = t.dim(d);
        f.write(reinterpret_cast<const char*>(&v), 4);
    }
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}

struct Reader {
    std::ifstream f;
    std::string path;
    std::uint64_t offset = 0;

    void pull(void* dst, std::size_t n) {
        f.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(f.gcount()) != n)
            throw IoError(path + ": truncated checkpoint at offset " + std::to_string(offset));
        offset += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        pull(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        pull(&v, 8);
        return v;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta, const ParamStore& store) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(kMagic, 4);
    std::uint32_t ver = kFormatVersion;
    f.write(reinterpret_cast<const char*>(&ver), 4);

    const std::string meta_str = meta_to_json(meta).dump();
    put_u64(f, meta_str.size());
    f.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    put_u64(f, store.count() * 3);
    for (const auto& [name, st] : store) {
        write_tensor(f, name, st.value);
        write_tensor(f, name + "#m", st.adam_m);
        write_tensor(f, name + "#v", st.adam_v);
    }
    if (!f) throw IoError("write failed for " + path);
}

std::pair<CheckpointMeta, ParamStore> load_checkpoint(const std::string& path) {
    Reader r;
    r.f.open(path, std::ios::binary);
    r.path = path;
    if (!r.f) throw IoError("cannot open " + path);

    char magic[4];
    r.pull(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw DataError(path + ": not a checkpoint archive (bad magic)");
    const std::uint32_t ver = r.u32();
    if (ver != kFormatVersion)
        throw DataError(path + ": unsupported checkpoint format version " + std::to_string(ver));

    const std::uint64_t meta_len = r.u64();
    std::string meta_str(meta_len, '\0');
    r.pull(meta_str.data(), meta_len);
    CheckpointMeta meta;
    try {
        meta = meta_from_json(json::parse(meta_str));
    } catch (const json::exception& e) {
        throw DataError(path + ": malformed checkpoint metadata: " + e.what());
    }

    const std::uint64_t n_tensors = r.u64();
    ParamStore store;
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name(name_len, '\0');
        r.pull(name.data(), name_len);
        const std::uint32_t ndim = r.u32();
        if (ndim < 1 || ndim > 4) throw DataError(path + ": tensor '" + name + "' has bad rank");
        std::vector<int> shape(ndim);
        for (auto& d : shape) {
            std::int32_t v;
            r.pull(&v, 4);
            d = v;
        }
        Tensor t(shape);
        r.pull(t.data(), t.size() * 8);

        const auto hash = name.find('#');
        const std::string base = hash == std::string::npos ? name : name.substr(0, hash);
        if (!store.has(base)) {
            if (hash != std::string::npos)
                throw DataError(path + ": optimizer moment '" + name + "' precedes its parameter");
            store.create(base, std::move(t));
        } else {
            ParamState& st = store.state(base);
            if (!st.value.same_shape(t)) throw DataError(path + ": shape mismatch for '" + name + "'");
            if (name.ends_with("#m"))
                st.adam_m = std::move(t);
            else if (name.ends_with("#v"))
                st.adam_v = std::move(t);
            else
                throw DataError(path + ": duplicate tensor '" + name + "'");
        }
    }
    return {meta, std::move(store)};
}

}  // namespace hdiff
