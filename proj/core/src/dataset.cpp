#include "hdiff/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "hdiff/errors.hpp"
#include "hdiff/nifti.hpp"
#include "hdiff/pipeline.hpp"
#include "hdiff/resample.hpp"

namespace hdiff {

namespace fs = std::filesystem;

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array())
        throw DataError("manifest: " + path + " must be an object with an \"entries\" array");
    std::vector<ManifestEntry> entries;
    for (const auto& e : j["entries"]) {
        if (!e.is_object() || !e.contains("volume") || !e.contains("mask"))
            throw DataError("manifest: every entry needs \"volume\" and \"mask\" paths");
        ManifestEntry m;
        m.volume = e["volume"].get<std::string>();
        m.mask = e["mask"].get<std::string>();
        if (e.contains("labels") && !e["labels"].is_null()) m.labels = e["labels"].get<std::string>();
        entries.push_back(std::move(m));
    }
    if (entries.empty()) throw DataError("manifest: " + path + " lists no cases");
    return entries;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
    nlohmann::json j;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json o{{"volume", e.volume}, {"mask", e.mask}};
        if (!e.labels.empty()) o["labels"] = e.labels;
        j["entries"].push_back(std::move(o));
    }
    std::ofstream out(path);
    if (!out) throw IoError("manifest: cannot write " + path);
    out << j.dump(2) << "\n";
}

namespace {

std::string resolve(const std::string& p, const fs::path& base) {
    fs::path fp(p);
    if (fp.is_absolute()) return fp.string();
    return (base / fp).string();
}

}  // namespace

TrainingSet load_training_set(const std::string& manifest_path) {
    const auto entries = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    TrainingSet set;
    for (const auto& e : entries) {
        Volume raw = load_volume(resolve(e.volume, base));
        MaskVolume mask = load_mask(resolve(e.mask, base));
        if (!mask.data.same_shape(raw.data))
            throw DataError("training set: mask " + e.mask + " does not match volume " + e.volume);
        auto [norm, rec] = normalize_intensity(raw);
        set.cases.push_back({std::move(norm), std::move(mask.data), rec});
    }
    return set;
}

std::pair<Tensor, Tensor> make_training_pair(const TrainingSet& set, StackOrientation orientation,
                                             const PairConfig& cfg, Rng& rng) {
    if (set.cases.empty()) throw DataError("make_training_pair: training set is empty");
    if (cfg.z_max < 2) throw ConfigError("make_training_pair: z_max must be >= 2");
    if (cfg.chunk < 1) throw ConfigError("make_training_pair: chunk must be >= 1");

    const std::size_t n = set.cases.size();
    const std::size_t start = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(n)));
    for (std::size_t offset = 0; offset < n; ++offset) {
        const TrainingCase& item = set.cases[(start + offset) % n];
        if (item.mask.sum() == 0.0) continue;  // nothing to learn from a caseless mask

        if (orientation == StackOrientation::Axial) {
            auto [subv, subm, rec] = crop_to_mask_z(item.volume.data, item.mask, cfg.margin);
            (void)rec;
            Tensor sv = volume_to_axial_stack(subv);
            Tensor sm = volume_to_axial_stack(subm);
            const double f = draw_spacing_factor(rng, cfg.f_lo, cfg.f_hi);
            sv = thin_stack(sv, f, false);
            sm = thin_stack(sm, f, true);
            if (sv.dim(0) > cfg.z_max) {
                sv = resize_stack(sv, cfg.z_max, false);
                sm = resize_stack(sm, cfg.z_max, true);
            }
            return {std::move(sv), std::move(sm)};
        }

        // coronal: a chunk of slices along y that touches the mask
        const Tensor cs_v = volume_to_coronal_stack(item.volume.data);
        const Tensor cs_m = volume_to_coronal_stack(item.mask);
        const int ny = cs_v.dim(0);
        if (ny <= cfg.chunk) return {cs_v, cs_m};

        const std::size_t plane = static_cast<std::size_t>(cs_m.dim(2)) * cs_m.dim(3);
        int y_first = -1, y_last = -1;
        for (int s = 0; s < ny; ++s) {
            const double* p = cs_m.data() + static_cast<std::size_t>(s) * plane;
            bool any = false;
            for (std::size_t i = 0; i < plane; ++i)
                if (p[i] != 0.0) {
                    any = true;
                    break;
                }
            if (!any) continue;
            if (y_first < 0) y_first = s;
            y_last = s;
        }
        const int lo = std::max(0, y_first - cfg.chunk + 1);
        const int hi = std::min(ny - cfg.chunk, y_last);
        const int s0 = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
        return {take_slices(cs_v, s0, cfg.chunk), take_slices(cs_m, s0, cfg.chunk)};
    }
    throw DataError("make_training_pair: every case in the set has an empty mask");
}

}  // namespace hdiff
