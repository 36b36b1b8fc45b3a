#include "hdiff/metrics.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

using nlohmann::json;

void check_triplet(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    if (!pred.same_shape(truth) || !pred.same_shape(mask))
        throw DataError("metrics: pred/truth/mask shapes differ");
}

std::size_t mask_count(const Tensor& mask) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) n += mask[i] != 0.0;
    return n;
}

}  // namespace

double masked_mse(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    check_triplet(pred, truth, mask);
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const double d = pred[i] - truth[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw DataError("masked_mse: empty mask");
    return acc / static_cast<double>(n);
}

double masked_psnr(const Tensor& pred, const Tensor& truth, const Tensor& mask, double peak) {
    const double mse = masked_mse(pred, truth, mask);
    if (mse < 1e-10) return 100.0;  // cap instead of +inf
    return 10.0 * std::log10(peak * peak / mse);
}

double masked_ssim(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    check_triplet(pred, truth, mask);
    if (pred.ndim() != 3) throw ConfigError("masked_ssim: rank-3 volumes required");
    constexpr int kRadius = 3;  // 7x7x7 window
    constexpr double kSigma = 1.5;
    constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
    constexpr double kC2 = 0.03 * 0.03;

    double w1d[2 * kRadius + 1];
    double wsum = 0.0;
    for (int i = -kRadius; i <= kRadius; ++i) {
        w1d[i + kRadius] = std::exp(-0.5 * i * i / (kSigma * kSigma));
        wsum += w1d[i + kRadius];
    }
    for (double& w : w1d) w /= wsum;

    const int nx = pred.dim(0), ny = pred.dim(1), nz = pred.dim(2);
    double acc = 0.0;
    std::size_t centers = 0;
    for (int k = kRadius; k < nz - kRadius; ++k)
        for (int j = kRadius; j < ny - kRadius; ++j)
            for (int i = kRadius; i < nx - kRadius; ++i) {
                if (mask.vox(i, j, k) == 0.0) continue;
                double mp = 0.0, mt = 0.0, pp = 0.0, tt = 0.0, pt = 0.0;
                for (int dz = -kRadius; dz <= kRadius; ++dz)
                    for (int dy = -kRadius; dy <= kRadius; ++dy)
                        for (int dx = -kRadius; dx <= kRadius; ++dx) {
                            const double w = w1d[dx + kRadius] * w1d[dy + kRadius] * w1d[dz + kRadius];
                            const double p = pred.vox(i + dx, j + dy, k + dz);
                            const double t = truth.vox(i + dx, j + dy, k + dz);
                            mp += w * p;
                            mt += w * t;
                            pp += w * p * p;
                            tt += w * t * t;
                            pt += w * p * t;
                        }
                const double vp = pp - mp * mp;
                const double vt = tt - mt * mt;
                const double cov = pt - mp * mt;
                const double s = ((2.0 * mp * mt + kC1) * (2.0 * cov + kC2)) /
                                 ((mp * mp + mt * mt + kC1) * (vp + vt + kC2));
                acc += s;
                ++centers;
            }
    if (centers == 0)
        throw DataError("masked_ssim: no masked voxel admits a full 7x7x7 window inside the volume");
    return acc / static_cast<double>(centers);
}

double dice(const Tensor& labels_a, const Tensor& labels_b, int class_id, const Tensor& mask) {
    check_triplet(labels_a, labels_b, mask);
    if (mask_count(mask) == 0) throw DataError("dice: empty mask");
    std::size_t na = 0, nb = 0, inter = 0;
    const double c = static_cast<double>(class_id);
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        if (mask[i] == 0.0) continue;
        const bool a = labels_a[i] == c;
        const bool b = labels_b[i] == c;
        na += a;
        nb += b;
        inter += a && b;
    }
    if (na + nb == 0) return 1.0;  // class absent from both
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace {

Aggregate aggregate(const std::vector<double>& xs) {
    Aggregate a;
    if (xs.empty()) return a;
    double s = 0.0;
    for (double x : xs) s += x;
    a.mean = s / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double v = 0.0;
        for (double x : xs) v += (x - a.mean) * (x - a.mean);
        a.stddev = std::sqrt(v / static_cast<double>(xs.size() - 1));
    }
    return a;
}

}  // namespace

MetricsReport evaluate_suite(const std::vector<Tensor>& preds, const std::vector<Tensor>& truths,
                             const std::vector<Tensor>& masks, const std::vector<Tensor>& pred_labels,
                             const std::vector<Tensor>& truth_labels, const std::vector<std::string>& names) {
    const std::size_t n = preds.size();
    if (truths.size() != n || masks.size() != n)
        throw DataError("evaluate_suite: pred/truth/mask collection sizes differ");
    const bool with_dice = !pred_labels.empty() || !truth_labels.empty();
    if (with_dice && (pred_labels.size() != n || truth_labels.size() != n))
        throw DataError("evaluate_suite: label collections misaligned with volumes");
    if (!names.empty() && names.size() != n) throw DataError("evaluate_suite: names misaligned with volumes");
    if (n == 0) throw DataError("evaluate_suite: empty suite");

    MetricsReport rep;
    std::vector<double> mses, psnrs, ssims;
    std::map<int, std::vector<double>> dices;
    for (std::size_t i = 0; i < n; ++i) {
        VolumeMetrics vm;
        vm.name = names.empty() ? "volume_" + std::to_string(i) : names[i];
        vm.mse = masked_mse(preds[i], truths[i], masks[i]);
        vm.psnr = masked_psnr(preds[i], truths[i], masks[i]);
        vm.ssim = masked_ssim(preds[i], truths[i], masks[i]);
        mses.push_back(vm.mse);
        psnrs.push_back(vm.psnr);
        ssims.push_back(vm.ssim);
        if (with_dice)
            for (int c = 1; c <= 3; ++c) {
                const double d = dice(pred_labels[i], truth_labels[i], c, masks[i]);
                vm.dice_by_class[c] = d;
                dices[c].push_back(d);
            }
        rep.per_volume.push_back(std::move(vm));
    }
    rep.mse = aggregate(mses);
    rep.psnr = aggregate(psnrs);
    rep.ssim = aggregate(ssims);
    for (auto& [c, v] : dices) rep.dice_by_class[c] = aggregate(v);
    return rep;
}

namespace {

json agg_to_json(const Aggregate& a) { return json{{"mean", a.mean}, {"std", a.stddev}}; }

Aggregate agg_from_json(const json& j) {
    Aggregate a;
    a.mean = j.at("mean").get<double>();
    a.stddev = j.at("std").get<double>();
    return a;
}

}  // namespace

void write_report(const MetricsReport& report, const std::string& path) {
    json j;
    j["report_version"] = report.report_version;
    j["volumes"] = json::array();
    for (const auto& vm : report.per_volume) {
        json v{{"name", vm.name}, {"masked_mse", vm.mse}, {"masked_psnr", vm.psnr}, {"masked_ssim", vm.ssim}};
        if (!vm.dice_by_class.empty()) {
            json d = json::object();
            for (const auto& [c, val] : vm.dice_by_class) d[std::to_string(c)] = val;
            v["dice"] = d;
        }
        j["volumes"].push_back(v);
    }
    json agg{{"masked_mse", agg_to_json(report.mse)},
             {"masked_psnr", agg_to_json(report.psnr)},
             {"masked_ssim", agg_to_json(report.ssim)}};
    if (!report.dice_by_class.empty()) {
        json d = json::object();
        for (const auto& [c, a] : report.dice_by_class) d[std::to_string(c)] = agg_to_json(a);
        agg["dice"] = d;
    }
    j["aggregate"] = agg;

    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("write failed for " + path);
}

MetricsReport read_report(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed report " + path + ": " + e.what());
    }
    MetricsReport rep;
    rep.report_version = j.at("report_version").get<int>();
    for (const auto& v : j.at("volumes")) {
        VolumeMetrics vm;
        vm.name = v.at("name").get<std::string>();
        vm.mse = v.at("masked_mse").get<double>();
        vm.psnr = v.at("masked_psnr").get<double>();
        vm.ssim = v.at("masked_ssim").get<double>();
        if (v.contains("dice"))
            for (const auto& [key, val] : v.at("dice").items()) vm.dice_by_class[std::stoi(key)] = val.get<double>();
        rep.per_volume.push_back(std::move(vm));
    }
    const json& agg = j.at("aggregate");
    rep.mse = agg_from_json(agg.at("masked_mse"));
    rep.psnr = agg_from_json(agg.at("masked_psnr"));
    rep.ssim = agg_from_json(agg.at("masked_ssim"));
    if (agg.contains("dice"))
        for (const auto& [key, val] : agg.at("dice").items()) rep.dice_by_class[std::stoi(key)] = agg_from_json(val);
    return rep;
}

}  // namespace hdiff
