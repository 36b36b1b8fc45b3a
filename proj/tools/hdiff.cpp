// hdiff: phantom generation, two-stage training, hierarchical inpainting and
// masked-region evaluation for 3D volumes.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 data/I-O error,
// 3 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hdiff/backbone.hpp"
#include "hdiff/checkpoint.hpp"
#include "hdiff/dataset.hpp"
#include "hdiff/diffusion.hpp"
#include "hdiff/errors.hpp"
#include "hdiff/metrics.hpp"
#include "hdiff/nifti.hpp"
#include "hdiff/phantom.hpp"
#include "hdiff/pipeline.hpp"
#include "hdiff/schedule.hpp"
#include "hdiff/train.hpp"
#include "hdiff/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hdiff;

namespace {

void check_device() {
    const char* dev = std::getenv("HDIFF_DEVICE");
    if (dev != nullptr && std::string(dev) != "" && std::string(dev) != "cpu")
        throw ConfigError(std::string("HDIFF_DEVICE=") + dev + " is not available; only 'cpu' is supported");
}

void write_config(const json& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write resolved config " + path);
    f << cfg.dump(2) << "\n";
}

// ---- phantom -------------------------------------------------------------

struct PhantomArgs {
    std::string out_dir;
    int count = 8;
    std::vector<int> shape = {32, 32, 16};
    std::vector<double> lesion_radii;  // empty -> proportional default
    std::uint64_t seed = 1;
};

int cmd_phantom(const PhantomArgs& a) {
    if (a.count < 1) throw ConfigError("phantom: --count must be >= 1");
    if (a.shape.size() != 3) throw ConfigError("phantom: --shape needs three values");
    fs::create_directories(a.out_dir);

    std::array<int, 3> shape{a.shape[0], a.shape[1], a.shape[2]};
    std::array<double, 3> radii;
    if (a.lesion_radii.empty()) {
        radii = {shape[0] / 8.0, shape[1] / 8.0, shape[2] / 6.0};
    } else {
        if (a.lesion_radii.size() != 3) throw ConfigError("phantom: --lesion-radii needs three values");
        radii = {a.lesion_radii[0], a.lesion_radii[1], a.lesion_radii[2]};
    }

    std::vector<ManifestEntry> entries;
    Rng master(a.seed);
    for (int i = 0; i < a.count; ++i) {
        const Phantom p = generate_phantom(a.seed + static_cast<std::uint64_t>(i), shape);
        MaskVolume lesion;
        lesion.data = ellipsoid_mask(shape, {shape[0] / 2.0, shape[1] / 2.0, shape[2] / 2.0}, radii);
        lesion.spacing = p.volume.spacing;
        Rng place = master.fork(static_cast<std::uint64_t>(i));
        const MaskVolume placed = transplant_mask(p.volume, lesion, place);

        const std::string stem = "case" + std::to_string(i);
        save_volume(p.volume, (fs::path(a.out_dir) / (stem + "_t1.nii.gz")).string());
        save_mask(placed, (fs::path(a.out_dir) / (stem + "_mask.nii.gz")).string());
        save_labels(p.labels, (fs::path(a.out_dir) / (stem + "_labels.nii.gz")).string());
        entries.push_back({stem + "_t1.nii.gz", stem + "_mask.nii.gz", stem + "_labels.nii.gz"});
        std::printf("wrote %s (%dx%dx%d)\n", stem.c_str(), shape[0], shape[1], shape[2]);
    }
    save_manifest(entries, (fs::path(a.out_dir) / "manifest.json").string());

    write_config(json{{"command", "phantom"},
                      {"out_dir", a.out_dir},
                      {"count", a.count},
                      {"shape", a.shape},
                      {"lesion_radii", {radii[0], radii[1], radii[2]}},
                      {"seed", a.seed}},
                 (fs::path(a.out_dir) / "phantom_config.json").string());
    return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string stage;  // axial | coronal
    std::string manifest;
    std::string out_dir;
    std::string resume;
    int iterations = 2000;
    std::uint64_t seed = 0;
    double lr = 1e-4;
    int timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    int base_channels = 32;
    std::vector<int> channel_mults = {1, 2, 4, 4};
    int norm_groups = 8;
    int heads = 4;
    bool use_tam = false;
    int z_max = 24;
    int chunk = 16;
    int margin = 4;
    double f_lo = 1.0, f_hi = 3.0;
    int log_every = 10;
};

int cmd_train(const TrainArgs& a) {
    if (a.stage != "axial" && a.stage != "coronal")
        throw ConfigError("train: --stage must be 'axial' or 'coronal'");
    fs::create_directories(a.out_dir);

    BackboneConfig cfg;
    ParamStore store;
    int start_iteration = 0;
    if (!a.resume.empty()) {
        auto [meta, loaded] = load_checkpoint(a.resume);
        if (meta.stage != a.stage)
            throw DataError("train: checkpoint " + a.resume + " holds stage '" + meta.stage +
                            "', requested '" + a.stage + "'");
        if (meta.T != a.timesteps || meta.beta_start != a.beta_start || meta.beta_end != a.beta_end)
            throw DataError("train: checkpoint schedule differs from the requested one; "
                            "drop the overriding flags or retrain from scratch");
        cfg = meta.config;
        store = std::move(loaded);
        start_iteration = meta.iteration;
    } else {
        cfg.base_channels = a.base_channels;
        cfg.channel_multipliers = a.channel_mults;
        cfg.norm_groups = a.norm_groups;
        cfg.attention_heads = a.heads;
        cfg.use_tam = a.use_tam;
        cfg.validate();
        Rng init_rng = Rng(a.seed).fork(0xFFFFFFFFULL);  // outside the per-iteration streams
        init_backbone_params(cfg, store, init_rng);
    }

    const NoiseSchedule schedule = build_linear_schedule(a.timesteps, a.beta_start, a.beta_end);
    const TrainingSet set = load_training_set(a.manifest);

    PairConfig pc;
    pc.z_max = a.z_max;
    pc.margin = a.margin;
    pc.chunk = a.chunk;
    pc.f_lo = a.f_lo;
    pc.f_hi = a.f_hi;
    const StackOrientation orient = a.stage == "axial" ? StackOrientation::Axial : StackOrientation::Coronal;
    ExampleSampler sampler = [&set, orient, pc](Rng& rng) {
        return make_training_pair(set, orient, pc, rng);
    };

    TrainConfig tc;
    tc.iterations = a.iterations;
    tc.start_iteration = start_iteration;
    tc.adam.lr = a.lr;
    tc.seed = a.seed;
    tc.mode = a.stage == "axial" ? ContextMode::Inpaint : ContextMode::Refine;
    tc.log_every = a.log_every;

    const std::string loss_path = (fs::path(a.out_dir) / (a.stage + "_loss.csv")).string();
    std::ofstream loss_csv(loss_path, start_iteration > 0 ? std::ios::app : std::ios::trunc);
    if (!loss_csv) throw IoError("cannot write loss log " + loss_path);
    if (start_iteration == 0) loss_csv << "iteration,loss\n";

    std::printf("training %s stage: %d -> %d iterations, %zu cases, lr %g, tam %s\n", a.stage.c_str(),
                start_iteration, a.iterations, set.cases.size(), a.lr, cfg.use_tam ? "on" : "off");
    const TrainResult result =
        train_loop(cfg, store, schedule, sampler, tc, [&](int iter, double loss) {
            if (iter % tc.log_every == 0 || iter + 1 == tc.iterations) {
                loss_csv << iter << "," << loss << "\n";
                loss_csv.flush();
                std::printf("iter %6d  loss %.6f\n", iter, loss);
            }
        });

    CheckpointMeta meta;
    meta.stage = a.stage;
    meta.config = cfg;
    meta.T = a.timesteps;
    meta.beta_start = a.beta_start;
    meta.beta_end = a.beta_end;
    meta.iteration = a.iterations;
    meta.seed = a.seed;
    const std::string ckpt_path = (fs::path(a.out_dir) / (a.stage + ".ckpt")).string();
    save_checkpoint(ckpt_path, meta, store);
    std::printf("final loss %.6f, checkpoint %s\n", result.final_loss, ckpt_path.c_str());

    write_config(json{{"command", "train"},
                      {"stage", a.stage},
                      {"manifest", a.manifest},
                      {"out_dir", a.out_dir},
                      {"resume", a.resume},
                      {"iterations", a.iterations},
                      {"start_iteration", start_iteration},
                      {"seed", a.seed},
                      {"lr", a.lr},
                      {"timesteps", a.timesteps},
                      {"beta_start", a.beta_start},
                      {"beta_end", a.beta_end},
                      {"base_channels", cfg.base_channels},
                      {"channel_multipliers", cfg.channel_multipliers},
                      {"norm_groups", cfg.norm_groups},
                      {"attention_heads", cfg.attention_heads},
                      {"use_tam", cfg.use_tam},
                      {"z_max", a.z_max},
                      {"chunk", a.chunk},
                      {"margin", a.margin},
                      {"spacing_factor", {a.f_lo, a.f_hi}},
                      {"log_every", a.log_every}},
                 (fs::path(a.out_dir) / (a.stage + "_train_config.json")).string());
    return 0;
}

// ---- inpaint -------------------------------------------------------------

struct InpaintArgs {
    std::string volume, mask, ckpt1, ckpt2, out;
    int steps = 0;
    std::uint64_t seed = 0;
    int z_max = 24;
    int chunk = 16;
    int overlap = 4;
    int margin = 4;
    bool stage1_only = false;
    bool save_stages = false;
};

int cmd_inpaint(const InpaintArgs& a) {
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    const Volume raw = load_volume(a.volume);
    const MaskVolume mask = load_mask(a.mask);
    if (!mask.data.same_shape(raw.data)) throw DataError("inpaint: mask shape differs from the volume");

    auto [meta1, store1] = load_checkpoint(a.ckpt1);
    if (meta1.stage != "axial")
        throw DataError("inpaint: " + a.ckpt1 + " is a '" + meta1.stage + "' checkpoint, expected 'axial'");
    CheckpointMeta meta2 = meta1;
    ParamStore store2;
    if (!a.stage1_only) {
        auto [m2, s2] = load_checkpoint(a.ckpt2);
        if (m2.stage != "coronal")
            throw DataError("inpaint: " + a.ckpt2 + " is a '" + m2.stage + "' checkpoint, expected 'coronal'");
        if (m2.T != meta1.T || m2.beta_start != meta1.beta_start || m2.beta_end != meta1.beta_end)
            throw DataError("inpaint: the two checkpoints were trained against different noise schedules");
        meta2 = m2;
        store2 = std::move(s2);
    }

    auto [norm, nrec] = normalize_intensity(raw);

    InpaintRequest req;
    req.volume = norm;
    req.mask = mask.data;
    req.config1 = meta1.config;
    req.config2 = a.stage1_only ? meta1.config : meta2.config;
    req.params1 = &store1;
    req.params2 = a.stage1_only ? &store1 : &store2;
    req.schedule = build_linear_schedule(meta1.T, meta1.beta_start, meta1.beta_end);
    req.steps = a.steps;
    req.z_max = a.z_max;
    req.margin = a.margin;
    req.chunk = a.chunk;
    req.overlap = a.overlap;
    req.seed = a.seed;

    Volume result_norm;
    std::vector<StageOutput> trace;
    if (a.stage1_only) {
        req.validate();
        const int d = 1 << (req.config1.num_resolutions() - 1);
        auto [pvol, prec] = pad_to_multiple(req.volume.data, d);
        InpaintRequest padded = req;
        padded.mask = pad_like(req.mask, prec);
        padded.volume.data = std::move(pvol);
        StageOutput coarse = axial_stage(padded);
        StageOutput restored = restore_stage(coarse, padded);
        trace.push_back(coarse);
        trace.push_back(restored);
        result_norm = req.volume;
        result_norm.data = unpad(restored.volume.data, prec);
    } else {
        result_norm = run_hierarchical_inpaint(req, &trace);
    }

    Volume result = denormalize_intensity(result_norm, nrec);
    // unmasked voxels carry the raw input bit-exactly, not a round-tripped copy
    for (std::size_t i = 0; i < result.data.size(); ++i)
        if (mask.data[i] == 0.0) result.data[i] = raw.data[i];
    save_volume(result, a.out);
    std::printf("wrote %s\n", a.out.c_str());

    if (a.save_stages) {
        const fs::path base(a.out);
        std::string stem = base.stem().string();  // strip both halves of .nii.gz
        if (stem.size() > 4 && stem.ends_with(".nii")) stem.resize(stem.size() - 4);
        for (const auto& st : trace) {
            Volume sv = denormalize_intensity(st.volume, nrec);
            const std::string p = (base.parent_path() / (stem + "." + st.stage_tag + ".nii.gz")).string();
            save_volume(sv, p);
            std::printf("wrote %s\n", p.c_str());
        }
    }

    write_config(json{{"command", "inpaint"},
                      {"volume", a.volume},
                      {"mask", a.mask},
                      {"ckpt1", a.ckpt1},
                      {"ckpt2", a.stage1_only ? "" : a.ckpt2},
                      {"out", a.out},
                      {"steps", a.steps == 0 ? meta1.T : a.steps},
                      {"seed", a.seed},
                      {"z_max", a.z_max},
                      {"chunk", a.chunk},
                      {"overlap", a.overlap},
                      {"margin", a.margin},
                      {"stage1_only", a.stage1_only},
                      {"timesteps", meta1.T},
                      {"beta_start", meta1.beta_start},
                      {"beta_end", meta1.beta_end},
                      {"normalize_lo", nrec.lo},
                      {"normalize_hi", nrec.hi}},
                 a.out + ".config.json");
    return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalArgs {
    std::string manifest;
    std::string pred_dir;
    std::string report;
    bool no_dice = false;
    bool manifest_labels = false;
};

int cmd_eval(const EvalArgs& a) {
    const auto entries = load_manifest(a.manifest);
    const fs::path base = fs::path(a.manifest).parent_path();

    std::vector<Tensor> preds, truths, masks, pred_labels, truth_labels;
    std::vector<std::string> names;
    for (const auto& e : entries) {
        const fs::path vpath = fs::path(e.volume).is_absolute() ? fs::path(e.volume) : base / e.volume;
        const fs::path mpath = fs::path(e.mask).is_absolute() ? fs::path(e.mask) : base / e.mask;
        const fs::path ppath = fs::path(a.pred_dir) / vpath.filename();

        const Volume truth = load_volume(vpath.string());
        const Volume pred = load_volume(ppath.string());
        const MaskVolume mask = load_mask(mpath.string());
        if (!pred.data.same_shape(truth.data))
            throw DataError("eval: prediction " + ppath.string() + " does not match " + vpath.string());
        if (!mask.data.same_shape(truth.data))
            throw DataError("eval: mask " + mpath.string() + " does not match " + vpath.string());

        if (!a.no_dice) {
            // both sides go through the same segmenter so identical volumes
            // score 1.0; --manifest-labels swaps in the stored truth labels
            pred_labels.push_back(threshold_segment(pred).data);
            if (a.manifest_labels && !e.labels.empty()) {
                const fs::path lpath = fs::path(e.labels).is_absolute() ? fs::path(e.labels) : base / e.labels;
                truth_labels.push_back(load_labels(lpath.string()).data);
            } else {
                truth_labels.push_back(threshold_segment(truth).data);
            }
        }
        preds.push_back(pred.data);
        truths.push_back(truth.data);
        masks.push_back(mask.data);
        names.push_back(vpath.filename().string());
    }

    const MetricsReport rep = evaluate_suite(preds, truths, masks, pred_labels, truth_labels, names);
    for (const auto& vm : rep.per_volume) {
        std::printf("%-24s mse %.6f  psnr %7.3f  ssim %.4f", vm.name.c_str(), vm.mse, vm.psnr, vm.ssim);
        for (const auto& [cls, d] : vm.dice_by_class) std::printf("  dice%d %.4f", cls, d);
        std::printf("\n");
    }
    std::printf("aggregate (mean +/- std over %zu volumes):\n", rep.per_volume.size());
    std::printf("  mse  %.6f +/- %.6f\n", rep.mse.mean, rep.mse.stddev);
    std::printf("  psnr %.3f +/- %.3f\n", rep.psnr.mean, rep.psnr.stddev);
    std::printf("  ssim %.4f +/- %.4f\n", rep.ssim.mean, rep.ssim.stddev);
    for (const auto& [cls, agg] : rep.dice_by_class)
        std::printf("  dice class %d: %.4f +/- %.4f\n", cls, agg.mean, agg.stddev);

    if (!a.report.empty()) {
        if (fs::path(a.report).has_parent_path()) fs::create_directories(fs::path(a.report).parent_path());
        write_report(rep, a.report);
        write_config(json{{"command", "eval"},
                          {"manifest", a.manifest},
                          {"pred_dir", a.pred_dir},
                          {"report", a.report},
                          {"dice", !a.no_dice},
                          {"manifest_labels", a.manifest_labels}},
                     a.report + ".config.json");
        std::printf("report written to %s\n", a.report.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical two-stage diffusion inpainting for 3D volumes"};
    app.require_subcommand(1);

    PhantomArgs pa;
    CLI::App* sp = app.add_subcommand("phantom", "generate a synthetic head corpus with lesion masks");
    sp->add_option("--out-dir", pa.out_dir, "output directory")->required();
    sp->add_option("--count", pa.count, "number of cases");
    sp->add_option("--shape", pa.shape, "grid dims, e.g. --shape 32 32 16")->expected(3);
    sp->add_option("--lesion-radii", pa.lesion_radii, "lesion ellipsoid radii in voxels")->expected(3);
    sp->add_option("--seed", pa.seed, "master seed");

    TrainArgs ta;
    CLI::App* st = app.add_subcommand("train", "train one denoising stage");
    st->add_option("--stage", ta.stage, "axial | coronal")->required();
    st->add_option("--manifest", ta.manifest, "training manifest")->required();
    st->add_option("--out-dir", ta.out_dir, "checkpoint/log directory")->required();
    st->add_option("--resume", ta.resume, "checkpoint to continue from");
    st->add_option("--iterations", ta.iterations, "total iterations (end index when resuming)");
    st->add_option("--seed", ta.seed, "master seed");
    st->add_option("--lr", ta.lr, "Adam learning rate");
    st->add_option("--timesteps", ta.timesteps, "diffusion steps T");
    st->add_option("--beta-start", ta.beta_start, "first noise variance");
    st->add_option("--beta-end", ta.beta_end, "last noise variance");
    st->add_option("--base-channels", ta.base_channels, "first-level channel count");
    st->add_option("--channel-mults", ta.channel_mults, "per-level channel multipliers");
    st->add_option("--norm-groups", ta.norm_groups, "group-norm groups");
    st->add_option("--heads", ta.heads, "attention heads");
    st->add_flag("--use-tam", ta.use_tam, "enable cross-slice attention blocks");
    st->add_option("--z-max", ta.z_max, "axial slice budget");
    st->add_option("--chunk", ta.chunk, "coronal chunk depth");
    st->add_option("--margin", ta.margin, "crop margin around the mask");
    st->add_option("--spacing-lo", ta.f_lo, "spacing augmentation lower factor");
    st->add_option("--spacing-hi", ta.f_hi, "spacing augmentation upper factor");
    st->add_option("--log-every", ta.log_every, "loss log cadence");

    InpaintArgs ia;
    CLI::App* si = app.add_subcommand("inpaint", "hierarchical two-stage inpainting");
    si->add_option("--volume", ia.volume, "input volume (.nii/.nii.gz)")->required();
    si->add_option("--mask", ia.mask, "binary mask of the region to fill")->required();
    si->add_option("--ckpt1", ia.ckpt1, "axial-stage checkpoint")->required();
    si->add_option("--ckpt2", ia.ckpt2, "coronal-stage checkpoint");
    si->add_option("--out", ia.out, "output volume path")->required();
    si->add_option("--steps", ia.steps, "reverse steps (0 = full schedule)");
    si->add_option("--seed", ia.seed, "sampling seed");
    si->add_option("--z-max", ia.z_max, "axial slice budget");
    si->add_option("--chunk", ia.chunk, "coronal chunk depth");
    si->add_option("--overlap", ia.overlap, "coronal chunk overlap");
    si->add_option("--margin", ia.margin, "crop margin around the mask");
    si->add_flag("--stage1-only", ia.stage1_only, "stop after depth restoration");
    si->add_flag("--save-stages", ia.save_stages, "also write per-stage volumes");

    EvalArgs ea;
    CLI::App* se = app.add_subcommand("eval", "masked-region metrics for predictions");
    se->add_option("--manifest", ea.manifest, "truth manifest")->required();
    se->add_option("--pred-dir", ea.pred_dir, "directory of predictions (same filenames)")->required();
    se->add_option("--report", ea.report, "metrics report output path");
    se->add_flag("--no-dice", ea.no_dice, "skip tissue-overlap scoring");
    se->add_flag("--manifest-labels", ea.manifest_labels, "score truth tissue from stored labels instead of re-segmenting");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        check_device();
        if (sp->parsed()) return cmd_phantom(pa);
        if (st->parsed()) return cmd_train(ta);
        if (si->parsed()) return cmd_inpaint(ia);
        if (se->parsed()) return cmd_eval(ea);
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {  // includes IoError
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
