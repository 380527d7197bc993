// raediff: train a trigger-biased denoiser, grade datasets into permission
// levels, self-generate reversible adversarial examples, and restore them.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "raediff/parallel.hpp"
#include "raediff/raediff.hpp"

namespace fs = std::filesystem;
using namespace raediff;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct ScheduleOpts {
    int timesteps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
};

void add_schedule_flags(CLI::App* cmd, ScheduleOpts& opts) {
    cmd->add_option("--timesteps", opts.timesteps, "Diffusion steps T")->capture_default_str();
    cmd->add_option("--beta-min", opts.beta_min, "First beta of the linear schedule")
        ->capture_default_str();
    cmd->add_option("--beta-max", opts.beta_max, "Last beta of the linear schedule")
        ->capture_default_str();
}

ImageTensor load_trigger(const std::string& path) { return scale_trigger(read_image(path)); }

std::vector<PermissionLevel> to_levels(const std::vector<int>& t_sn) {
    std::vector<PermissionLevel> levels;
    levels.reserve(t_sn.size());
    for (std::size_t i = 0; i < t_sn.size(); ++i)
        levels.push_back({static_cast<int>(i) + 1, t_sn[i]});
    return levels;
}

void require_uniform_shape(const std::vector<std::pair<std::string, ImageTensor>>& images,
                           const ImageTensor& trigger) {
    if (images.empty())
        throw std::invalid_argument("input directory contains no PGM/PPM images");
    for (const auto& [name, img] : images)
        if (!img.same_shape(images.front().second))
            throw std::invalid_argument("dataset images disagree in shape: " + name);
    if (!trigger.same_shape(images.front().second))
        throw std::invalid_argument(
            "trigger dimensions do not match the dataset (no resampling is applied)");
}

std::string format_metric(double v) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string in_dir, trigger_path, out_path, loss_log;
    ScheduleOpts sched;
    double gamma = 0.6;
    long iterations = 20000;
    int batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int hidden1 = 128, hidden2 = 128;
};

int cmd_train(const TrainOpts& o) {
    const auto images = load_image_dir(o.in_dir);
    const ImageTensor trigger = load_trigger(o.trigger_path);
    require_uniform_shape(images, trigger);
    const VarianceSchedule sched =
        linear_beta_schedule(o.sched.timesteps, o.sched.beta_min, o.sched.beta_max);
    const BgdParams bgd = make_bgd(trigger, o.gamma);

    std::vector<ImageTensor> dataset;
    dataset.reserve(images.size());
    for (const auto& [name, img] : images) dataset.push_back(img);

    const ImageTensor& shape = dataset.front();
    TinyDenoiser model(shape.height, shape.width, shape.channels, o.hidden1, o.hidden2, sched,
                       bgd, o.seed);
    std::cout << "training on " << dataset.size() << " images, "
              << model.parameter_count() << " parameters, " << o.iterations << " iterations\n";

    TrainConfig cfg;
    cfg.iterations = o.iterations;
    cfg.batch_size = o.batch;
    cfg.learning_rate = o.lr;
    cfg.seed = o.seed;
    const TrainResult result = train(std::move(model), dataset, cfg, sched, bgd);

    save_checkpoint(result.model, o.out_path);
    const std::string log_path = o.loss_log.empty() ? o.out_path + ".loss.csv" : o.loss_log;
    std::ofstream log(log_path, std::ios::trunc);
    if (!log) throw std::invalid_argument("cannot open loss log for write: " + log_path);
    log << "iteration,loss\n";
    for (std::size_t i = 0; i < result.loss_history.size(); ++i)
        log << i << "," << format_metric(result.loss_history[i]) << "\n";

    if (!result.loss_history.empty())
        std::cout << "final loss " << result.loss_history.back() << "\n";
    std::cout << "checkpoint written to " << o.out_path << "\nloss log written to " << log_path
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// grade / protect

struct ProtectOpts {
    std::string in_dir, trigger_path, checkpoint, out_dir, manifest_path;
    ScheduleOpts sched;
    double gamma = 0.6;
    std::vector<int> level_steps = {1, 2, 3};
    int t_r = 20;
    double eta = 1.4;
    std::uint64_t seed = 0;
};

DatasetManifest build_manifest(const ProtectOpts& o, const std::string& trigger_digest,
                               const std::vector<std::pair<std::string, ImageTensor>>& images) {
    DatasetManifest m;
    m.timesteps = o.sched.timesteps;
    m.beta_min = o.sched.beta_min;
    m.beta_max = o.sched.beta_max;
    m.gamma = o.gamma;
    m.trigger_sha256 = trigger_digest;
    m.levels = to_levels(o.level_steps);
    m.adverse_steps = o.t_r;
    m.reverse_factor = o.eta;
    m.master_seed = o.seed;
    for (std::size_t i = 0; i < images.size(); ++i)
        m.images.push_back({images[i].first, derive_seed(o.seed, i)});
    return m;
}

// Flags that the user set explicitly win over manifest values on replay.
void apply_manifest(ProtectOpts& o, const CLI::App* cmd) {
    const DatasetManifest m = read_manifest(o.manifest_path);
    if (!cmd->count("--timesteps")) o.sched.timesteps = m.timesteps;
    if (!cmd->count("--beta-min")) o.sched.beta_min = m.beta_min;
    if (!cmd->count("--beta-max")) o.sched.beta_max = m.beta_max;
    if (!cmd->count("--gamma")) o.gamma = m.gamma;
    if (!cmd->count("--levels")) {
        o.level_steps.clear();
        for (const PermissionLevel& lv : m.levels) o.level_steps.push_back(lv.t_sn);
    }
    if (!cmd->count("--t-r")) o.t_r = m.adverse_steps;
    if (!cmd->count("--eta")) o.eta = m.reverse_factor;
    if (!cmd->count("--seed")) o.seed = m.master_seed;
}

int run_protect_like(const ProtectOpts& o, bool with_agp) {
    const auto images = load_image_dir(o.in_dir);
    const ImageTensor trigger = load_trigger(o.trigger_path);
    require_uniform_shape(images, trigger);
    const std::string digest = sha256_file(o.trigger_path);
    if (!o.manifest_path.empty()) {
        const DatasetManifest prev = read_manifest(o.manifest_path);
        if (prev.trigger_sha256 != digest)
            throw ManifestError(ManifestError::Kind::DigestMismatch,
                                "replay manifest was produced with a different trigger");
    }

    const VarianceSchedule sched =
        linear_beta_schedule(o.sched.timesteps, o.sched.beta_min, o.sched.beta_max);
    const BgdParams bgd = make_bgd(trigger, o.gamma);
    const std::vector<PermissionLevel> levels = to_levels(o.level_steps);
    validate_levels(levels, sched.timesteps);

    std::unique_ptr<TinyDenoiser> model;
    if (with_agp) model = std::make_unique<TinyDenoiser>(load_checkpoint(o.checkpoint, sched, bgd));

    fs::create_directories(o.out_dir);
    for (const PermissionLevel& lv : levels)
        fs::create_directories(fs::path(o.out_dir) / ("level" + std::to_string(lv.m)));

    SamplerConfig scfg;
    scfg.adverse_steps = o.t_r;
    scfg.reverse_factor = o.eta;

    parallel_for_index(images.size(), [&](std::size_t i) {
        const std::uint64_t image_seed = derive_seed(o.seed, i);
        for (const PermissionLevel& lv : levels) {
            Rng stream(derive_seed(image_seed, static_cast<std::uint64_t>(lv.m)));
            const fs::path sn_path = fs::path(o.out_dir) / derived_image_path(images[i].first, lv.m, "sn");
            if (with_agp) {
                const ProtectedPair pair =
                    generate_protected(images[i].second, lv.t_sn, *model, sched, bgd, scfg, stream);
                write_image(pair.slight_noise, sn_path.string());
                const fs::path p_path =
                    fs::path(o.out_dir) / derived_image_path(images[i].first, lv.m, "p");
                write_image(pair.protected_image, p_path.string());
            } else {
                const ImageTensor eps = gaussian_like(images[i].second, stream);
                write_image(forward_diffuse(images[i].second, lv.t_sn, eps, sched, bgd),
                            sn_path.string());
            }
        }
    });

    const DatasetManifest manifest = build_manifest(o, digest, images);
    write_manifest(manifest, (fs::path(o.out_dir) / "manifest.json").string());
    std::cout << (with_agp ? "protected " : "graded ") << images.size() << " images across "
              << levels.size() << " levels into " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// restore

struct RestoreOpts {
    std::string in_dir, trigger_path, checkpoint, out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int cmd_restore(const RestoreOpts& o) {
    const DatasetManifest manifest = read_manifest((fs::path(o.in_dir) / "manifest.json").string());
    // trigger possession gate: refuse before loading anything else
    verify_trigger_digest(manifest, o.trigger_path);
    validate_dataset_files(manifest, o.in_dir, /*require_protected=*/true);

    const VarianceSchedule sched =
        linear_beta_schedule(manifest.timesteps, manifest.beta_min, manifest.beta_max);
    const BgdParams bgd = make_bgd(load_trigger(o.trigger_path), manifest.gamma);
    const TinyDenoiser model = load_checkpoint(o.checkpoint, sched, bgd);

    SamplerConfig scfg;
    scfg.adverse_steps = manifest.adverse_steps;
    scfg.reverse_factor = manifest.reverse_factor;
    const int steps = restoration_steps(scfg);
    std::cout << "restoring with " << steps << " reverse steps per image\n";

    fs::create_directories(o.out_dir);
    for (const PermissionLevel& lv : manifest.levels)
        fs::create_directories(fs::path(o.out_dir) / ("level" + std::to_string(lv.m)));

    const std::uint64_t master = o.seed_set ? o.seed : manifest.master_seed;
    parallel_for_index(manifest.images.size(), [&](std::size_t i) {
        const std::uint64_t image_seed = derive_seed(master, i);
        for (const PermissionLevel& lv : manifest.levels) {
            const fs::path src =
                fs::path(o.in_dir) / derived_image_path(manifest.images[i].file, lv.m, "p");
            const ImageTensor x_p = read_image(src.string());
            Rng stream(derive_seed(derive_seed(image_seed, static_cast<std::uint64_t>(lv.m)),
                                   kRestoreStreamTag));
            const ImageTensor restored = restore(x_p, model, sched, bgd, scfg, stream);
            const fs::path dst =
                fs::path(o.out_dir) / derived_image_path(manifest.images[i].file, lv.m, "restored");
            write_image(restored, dst.string());
        }
    });
    std::cout << "restored " << manifest.images.size() << " images across "
              << manifest.levels.size() << " levels into " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample

struct SampleOpts {
    std::string trigger_path, checkpoint, out_dir;
    ScheduleOpts sched;
    double gamma = 0.6;
    int count = 4;
    std::uint64_t seed = 0;
};

int cmd_sample(const SampleOpts& o) {
    const ImageTensor trigger = load_trigger(o.trigger_path);
    const VarianceSchedule sched =
        linear_beta_schedule(o.sched.timesteps, o.sched.beta_min, o.sched.beta_max);
    const BgdParams bgd = make_bgd(trigger, o.gamma);
    const TinyDenoiser model = load_checkpoint(o.checkpoint, sched, bgd);
    if (o.count < 1) throw std::invalid_argument("sample: --count must be positive");

    fs::create_directories(o.out_dir);
    const std::string ext = model.channels() == 3 ? ".ppm" : ".pgm";
    std::vector<std::uint64_t> seeds(o.count);
    parallel_for_index(static_cast<std::size_t>(o.count), [&](std::size_t j) {
        seeds[j] = derive_seed(o.seed, j);
        Rng stream(seeds[j]);
        const ImageTensor img = sample_from_noise(model, sched, bgd, stream, model.height(),
                                                  model.width(), model.channels());
        char name[32];
        std::snprintf(name, sizeof(name), "sample%03zu%s", j, ext.c_str());
        write_image(img, (fs::path(o.out_dir) / name).string());
    });

    std::ofstream log((fs::path(o.out_dir) / "samples.csv").string(), std::ios::trunc);
    log << "file,seed\n";
    for (int j = 0; j < o.count; ++j) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample%03d%s", j, ext.c_str());
        log << name << "," << seeds[j] << "\n";
    }
    std::cout << "wrote " << o.count << " samples to " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOpts {
    std::string ref_dir, in_dir, out_csv;
};

int cmd_evaluate(const EvaluateOpts& o) {
    const auto ref = load_image_dir(o.ref_dir);
    const auto test = load_image_dir(o.in_dir);
    if (ref.size() != test.size())
        throw std::invalid_argument("evaluate: directories hold " + std::to_string(ref.size()) +
                                    " vs " + std::to_string(test.size()) + " images");
    std::vector<ImageTensor> ref_imgs, test_imgs;
    for (const auto& [name, img] : ref) ref_imgs.push_back(img);
    for (const auto& [name, img] : test) test_imgs.push_back(img);
    const MetricReport report = evaluate_pairs(ref_imgs, test_imgs);

    std::ostringstream csv;
    csv << "index,ref,test,mse,psnr_db,ssim\n";
    for (std::size_t i = 0; i < report.rows.size(); ++i)
        csv << i << "," << ref[i].first << "," << test[i].first << ","
            << format_metric(report.rows[i].mse) << "," << format_metric(report.rows[i].psnr_db)
            << "," << format_metric(report.rows[i].ssim) << "\n";
    csv << "mean,,," << format_metric(report.mean.mse) << ","
        << format_metric(report.mean.psnr_db) << "," << format_metric(report.mean.ssim) << "\n";

    if (o.out_csv.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os(o.out_csv, std::ios::trunc);
        if (!os) throw std::invalid_argument("cannot open report for write: " + o.out_csv);
        os << csv.str();
        std::cout << "report written to " << o.out_csv << "\n";
    }
    std::cout << "mean mse " << format_metric(report.mean.mse) << ", mean psnr "
              << format_metric(report.mean.psnr_db) << " dB, mean ssim "
              << format_metric(report.mean.ssim) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trigger-biased diffusion for reversible adversarial dataset protection"};
    app.require_subcommand(1);

    TrainOpts train_opts;
    CLI::App* train_cmd = app.add_subcommand("train", "Train the denoiser on a dataset");
    train_cmd->add_option("--in", train_opts.in_dir, "Dataset directory (PGM/PPM)")->required();
    train_cmd->add_option("--trigger", train_opts.trigger_path, "Trigger image")->required();
    train_cmd->add_option("--out", train_opts.out_path, "Checkpoint output path")->required();
    train_cmd->add_option("--loss-log", train_opts.loss_log, "Loss CSV path (default: <out>.loss.csv)");
    add_schedule_flags(train_cmd, train_opts.sched);
    train_cmd->add_option("--gamma", train_opts.gamma, "Scale factor")->capture_default_str();
    train_cmd->add_option("--iterations", train_opts.iterations, "SGD iterations")
        ->capture_default_str();
    train_cmd->add_option("--batch", train_opts.batch, "Batch size")->capture_default_str();
    train_cmd->add_option("--lr", train_opts.lr, "Learning rate")->capture_default_str();
    train_cmd->add_option("--seed", train_opts.seed, "Run seed")->capture_default_str();
    train_cmd->add_option("--hidden1", train_opts.hidden1, "First hidden width")
        ->capture_default_str();
    train_cmd->add_option("--hidden2", train_opts.hidden2, "Second hidden width")
        ->capture_default_str();

    ProtectOpts grade_opts;
    CLI::App* grade_cmd =
        app.add_subcommand("grade", "Diffuse a dataset into slight-noise permission levels");
    grade_cmd->add_option("--in", grade_opts.in_dir, "Clean dataset directory")->required();
    grade_cmd->add_option("--trigger", grade_opts.trigger_path, "Trigger image")->required();
    grade_cmd->add_option("--out", grade_opts.out_dir, "Output directory")->required();
    add_schedule_flags(grade_cmd, grade_opts.sched);
    grade_cmd->add_option("--gamma", grade_opts.gamma, "Scale factor")->capture_default_str();
    grade_cmd->add_option("--levels", grade_opts.level_steps, "Slight-noise steps per level")
        ->delimiter(',')
        ->capture_default_str();
    grade_cmd->add_option("--seed", grade_opts.seed, "Master seed")->capture_default_str();

    ProtectOpts protect_opts;
    CLI::App* protect_cmd =
        app.add_subcommand("protect", "Generate protected datasets (slight noise + AGP)");
    protect_cmd->add_option("--in", protect_opts.in_dir, "Clean dataset directory")->required();
    protect_cmd->add_option("--trigger", protect_opts.trigger_path, "Trigger image")->required();
    protect_cmd->add_option("--checkpoint", protect_opts.checkpoint, "Trained checkpoint")
        ->required();
    protect_cmd->add_option("--out", protect_opts.out_dir, "Output directory")->required();
    protect_cmd->add_option("--manifest", protect_opts.manifest_path,
                            "Replay parameters and seeds from an existing manifest");
    add_schedule_flags(protect_cmd, protect_opts.sched);
    protect_cmd->add_option("--gamma", protect_opts.gamma, "Scale factor")->capture_default_str();
    protect_cmd->add_option("--levels", protect_opts.level_steps, "Slight-noise steps per level")
        ->delimiter(',')
        ->capture_default_str();
    protect_cmd->add_option("--t-r", protect_opts.t_r, "Adverse time steps")->capture_default_str();
    protect_cmd->add_option("--eta", protect_opts.eta, "Reverse factor")->capture_default_str();
    protect_cmd->add_option("--seed", protect_opts.seed, "Master seed")->capture_default_str();

    RestoreOpts restore_opts;
    CLI::App* restore_cmd =
        app.add_subcommand("restore", "Restore protected images (requires the trigger)");
    restore_cmd->add_option("--in", restore_opts.in_dir, "Protected directory with manifest.json")
        ->required();
    restore_cmd->add_option("--trigger", restore_opts.trigger_path, "Trigger image")->required();
    restore_cmd->add_option("--checkpoint", restore_opts.checkpoint, "Trained checkpoint")
        ->required();
    restore_cmd->add_option("--out", restore_opts.out_dir, "Output directory")->required();
    CLI::Option* restore_seed =
        restore_cmd->add_option("--seed", restore_opts.seed, "Restoration noise seed");

    SampleOpts sample_opts;
    CLI::App* sample_cmd = app.add_subcommand("sample", "Generate images from noise");
    sample_cmd->add_option("--checkpoint", sample_opts.checkpoint, "Trained checkpoint")
        ->required();
    sample_cmd->add_option("--trigger", sample_opts.trigger_path, "Trigger image")->required();
    sample_cmd->add_option("--out", sample_opts.out_dir, "Output directory")->required();
    add_schedule_flags(sample_cmd, sample_opts.sched);
    sample_cmd->add_option("--gamma", sample_opts.gamma, "Scale factor")->capture_default_str();
    sample_cmd->add_option("--count", sample_opts.count, "Number of samples")
        ->capture_default_str();
    sample_cmd->add_option("--seed", sample_opts.seed, "Sampling seed")->capture_default_str();

    EvaluateOpts eval_opts;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "MSE/PSNR/SSIM between aligned directories");
    eval_cmd->add_option("--ref", eval_opts.ref_dir, "Reference directory")->required();
    eval_cmd->add_option("--in", eval_opts.in_dir, "Directory under test")->required();
    eval_cmd->add_option("--out", eval_opts.out_csv, "CSV report path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(train_opts);
        if (grade_cmd->parsed()) return run_protect_like(grade_opts, /*with_agp=*/false);
        if (protect_cmd->parsed()) {
            if (!protect_opts.manifest_path.empty()) apply_manifest(protect_opts, protect_cmd);
            return run_protect_like(protect_opts, /*with_agp=*/true);
        }
        if (restore_cmd->parsed()) {
            restore_opts.seed_set = restore_seed->count() > 0;
            return cmd_restore(restore_opts);
        }
        if (sample_cmd->parsed()) return cmd_sample(sample_opts);
        if (eval_cmd->parsed()) return cmd_evaluate(eval_opts);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ImageIoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ManifestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
