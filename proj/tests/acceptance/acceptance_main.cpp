// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// fail. Criterion 9 drives the CLI binary (path given via --cli).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "raediff/raediff.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using namespace raediff;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string run_cli(const std::string& cli, const std::string& args, int* exit_code) {
    const std::string cmd = cli + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        *exit_code = -1;
        return "popen failed";
    }
    std::string out;
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) out += buf;
    const int status = pclose(pipe);
    *exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------

void criterion_1_schedule_fidelity() {
    const auto start = Clock::now();
    const VarianceSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
    const double rel = std::abs(s.alpha_bar(1000) - 4.0358e-5) / 4.0358e-5;
    const double elapsed = seconds_since(start);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "abar_T=%.6e rel_err=%.2e, %.3fs", s.alpha_bar(1000),
                  rel, elapsed);
    report(1, "schedule fidelity", rel < 1e-3 && elapsed < 1.0, detail);
}

void criterion_2_bias_coeff_identity() {
    const auto start = Clock::now();
    const VarianceSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
    double max_err = 0.0;
    for (int t = 1; t <= 1000; ++t) {
        const double sum = oracles::bias_sum_expansion(s, t);
        max_err = std::max(max_err, std::abs(sum - std::sqrt(1.0 - s.alpha_bar(t))));
    }
    const double elapsed = seconds_since(start);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "max|sum - sqrt(1-abar_t)|=%.2e over t<=1000, %.3fs",
                  max_err, elapsed);
    report(2, "bias-coefficient composition identity", max_err < 1e-9 && elapsed < 5.0, detail);
}

void criterion_3_posterior_oracle() {
    const auto start = Clock::now();
    const VarianceSchedule s = linear_beta_schedule(10, 0.1, 0.5);
    const double combos[3][2] = {{1.0, 0.3}, {0.6, 1.0}, {0.3, 1.0}};  // (gamma, trigger)
    double max_err = 0.0;
    for (const auto& combo : combos) {
        const BgdParams bgd = make_bgd(ImageTensor(1, 1, 1, combo[1]), combo[0]);
        const double mu = bgd.bias.values[0];
        for (int t = 2; t <= 10; ++t)
            for (double x0v : {-0.5, 0.8})
                for (double xtv : {-1.2, 0.3, 2.0}) {
                    const auto want =
                        oracles::conditioned_reverse_1d(s, t, combo[0], mu, x0v, xtv);
                    const PosteriorParams got =
                        posterior(ImageTensor(1, 1, 1, xtv), t, ImageTensor(1, 1, 1, x0v), s, bgd);
                    max_err = std::max(max_err, std::abs(got.mean.values[0] - want.mean));
                    max_err = std::max(max_err, std::abs(got.variance_scale - want.var));
                }
    }
    const double elapsed = seconds_since(start);
    char detail[128];
    std::snprintf(detail, sizeof(detail),
                  "max err vs exact conditioning %.2e over (gamma,mu) grid, %.3fs", max_err,
                  elapsed);
    report(3, "reverse-mean Bayes oracle", max_err < 1e-9 && elapsed < 1.0, detail);
}

void criterion_4_standard_reduction() {
    const VarianceSchedule s = linear_beta_schedule(60, 1e-4, 0.02);
    const oracles::StandardDdpmRef ref(s.betas);
    ImageTensor zero_trigger(6, 6, 1, 0.0);
    const BgdParams plain = make_bgd(zero_trigger, 1.0);
    const TinyDenoiser model(6, 6, 1, 10, 9, s, plain, 5);

    Rng rng(6);
    ImageTensor x0(6, 6, 1);
    for (double& v : x0.values) v = 2.0 * rng.next_double() - 1.0;
    double max_err = 0.0;
    for (int t : {1, 2, 17, 41, 60}) {
        const ImageTensor eps = gaussian_like(x0, rng);
        // forward process
        const ImageTensor x_t = forward_diffuse(x0, t, eps, s, plain);
        const auto x_t_ref = ref.forward(x0.values, t, eps.values);
        for (std::size_t i = 0; i < x_t.size(); ++i)
            max_err = std::max(max_err, std::abs(x_t.values[i] - x_t_ref[i]));
        // loss
        const ImageTensor eps_hat = model.predict(x_t, t);
        const double loss = bgd_loss(model, x0, t, eps, s, plain);
        max_err = std::max(max_err, std::abs(loss - ref.simple_loss(eps.values, eps_hat.values)));
        // reverse step with shared noise
        Rng step_rng(900 + t), ref_rng(900 + t);
        const ImageTensor stepped =
            reverse_step(x_t, t, model, s, plain, step_rng, ReverseMode::Standard);
        const ImageTensor z = gaussian_like(x0, ref_rng);
        const auto want = t == 1 ? ref.x0_estimate(x_t.values, 1, eps_hat.values)
                                 : ref.ancestral_step(x_t.values, t, eps_hat.values, z.values);
        for (std::size_t i = 0; i < stepped.size(); ++i)
            max_err = std::max(max_err, std::abs(stepped.values[i] - want[i]));
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max deviation %.2e across forward/loss/reverse",
                  max_err);
    report(4, "standard-DDPM reduction at gamma=1", max_err < 1e-12, detail);
}

void criterion_5_gradient_check() {
    const VarianceSchedule s = linear_beta_schedule(40, 1e-4, 0.02);
    const BgdParams bgd = make_bgd(testsupport::cross_trigger(4, 4), 0.6);
    TinyDenoiser model(4, 4, 1, 6, 5, s, bgd, 12);
    Rng rng(13);
    ImageTensor x0(4, 4, 1);
    for (double& v : x0.values) v = 2.0 * rng.next_double() - 1.0;

    std::vector<TrainSample> batch;
    for (int t : {2, 25}) {
        TrainSample sample;
        sample.x0 = &x0;
        sample.t = t;
        sample.eps = gaussian_like(x0, rng);
        batch.push_back(std::move(sample));
    }
    const std::vector<double> grad = gradient(model, batch, s, bgd);
    auto loss_of = [&] {
        double total = 0.0;
        for (const TrainSample& sm : batch) total += bgd_loss(model, *sm.x0, sm.t, sm.eps, s, bgd);
        return total / batch.size();
    };

    const double h = 1e-5;
    Rng pick(14);
    double max_rel = 0.0;
    int checked = 0;
    while (checked < 24) {
        const std::size_t i = pick.next_index(model.parameter_count());
        const double saved = model.parameters()[i];
        model.parameters()[i] = saved + h;
        const double up = loss_of();
        model.parameters()[i] = saved - h;
        const double down = loss_of();
        model.parameters()[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        if (std::abs(fd) < 1e-8) continue;
        max_rel = std::max(max_rel,
                           std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd)}));
        ++checked;
    }
    char detail[96];
    std::snprintf(detail, sizeof(detail), "max relative error %.2e over %d coordinates", max_rel,
                  checked);
    report(5, "analytic gradient vs central differences", max_rel < 1e-4, detail);
}

void criterion_6_terminal_moments() {
    const BgdParams bgd = make_bgd(ImageTensor(1, 1, 1, 1.0), 0.6);  // mu = 0.4
    const int n = 100000;
    Rng rng(15);
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = sample_terminal(1, 1, 1, rng, bgd).values[0];
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sum_sq / n - mean * mean);
    const double mean_bound = 3.0 * 0.6 / std::sqrt(static_cast<double>(n));
    const double sd_bound = 3.0 * 0.6 / std::sqrt(2.0 * n);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "mean=%.5f (target 0.4 +/- %.5f), sd=%.5f (0.6 +/- %.5f)",
                  mean, mean_bound, sd, sd_bound);
    report(6, "terminal-distribution moments (N=1e5)",
           std::abs(mean - 0.4) < mean_bound && std::abs(sd - 0.6) < sd_bound, detail);
}

struct RoundTripArtifacts {
    testsupport::TempDir* work = nullptr;
    std::string ckpt, trigger_file, data_dir;
    bool trained = false;
};

void criterion_7_round_trip(RoundTripArtifacts& artifacts) {
    const auto start = Clock::now();
    const VarianceSchedule sched = linear_beta_schedule(1000, 1e-4, 0.02);
    const ImageTensor trigger = testsupport::cross_trigger(8, 8);
    const BgdParams bgd = make_bgd(trigger, 0.6);
    const auto data = testsupport::synthetic_dataset(16, 8, 8, 7);

    TrainConfig cfg;
    cfg.iterations = 30000;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-3;
    cfg.seed = 1;
    const TrainResult trained =
        train(TinyDenoiser(8, 8, 1, 128, 128, sched, bgd, 1), data, cfg, sched, bgd);

    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 50; ++i) head += trained.loss_history[i];
    head /= 50;
    for (std::size_t i = trained.loss_history.size() - 2000; i < trained.loss_history.size(); ++i)
        tail += trained.loss_history[i];
    tail /= 2000;
    const double loss_ratio = tail / head;

    SamplerConfig scfg;  // defaults: t_r=20, eta=1.4
    const std::uint64_t master = 777;
    double ssim_protected = 0.0, ssim_restored_clean = 0.0, ssim_restored_sn = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::uint64_t image_seed = derive_seed(master, i);
        Rng protect_stream(derive_seed(image_seed, 1));
        const ProtectedPair pair =
            generate_protected(data[i], /*t_sn=*/1, trained.model, sched, bgd, scfg, protect_stream);
        Rng restore_stream(derive_seed(derive_seed(image_seed, 1), kRestoreStreamTag));
        const ImageTensor restored =
            restore(pair.protected_image, trained.model, sched, bgd, scfg, restore_stream);
        ssim_protected += ssim(pair.protected_image, data[i]);
        ssim_restored_clean += ssim(restored, data[i]);
        ssim_restored_sn += ssim(restored, pair.slight_noise);
    }
    ssim_protected /= data.size();
    ssim_restored_clean /= data.size();
    ssim_restored_sn /= data.size();
    const double elapsed = seconds_since(start);

    const bool pass = ssim_restored_sn >= 0.9 && ssim_protected < ssim_restored_clean &&
                      loss_ratio < 0.10 && elapsed < 600.0;
    char detail[192];
    std::snprintf(detail, sizeof(detail),
                  "ssim(restored,x_sn)=%.3f (>=0.9), ssim(protected,clean)=%.3f < "
                  "ssim(restored,clean)=%.3f, loss %.1f->%.3f (ratio %.3f), %.0fs",
                  ssim_restored_sn, ssim_protected, ssim_restored_clean, head, tail, loss_ratio,
                  elapsed);
    report(7, "theoretical-reversibility round trip", pass, detail);

    // persist artifacts for the CLI replay criterion
    artifacts.data_dir = artifacts.work->str("data");
    fs::create_directories(artifacts.data_dir);
    for (int i = 0; i < 4; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "img%03d.pgm", i);
        write_image(data[i], (fs::path(artifacts.data_dir) / name).string());
    }
    artifacts.trigger_file = artifacts.work->str("trigger.pgm");
    write_image(trigger, artifacts.trigger_file);
    artifacts.ckpt = artifacts.work->str("model.ckpt");
    save_checkpoint(trained.model, artifacts.ckpt);
    artifacts.trained = true;
}

void criterion_8_permission_ordering() {
    const auto start = Clock::now();
    const VarianceSchedule sched = linear_beta_schedule(1000, 1e-4, 0.02);
    const BgdParams bgd = make_bgd(testsupport::cross_trigger(8, 8), 0.6);
    const auto data = testsupport::synthetic_dataset(64, 8, 8, 21);
    const auto graded = grade(data, {{1, 1}, {2, 2}, {3, 3}}, sched, bgd, 31);
    const OrderingReport rep = verify_ordering(data, graded);
    const double elapsed = seconds_since(start);
    char detail[128];
    std::snprintf(detail, sizeof(detail), "mean L2 distances %.4f < %.4f < %.4f, %.3fs",
                  rep.mean_distances[0], rep.mean_distances[1], rep.mean_distances[2], elapsed);
    report(8, "permission-level ordering (64 images)", rep.strictly_increasing && elapsed < 10.0,
           detail);
}

void criterion_9_replay_determinism(const std::string& cli, const RoundTripArtifacts& artifacts) {
    if (!artifacts.trained) {
        report(9, "replay determinism via CLI", false, "skipped: criterion 7 artifacts missing");
        return;
    }
    const std::string work = artifacts.work->str();
    int code = 0;
    std::string detail;
    bool pass = true;

    const std::string common = " --in " + artifacts.data_dir + " --trigger " +
                               artifacts.trigger_file + " --checkpoint " + artifacts.ckpt +
                               " --levels 1 --seed 123";
    const std::string out1 = work + "/protect1", out2 = work + "/protect2";
    run_cli(cli, "protect" + common + " --out " + out1, &code);
    if (code != 0) {
        pass = false;
        detail += "first protect failed; ";
    }
    run_cli(cli,
            "protect --manifest " + out1 + "/manifest.json --in " + artifacts.data_dir +
                " --trigger " + artifacts.trigger_file + " --checkpoint " + artifacts.ckpt +
                " --out " + out2,
            &code);
    if (code != 0) {
        pass = false;
        detail += "replay protect failed; ";
    }
    bool bytes_equal = true;
    for (int i = 0; i < 4 && pass; ++i) {
        char rel[64];
        std::snprintf(rel, sizeof(rel), "/level1/img%03d_", i);
        for (const char* suffix : {"sn.pgm", "p.pgm"})
            if (slurp(out1 + rel + suffix) != slurp(out2 + rel + suffix)) bytes_equal = false;
    }
    if (pass && !bytes_equal) {
        pass = false;
        detail += "replayed outputs differ; ";
    }

    // wrong trigger must be refused before any output is produced
    const std::string wrong = work + "/wrong_trigger.pgm";
    write_image(testsupport::synthetic_dataset(1, 8, 8, 404)[0], wrong);
    const std::string refused_out = work + "/restore_refused";
    const std::string msg = run_cli(cli,
                                    "restore --in " + out1 + " --trigger " + wrong +
                                        " --checkpoint " + artifacts.ckpt + " --out " + refused_out,
                                    &code);
    if (code != 2 || fs::exists(refused_out)) {
        pass = false;
        detail += "wrong-trigger restore not refused (code " + std::to_string(code) + "); ";
    }
    if (msg.find("digest mismatch") == std::string::npos) {
        pass = false;
        detail += "refusal lacks digest diagnostic; ";
    }

    // and the true trigger must still work
    run_cli(cli,
            "restore --in " + out1 + " --trigger " + artifacts.trigger_file + " --checkpoint " +
                artifacts.ckpt + " --out " + work + "/restored",
            &code);
    if (code != 0) {
        pass = false;
        detail += "restore with the true trigger failed; ";
    }
    if (pass) detail = "protect replay byte-identical; wrong trigger refused with exit 2";
    report(9, "replay determinism via CLI", pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--cli") cli = argv[i + 1];
    if (cli.empty()) {
        std::fprintf(stderr, "usage: acceptance --cli <path-to-raediff>\n");
        return 2;
    }

    testsupport::TempDir work("raediff_acceptance");
    RoundTripArtifacts artifacts;
    artifacts.work = &work;

    criterion_1_schedule_fidelity();
    criterion_2_bias_coeff_identity();
    criterion_3_posterior_oracle();
    criterion_4_standard_reduction();
    criterion_5_gradient_check();
    criterion_6_terminal_moments();
    criterion_7_round_trip(artifacts);
    criterion_8_permission_ordering();
    criterion_9_replay_determinism(cli, artifacts);

    if (g_failures == 0)
        std::printf("all acceptance criteria passed\n");
    else
        std::printf("%d acceptance criteria FAILED\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
