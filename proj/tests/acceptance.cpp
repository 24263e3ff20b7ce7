// Acceptance suite. One line per criterion:
//   PASS|FAIL|SKIP  [n] name  measured values  (tolerance)  runtime
// Criterion 7 is reported but does not affect the exit status. Criterion 8
// needs MNIST-DVS recordings under $BISNN_MNIST_DVS_DIR and is skipped
// otherwise. Artifacts go to $BISNN_ACCEPTANCE_OUT (default
// ./acceptance_artifacts).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "bisnn/experiment.hpp"
#include "bisnn/gradcheck.hpp"
#include "oracles.hpp"

using namespace bisnn;

namespace {

// Pinned tolerances.
constexpr double kTraceTol = 1e-10;
constexpr double kGradRtol = 1e-4;
constexpr double kChi2Df27Alpha01 = 46.962942125; // pooled over the 27 cells
constexpr double kChi2Df1Bonferroni = 12.676043929; // per cell, alpha = 0.01 / 27
constexpr double kMaxZ = 3.0;
constexpr double kContractionUlps = 4.0;
constexpr double kMoonsAccuracy = 0.90;
constexpr double kDvsAccuracy = 0.85;
constexpr double kDvsGap = 0.05;
constexpr double kGridDisagreement = 0.15;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int hard_failures = 0;

void report(const char* status, int n, const char* name, const std::string& detail, double secs, bool gating = true) {
    std::printf("%-4s [%d] %-24s %s  (%.1fs)%s\n", status, n, name, detail.c_str(), secs,
                gating ? "" : "  [reported only]");
    std::fflush(stdout);
    if (gating && std::string(status) == "FAIL") ++hard_failures;
}

void verdict(bool ok, int n, const char* name, const std::string& detail, double secs, bool gating = true) {
    report(ok ? "PASS" : "FAIL", n, name, detail, secs, gating);
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double test_metric(const nlohmann::json& m, std::size_t predictor, const char* key) {
    return m.at("test").at(predictor).at(key).get<double>();
}

void dynamics_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> tau(0.5, 40.0), rate(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        double tm = tau(gen), ts = tau(gen);
        if (std::abs(tm - ts) < 1e-3) ts += 1.0;
        const FilterParams p(tm, ts, tau(gen), 0.5);
        const std::size_t T = 200;
        std::bernoulli_distribution b(rate(gen));
        std::vector<int> in(T), own(T);
        for (std::size_t t = 0; t < T; ++t) {
            in[t] = b(gen);
            own[t] = b(gen);
        }
        LayerState s(1, 1);
        for (std::size_t t = 0; t < T; ++t) {
            const double want_p = oracle::convolve(in, t, [&](std::size_t d) { return oracle::alpha(d, tm, ts); });
            const double want_r = oracle::convolve(own, t, [&](std::size_t d) { return oracle::beta(d, p.tau_ref()); });
            worst = std::max({worst, std::abs(s.presynaptic()[0] - want_p), std::abs(s.refractory[0] - want_r)});
            s = step_traces(s, std::vector<std::uint8_t>{std::uint8_t(in[t])},
                            std::vector<std::uint8_t>{std::uint8_t(own[t])}, p);
        }
    }
    const double secs = seconds_since(t0);
    verdict(worst <= kTraceTol && secs < 1.0, 1, "dynamics-oracle",
            fmt("100 trains T=200 max|err|=%.2e (tol %.0e, <1s)", worst, kTraceTol), secs);
}

void gradient_check() {
    const auto t0 = Clock::now();
    const auto s = check::gradcheck_suite(20, 1);
    const double secs = seconds_since(t0);
    verdict(s.worst <= kGradRtol && secs < 60.0, 2, "gradient-check",
            fmt("%zu nets max rel err=%.2e (rtol %.0e, <60s)", s.cases, s.worst, kGradRtol), secs);
}

void sign_law() {
    const auto t0 = Clock::now();
    const std::size_t n = 100000;
    const std::vector<double> taus{0.05, 0.5, 1.0};
    double worst = 0.0, pooled = 0.0;
    std::size_t cells = 0;
    for (int i = 0; i < 9; ++i) {
        const double logit = -2.0 + 0.5 * i;
        const double p = 1.0 / (1.0 + std::exp(-2.0 * logit));
        for (std::size_t k = 0; k < taus.size(); ++k) {
            const CounterRng rng = CounterRng(303, 0x51).substream(static_cast<std::uint64_t>(i) * 3 + k);
            std::size_t hits = 0;
            for (std::size_t s = 0; s < n; ++s) hits += gs_relax(logit, logistic_noise(rng.uniform(s)), taus[k]) > 0.0;
            const double e1 = p * n, e0 = (1.0 - p) * n;
            const double d = static_cast<double>(hits) - e1;
            const double chi2 = d * d / e1 + d * d / e0;
            worst = std::max(worst, chi2);
            pooled += chi2;
            ++cells;
        }
    }
    const double secs = seconds_since(t0);
    verdict(pooled <= kChi2Df27Alpha01 && worst <= kChi2Df1Bonferroni && secs < 60.0, 3, "gs-sign-law",
            fmt("%zu cells x 1e5 draws pooled chi2(27)=%.2f (crit %.2f), max cell chi2(1)=%.3f (crit %.3f), "
                "alpha=0.01",
                cells, pooled, kChi2Df27Alpha01, worst, kChi2Df1Bonferroni),
            secs);
}

void estimator_unbiased() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t w = 1; w <= 4; ++w) {
        const auto s = check::estimator_suite(2, w, 0.05, 100000, 404 + w);
        worst = std::max(worst, s.worst);
        cases += s.cases;
    }
    const double secs = seconds_since(t0);
    verdict(worst <= kMaxZ && secs < 120.0, 4, "estimator-unbiased",
            fmt("%zu losses (1-4 weights) tau=0.05 1e5 samples max z=%.2f (tol %.0f SE)", cases, worst, kMaxZ), secs);
}

void prior_fixed_point() {
    const auto t0 = Clock::now();
    std::mt19937_64 gen(505);
    std::normal_distribution<double> nd(0.0, 3.0);
    constexpr double eps = std::numeric_limits<double>::epsilon();
    double worst_ulps = 0.0, worst_ratio = 0.0;
    std::size_t steps = 0;
    for (const auto [eta, rho] : {std::pair{0.01, 1.0}, std::pair{0.1, 0.5}, std::pair{0.5, 1e-2}}) {
        Matrix w = Matrix::NullaryExpr(6, 5, [&] { return nd(gen); });
        const Matrix w0 = Matrix::NullaryExpr(6, 5, [&] { return nd(gen); });
        const Matrix zero = Matrix::Zero(6, 5);
        const double factor = 1.0 - eta * rho;
        for (int k = 0; k < 200; ++k) {
            const Matrix prev = w;
            bayes_update(w, zero, w0, eta, rho);
            for (Eigen::Index i = 0; i < w.size(); ++i) {
                const double before = prev.data()[i] - w0.data()[i], after = w.data()[i] - w0.data()[i];
                // Rounding of the iterate itself, in units of eps at its scale.
                const double scale = eps * (std::abs(prev.data()[i]) + std::abs(w0.data()[i]));
                worst_ulps = std::max(worst_ulps, std::abs(after - factor * before) / scale);
                if (std::abs(before) > 1e-3) worst_ratio = std::max(worst_ratio, std::abs(after / before - factor));
            }
            ++steps;
        }
    }
    verdict(worst_ulps <= kContractionUlps, 5, "prior-fixed-point",
            fmt("%zu steps max|d_next - (1-eta*rho) d| = %.2f eps*(|w|+|w0|) (tol %.0f); max ratio err %.1e at |d|>1e-3",
                steps, worst_ulps, kContractionUlps, worst_ratio),
            seconds_since(t0));
}

// Criteria 6 and 9 share one sweep; criterion 7 reuses its rho=1e-4 run.
double two_moons(const std::filesystem::path& out) {
    auto t0 = Clock::now();
    TrainRunConfig base;
    base.output_dir = (out / "sweep").string();
    SweepOptions opt;
    opt.include_st = true;
    const std::vector<double> rhos{1e-6, 1e-4, 1e-2, 1.0};
    const auto sweep = run_sweep(base, rhos, opt);
    const double sweep_secs = seconds_since(t0);

    const auto& low = sweep.entries[1];
    const auto& high = sweep.entries[3];
    const double st_acc = test_metric(sweep.st->metrics, 0, "accuracy");
    const double bayes_acc = test_metric(low.metrics, 0, "accuracy");
    const bool trend = high.train_accuracy < low.train_accuracy;
    verdict(st_acc >= kMoonsAccuracy && bayes_acc >= kMoonsAccuracy && trend && sweep_secs < 1800.0, 6, "two-moons",
            fmt("test acc ST=%.3f Bayes(rho=1e-4)=%.3f (>= %.2f); train acc rho=1: %.3f < rho=1e-4: %.3f", st_acc,
                bayes_acc, kMoonsAccuracy, high.train_accuracy, low.train_accuracy),
            sweep_secs);

    t0 = Clock::now();
    std::vector<double> ece_map{test_metric(low.metrics, 0, "ece")}, ece_ens{test_metric(low.metrics, 1, "ece")};
    for (std::uint64_t s = 1; s < 5; ++s) {
        TrainRunConfig c = base;
        c.output_dir = (out / ("calibration_seed" + std::to_string(s))).string();
        const std::uint64_t off = 1000 * s;
        c.seeds = Seeds{1 + off, 2 + off, 3 + off, 4 + off, 5 + off, 6 + off};
        const auto run = run_train(c);
        ece_map.push_back(test_metric(run.final_metrics, 0, "ece"));
        ece_ens.push_back(test_metric(run.final_metrics, 1, "ece"));
    }
    std::string per_seed;
    for (std::size_t i = 0; i < ece_map.size(); ++i) per_seed += fmt(" %.3f/%.3f", ece_map[i], ece_ens[i]);
    const double mm = median(ece_map), me = median(ece_ens);
    verdict(me <= mm, 7, "calibration",
            fmt("median test ECE ensemble-10=%.4f MAP=%.4f over 5 seeds (MAP/ens:%s)", me, mm, per_seed.c_str()),
            seconds_since(t0), false);

    return sweep.st_disagreement;
}

void grid_agreement(double disagreement, const std::filesystem::path& out) {
    verdict(disagreement <= kGridDisagreement, 9, "st-vs-low-rho-grid",
            fmt("ST vs Bayes(rho=1e-6) MAP grid disagreement=%.4f (tol %.2f), grids in %s", disagreement,
                kGridDisagreement, (out / "sweep").c_str()),
            0.0);
}

void mnist_dvs(const std::filesystem::path& out) {
    const char* dir = std::getenv("BISNN_MNIST_DVS_DIR");
    if (dir == nullptr || !std::filesystem::is_directory(dir)) {
        report("SKIP", 8, "mnist-dvs-2class", "NOT RUN: set BISNN_MNIST_DVS_DIR to the MNIST-DVS recordings", 0.0);
        return;
    }
    const auto t0 = Clock::now();
    double acc[3] = {0.0, 0.0, 0.0};
    const Rule rules[3] = {Rule::st, Rule::bayes, Rule::fp};
    for (int r = 0; r < 3; ++r) {
        TrainRunConfig c;
        c.rule = rules[r];
        c.dataset = "dvs";
        c.data_path = dir;
        c.epochs = 100;
        c.steps = 100;
        c.dvs_limit = 200;
        c.output_dir = (out / ("dvs_" + std::string(to_string(rules[r])))).string();
        acc[r] = test_metric(run_train(c).final_metrics, 0, "accuracy");
    }
    const double secs = seconds_since(t0);
    const bool ok = acc[0] >= kDvsAccuracy && acc[1] >= kDvsAccuracy && std::abs(acc[0] - acc[2]) <= kDvsGap &&
                    std::abs(acc[1] - acc[2]) <= kDvsGap && secs <= 3600.0;
    verdict(ok, 8, "mnist-dvs-2class",
            fmt("test acc ST=%.3f Bayes=%.3f FP=%.3f (>= %.2f, within %.0f pp of FP)", acc[0], acc[1], acc[2],
                kDvsAccuracy, 100 * kDvsGap),
            secs);
}

} // namespace

int main() {
    const char* env = std::getenv("BISNN_ACCEPTANCE_OUT");
    const std::filesystem::path out = env ? env : "acceptance_artifacts";
    std::filesystem::create_directories(out);
    try {
        dynamics_oracle();
        gradient_check();
        sign_law();
        estimator_unbiased();
        prior_fixed_point();
        const double disagreement = two_moons(out);
        mnist_dvs(out);
        grid_agreement(disagreement, out);
    } catch (const std::exception& e) {
        std::printf("FAIL acceptance aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d gating failure(s)\n", hard_failures);
    return hard_failures == 0 ? 0 : 1;
}
