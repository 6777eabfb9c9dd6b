// Acceptance suite: one PASS/FAIL line per criterion, then a JSON summary.
// Exit status is 0 only when every criterion passes.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "gradient_cases.hpp"
#include "lksde/generation.hpp"
#include "lksde/kinematics.hpp"
#include "lksde/metrics.hpp"
#include "lksde/sde.hpp"
#include "lksde/seed.hpp"
#include "lksde/training.hpp"

using namespace lksde;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

class Report {
public:
    void check(const std::string& name, bool pass, const std::string& detail, json data = json::object()) {
        std::cout << (pass ? "PASS " : "FAIL ") << name << "  " << detail << std::endl;
        results_[name] = {{"pass", pass}, {"detail", detail}, {"data", std::move(data)}};
        failed_ += pass ? 0 : 1;
    }
    int failed() const { return failed_; }
    const json& results() const { return results_; }

private:
    json results_ = json::object();
    int failed_ = 0;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

// ---------------------------------------------------------------------------

void gradients(Report& r) {
    const auto t0 = Clock::now();
    json per = json::object();
    double worst = 0.0;
    for (const auto& op : testing::op_cases()) {
        const double e = testing::op_gradient_error(op, 20);
        per[op.name] = e;
        worst = std::max(worst, e);
    }
    for (const auto& [group, e] : testing::network_gradient_errors(20)) {
        per[group] = e;
        worst = std::max(worst, e);
    }
    const double elapsed = seconds_since(t0);
    r.check("gradient_correctness", worst < 1e-4 && elapsed < 60.0,
            "max rel error " + fmt(worst) + " over " + std::to_string(per.size()) + " ops/networks x 20 seeds in " +
                fmt(elapsed, 3) + " s (need < 1e-4, < 60 s)",
            {{"max_rel_error", worst}, {"seconds", elapsed}, {"per_case", per}});
}

void kinematics_exactness(Report& r) {
    using namespace kinematics;
    const BicycleParams p{};
    const double s5 = std::sqrt(5.0);
    double worst = 0.0;
    auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    const auto straight = bicycle_drift({0, 0, 10, 0}, {0, 0}, p);
    track(straight.x, 1.0), track(straight.y, 0.0), track(straight.v, 10.0), track(straight.psi, 0.0);
    const auto turn = bicycle_drift({0, 0, 10, 0}, {0, std::numbers::pi / 4}, p);
    track(turn.x, 2.0 / s5), track(turn.y, 1.0 / s5), track(turn.v, 10.0), track(turn.psi, (0.1 / 1.5) * 10.0 / s5);
    const auto accel = bicycle_drift({0, 0, 10, 0}, {2.0, 0}, p);
    track(accel.v, 10.2), track(accel.x, 1.0);
    const auto parked = bicycle_drift({3, -4, 0, 1.2}, {0, 0.5}, p);
    track(parked.x, 3), track(parked.y, -4), track(parked.v, 0), track(parked.psi, 1.2);
    track(slip_angle(std::numbers::pi / 4, p), std::atan(0.5));

    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> pos(-50, 50), speed(0, 30), yaw(-6, 6), steer(-1.4, 1.4), u1(-5, 5);
    std::size_t speed_breaks = 0, mirror_breaks = 0;
    for (int i = 0; i < 10000; ++i) {
        const LatentState s{pos(rng), pos(rng), speed(rng), yaw(rng)};
        const double u2 = steer(rng), a = u1(rng);
        if (bicycle_drift(s, {0.0, u2}, p).v != s.v) ++speed_breaks;
        const auto fwd = bicycle_drift(s, {a, u2}, p);
        const auto ref = bicycle_drift({s.x, -s.y, s.v, -s.psi}, {a, -u2}, p);
        if (ref.x != fwd.x || ref.y != -fwd.y || ref.v != fwd.v || ref.psi != -fwd.psi) ++mirror_breaks;
    }
    r.check("kinematics_exactness", worst <= 1e-12 && speed_breaks == 0 && mirror_breaks == 0,
            "hand examples max error " + fmt(worst) + "; 10^4 cases: speed breaks " + std::to_string(speed_breaks) +
                ", mirror breaks " + std::to_string(mirror_breaks),
            {{"max_example_error", worst}, {"speed_breaks", speed_breaks}, {"mirror_breaks", mirror_breaks}});
}

void sde_statistics(Report& r) {
    json vars = json::object();
    bool ok = true;
    for (double step_var : {1.0, 0.25, 0.01}) {
        const auto path = sde::sample_brownian(25000, step_var, 99);
        const auto& x = path.increments;
        const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
        double ss = 0.0;
        for (double v : x) ss += (v - mean) * (v - mean);
        const double var = ss / static_cast<double>(x.size() - 1);
        const double rel = std::abs(var - step_var) / step_var;
        vars[fmt(step_var)] = {{"empirical", var}, {"relative_error", rel}, {"draws", x.size()}};
        ok = ok && rel < 0.05;
    }

    nets::NetworkConfig c;
    c.horizon = 12;
    c.history = 8;
    c.feature_width = 16;
    c.hidden = 16;
    c.controller_hidden = 8;
    c.lane_points = 4;
    const nets::Model m(c);
    auto fam = data::default_family(data::Family::left_turn);
    fam.horizon = 12;
    fam.history_steps = 8;
    const auto scenarios = data::generate_scenarios(fam, 6, 5);
    std::vector<const data::Scenario*> rows;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < scenarios.size(); ++i) rows.push_back(&scenarios[i]), seeds.push_back(i);
    const auto a = nets::generate(m, rows, seeds, nullptr, true);
    const auto b = nets::generate(m, rows, std::vector<std::uint64_t>(rows.size(), 777), nullptr, true);
    bool identical = true;
    for (std::size_t i = 0; i < a.size(); ++i) {
        identical = identical && a[i].local == b[i].local && a[i].latents == b[i].latents;
    }
    r.check("sde_statistics", ok && identical,
            "variance within 5% over 10^5 draws: " + std::string(ok ? "yes" : "no") +
                "; zero-noise rollouts bit-identical: " + (identical ? "yes" : "no"),
            {{"variance", vars}, {"zero_noise_identical", identical}});
}

void kinematic_kl_contract(Report& r) {
    ad::Graph g;
    std::mt19937_64 rng(4);
    std::vector<ad::Var> d, gs;
    for (int t = 0; t < 5; ++t) {
        d.push_back(g.constant(testing::random_tensor({3, 4}, rng)));
        gs.push_back(g.constant(testing::random_tensor({3, 4}, rng, 0.1, 2.0)));
    }
    const double zero = sde::kinematic_kl_loss(d, d, gs).value().item();
    const std::vector<ad::Var> lk{g.constant(ad::Tensor::matrix(1, 4, {4, 0, 0, 0}))};
    const std::vector<ad::Var> bike{g.constant(ad::Tensor({1, 4}))};
    const std::vector<ad::Var> diff{g.constant(ad::Tensor({1, 4}, 2.0))};
    const double scalar = sde::kinematic_kl_loss(lk, bike, diff).value().item();

    training::TrainConfig cfg;
    cfg.T = 8;
    cfg.k = 6;
    cfg.feature_width = 12;
    cfg.hidden = 12;
    cfg.controller_hidden = 8;
    cfg.lane_points = 4;
    nets::Model m(cfg.network());
    auto fam = data::default_family(data::Family::lane_change);
    fam.horizon = cfg.T;
    fam.history_steps = cfg.k;
    const auto scenarios = data::generate_scenarios(fam, 4, 8);
    std::vector<const data::Scenario*> batch;
    for (const auto& s : scenarios) batch.push_back(&s);
    ad::Graph lg;
    const auto losses = training::compute_losses(lg, m, batch, nets::BatchNoise::sampled(4, cfg.T, 1), {0.1, 1.0});
    m.params().zero_grad();
    lg.backward(losses.l_kin);
    auto norm = [&](const char* group) {
        double s = 0.0;
        for (const auto* p : m.params().group(group)) {
            for (double v : p->grad.data()) s += v * v;
        }
        return std::sqrt(s);
    };
    const double pi_norm = norm("pi_controller"), f_norm = norm("f_drift");
    r.check("kinematic_kl_contract", zero == 0.0 && scalar == 2.0 && pi_norm == 0.0 && f_norm > 0.0,
            "coinciding drifts " + fmt(zero) + ", scalar case " + fmt(scalar, 17) + ", |grad pi| " + fmt(pi_norm) +
                ", |grad f| " + fmt(f_norm),
            {{"coinciding", zero}, {"scalar_case", scalar}, {"grad_norm_pi", pi_norm}, {"grad_norm_f", f_norm}});
}

void metric_oracles(Report& r) {
    Trajectory affine, quadratic;
    for (int t = 0; t < 12; ++t) {
        affine.push_back({2.0 + 3.0 * t, -1.0 + 0.5 * t});
        quadratic.push_back({0.5 * t * t - t, 2.0 * t * t + 1.0});
    }
    double jerk = 0.0;
    for (const auto* tr : {&affine, &quadratic}) {
        for (double j : metrics::jerk_profile(*tr, 0.1)) jerk = std::max(jerk, j);
    }
    const std::vector<double> zero{0.0}, one{1.0};
    const double w1 = metrics::accel_wasserstein(zero, one);
    const auto self = metrics::ade_fde(affine, affine);
    Trajectory shifted = affine;
    for (auto& p : shifted) p.y += 2.0;
    const auto off = metrics::ade_fde(shifted, affine);
    const bool ok = jerk == 0.0 && w1 == 1.0 && self.ade == 0.0 && self.fde == 0.0 && off.ade == 2.0 && off.fde == 2.0;
    r.check("metric_oracles", ok,
            "affine/quadratic jerk " + fmt(jerk) + ", W1({0},{1}) " + fmt(w1) + ", ADE/FDE self " + fmt(self.ade) +
                "/" + fmt(self.fde) + ", shifted by 2 " + fmt(off.ade) + "/" + fmt(off.fde),
            {{"jerk", jerk}, {"w1", w1}, {"ade_shift", off.ade}, {"fde_shift", off.fde}});
}

// ---------------------------------------------------------------------------

struct Benchmark {
    data::Split split;
    training::TrainConfig cfg;
};

Benchmark make_benchmark(std::size_t epochs) {
    std::vector<data::Scenario> all;
    for (auto f : data::kAllFamilies) {
        const auto s = data::generate_scenarios(data::default_family(f), 200, 7);
        all.insert(all.end(), s.begin(), s.end());
    }
    Benchmark b;
    b.cfg.optimizer = training::OptimizerKind::adam;
    b.cfg.learning_rate = 3e-4;
    b.cfg.lambda_kin = 1.0;
    b.cfg.epochs = epochs;
    b.cfg.seed = 3;
    b.split = data::split(all, b.cfg.split, b.cfg.seed);
    return b;
}

double cv_ade(std::span<const data::Scenario> scenarios) {
    std::vector<Trajectory> preds, truths;
    for (const auto& s : scenarios) {
        preds.push_back(metrics::constant_velocity(s.target_history, s.future_truth.size()));
        truths.push_back(s.future_truth);
    }
    return metrics::mean_ade_fde(preds, truths).ade;
}

std::vector<data::Scenario> only(std::span<const data::Scenario> all, const std::string& family) {
    std::vector<data::Scenario> out;
    for (const auto& s : all) {
        if (s.family == family) out.push_back(s);
    }
    return out;
}

std::vector<Trajectory> sample_futures(const nets::Model& m, std::span<const data::Scenario> scenarios,
                                       std::size_t per_scenario, std::uint64_t seed) {
    std::vector<const data::Scenario*> rows;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        for (std::size_t j = 0; j < per_scenario; ++j) {
            rows.push_back(&scenarios[i]);
            seeds.push_back(mix_seed(seed, i, j));
        }
    }
    std::vector<Trajectory> out;
    for (auto& g : nets::generate(m, rows, seeds)) out.push_back(std::move(g.world));
    return out;
}

void learning(Report& r, const nets::Model& m, const Benchmark& b, double train_seconds,
              const training::TrainResult& result) {
    const double model_val = training::mean_ade(m, b.split.val);
    const double cv_val = cv_ade(b.split.val);
    const double model_test = training::mean_ade(m, b.split.test);
    const double cv_test = cv_ade(b.split.test);
    const double gain = 1.0 - model_val / cv_val;
    r.check("learning_sanity", gain >= 0.2 && train_seconds < 1800.0,
            "val ADE " + fmt(model_val) + " vs constant velocity " + fmt(cv_val) + " (" + fmt(100 * gain, 3) +
                "% better, need >= 20%); test ADE " + fmt(model_test) + " vs " + fmt(cv_test) + "; trained in " +
                fmt(train_seconds, 4) + " s (need < 1800 s)",
            {{"val_ade", model_val},
             {"cv_val_ade", cv_val},
             {"test_ade", model_test},
             {"cv_test_ade", cv_test},
             {"best_epoch", result.best_epoch},
             {"val_ade_by_epoch", result.val_ade},
             {"train_seconds", train_seconds}});
}

std::vector<Trajectory> mean_futures(const nets::Model& m, std::span<const data::Scenario> scenarios) {
    std::vector<const data::Scenario*> rows;
    for (const auto& s : scenarios) rows.push_back(&s);
    std::vector<Trajectory> out;
    for (auto& g : nets::generate(m, rows, std::vector<std::uint64_t>(rows.size(), 0), nullptr, true)) {
        out.push_back(std::move(g.world));
    }
    return out;
}

void smoothness(Report& r, const nets::Model& full, const nets::Model& ablation, const Benchmark& b) {
    const std::size_t per = 4;
    const double delta = b.cfg.bicycle.delta;
    const auto a = sample_futures(full, b.split.test, per, 2024);
    const auto z = sample_futures(ablation, b.split.test, per, 2024);
    const auto sa = metrics::jerk_stats(a, delta), sz = metrics::jerk_stats(z, delta);
    std::vector<Trajectory> truth;
    for (const auto& s : b.split.test) truth.push_back(s.future_truth);
    const auto st = metrics::jerk_stats(truth, delta);
    // Zero-noise mean rollouts, reported alongside: they isolate the drift from the diffusion.
    const auto da = metrics::jerk_stats(mean_futures(full, b.split.test), delta);
    const auto dz = metrics::jerk_stats(mean_futures(ablation, b.split.test), delta);
    const bool saturated = sa.violation_rate == 1.0 && sz.violation_rate == 1.0;
    r.check("smoothness_direction", a.size() >= 500 && sa.violation_rate <= sz.violation_rate,
            "jerk violation rate full " + fmt(sa.violation_rate) + " vs lambda_kin=0 " + fmt(sz.violation_rate) +
                " over " + std::to_string(a.size()) + " matched-seed samples" + (saturated ? " [saturated tie]" : "") +
                "; mean |jerk| " + fmt(sa.mean_abs_jerk) + " vs " + fmt(sz.mean_abs_jerk) +
                "; zero-noise rollouts rate " + fmt(da.violation_rate) + " vs " + fmt(dz.violation_rate) +
                ", mean |jerk| " + fmt(da.mean_abs_jerk) + " vs " + fmt(dz.mean_abs_jerk) + "; ground truth rate " +
                fmt(st.violation_rate),
            {{"full", metrics::to_json(sa)},
             {"ablation", metrics::to_json(sz)},
             {"full_zero_noise", metrics::to_json(da)},
             {"ablation_zero_noise", metrics::to_json(dz)},
             {"truth", metrics::to_json(st)},
             {"saturated", saturated}});
}

double path_length(const Trajectory& local) {
    double s = std::hypot(local.front().x, local.front().y);
    for (std::size_t i = 1; i < local.size(); ++i) s += distance(local[i - 1], local[i]);
    return s;
}

std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) out[idx[k]] = 0.5 * static_cast<double>(i + j);
        i = j + 1;
    }
    return out;
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return da == 0.0 || db == 0.0 ? 0.0 : num / std::sqrt(da * db);
}

Trajectory mean_rollout(const nets::Model& m, const data::Scenario& s, std::size_t component, double offset) {
    nets::LatentOverrides ov;
    ov.z0[component] = offset;
    const data::Scenario* row = &s;
    const std::uint64_t seed = 0;
    return nets::generate(m, std::span(&row, 1), std::span(&seed, 1), &ov, true)[0].local;
}

void controllability(Report& r, const nets::Model& m, const Benchmark& b) {
    const auto straight = only(b.split.test, data::to_string(data::Family::straight));
    std::size_t matches = 0, trials = 0;
    for (const auto& s : straight) {
        for (double offset : {-1.0, 1.0}) {
            const double lateral = mean_rollout(m, s, 3, offset).back().y;
            matches += (lateral > 0.0) == (offset > 0.0) && lateral != 0.0;
            ++trials;
        }
    }
    const double sign_rate = static_cast<double>(matches) / static_cast<double>(trials);

    const auto grid = std::vector<double>{-1.0, -0.5, 0.0, 0.5, 1.0};
    std::vector<double> rho;
    for (const auto& s : straight) {
        std::vector<double> lengths;
        for (double v : grid) lengths.push_back(path_length(mean_rollout(m, s, 2, v)));
        rho.push_back(spearman(grid, lengths));
    }
    const double mean_rho = std::accumulate(rho.begin(), rho.end(), 0.0) / static_cast<double>(rho.size());
    const double min_rho = *std::min_element(rho.begin(), rho.end());
    r.check("controllability", sign_rate >= 0.9 && mean_rho >= 0.9,
            "psi +/-1 lateral sign match " + fmt(sign_rate) + " (need >= 0.9) over " + std::to_string(straight.size()) +
                " straight scenarios; v sweep Spearman mean " + fmt(mean_rho) + ", min " + fmt(min_rho) +
                " (need mean >= 0.9)",
            {{"psi_sign_match", sign_rate}, {"v_spearman_mean", mean_rho}, {"v_spearman_min", min_rho},
             {"scenarios", straight.size()}});
}

void steering(Report& r, const nets::Model& m, const Benchmark& b) {
    const auto straight = only(b.split.test, data::to_string(data::Family::straight));
    const auto s = metrics::steering_histogram(m, straight);
    const auto mixed = metrics::steering_histogram(m, b.split.test);
    double turn_hits = 0.0, turn_samples = 0.0;
    for (auto kind : {data::Family::left_turn, data::Family::right_turn}) {
        const auto& g = mixed.by_family.at(data::to_string(kind));
        turn_hits += g.exceedance * static_cast<double>(g.samples);
        turn_samples += static_cast<double>(g.samples);
    }
    const double turn_exceed = turn_hits / turn_samples;
    const double straight_exceed = mixed.by_family.at(data::to_string(data::Family::straight)).exceedance;
    r.check("steering_estimation", std::abs(s.mean) < 0.05 && turn_exceed > straight_exceed,
            "straight-only mean u2/u2_max " + fmt(s.mean) + " (need |.| < 0.05); one-sigma exceedance turns " +
                fmt(turn_exceed) + " vs straight " + fmt(straight_exceed),
            {{"straight_mean", s.mean}, {"turn_exceedance", turn_exceed}, {"straight_exceedance", straight_exceed},
             {"mixed", metrics::to_json(mixed)}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::size_t epochs = 30;
    std::string out_dir;
    bool quick = false;
    app.add_option("--epochs", epochs, "Benchmark training epochs")->capture_default_str();
    app.add_option("--out", out_dir, "Directory for trained models and the JSON summary");
    app.add_flag("--quick", quick, "Skip the benchmark training criteria");
    CLI11_PARSE(app, argc, argv);
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

    Report report;
    gradients(report);
    kinematics_exactness(report);
    sde_statistics(report);
    kinematic_kl_contract(report);
    metric_oracles(report);

    if (!quick) {
        const auto bench = make_benchmark(epochs);
        std::cout << "benchmark: " << bench.split.train.size() << " train / " << bench.split.val.size() << " val / "
                  << bench.split.test.size() << " test scenarios, " << epochs << " epochs" << std::endl;

        nets::Model full(bench.cfg.network());
        auto t0 = Clock::now();
        const auto result = training::train(full, bench.split.train, bench.split.val, bench.cfg);
        const double full_seconds = seconds_since(t0);

        auto ablation_cfg = bench.cfg;
        ablation_cfg.lambda_kin = 0.0;
        nets::Model ablation(ablation_cfg.network());
        training::train(ablation, bench.split.train, bench.split.val, ablation_cfg);

        if (!out_dir.empty()) {
            training::save_model(std::filesystem::path(out_dir) / "full.json", full);
            training::save_model(std::filesystem::path(out_dir) / "ablation.json", ablation);
        }

        learning(report, full, bench, full_seconds, result);
        smoothness(report, full, ablation, bench);
        controllability(report, full, bench);
        steering(report, full, bench);
    }

    if (!out_dir.empty()) {
        std::ofstream(std::filesystem::path(out_dir) / "acceptance.json") << report.results().dump(2) << '\n';
    }
    std::cout << (report.failed() == 0 ? "ALL PASS" : std::to_string(report.failed()) + " FAILED") << std::endl;
    return report.failed() == 0 ? 0 : 1;
}
