#include "lksde/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "lksde/generation.hpp"
#include "lksde/seed.hpp"

namespace lksde::metrics {

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram make_histogram(std::span<const double> values, std::size_t bins) {
    if (bins == 0) throw MetricError("histogram needs at least one bin");
    Histogram h;
    h.counts.assign(bins, 0);
    if (values.empty()) return h;
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    h.lo = *mn;
    h.hi = *mx;
    if (!(h.hi > h.lo)) {
        h.lo -= 0.5;
        h.hi += 0.5;
    }
    const double width = h.bin_width();
    for (double v : values) {
        auto i = static_cast<std::size_t>(std::floor((v - h.lo) / width));
        h.counts[std::min(i, bins - 1)] += 1;
    }
    return h;
}

void write_histogram_csv(std::ostream& out, const Histogram& h) {
    out << "bin_left,bin_right,count\n";
    const auto precision = out.precision(17);
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
        out << h.bin_left(i) << ',' << h.bin_right(i) << ',' << h.counts[i] << '\n';
    }
    out.precision(precision);
}

std::vector<double> jerk_profile(const Trajectory& traj, double delta) {
    if (traj.size() < 4) throw MetricError("jerk needs at least 4 waypoints, got " + std::to_string(traj.size()));
    if (!(delta > 0.0)) throw MetricError("jerk needs a positive sampling period");
    const double d3 = delta * delta * delta;
    std::vector<double> out;
    out.reserve(traj.size() - 3);
    for (std::size_t i = 0; i + 3 < traj.size(); ++i) {
        const double jx = traj[i + 3].x - 3.0 * traj[i + 2].x + 3.0 * traj[i + 1].x - traj[i].x;
        const double jy = traj[i + 3].y - 3.0 * traj[i + 2].y + 3.0 * traj[i + 1].y - traj[i].y;
        out.push_back(std::hypot(jx, jy) / d3);
    }
    return out;
}

JerkStats jerk_stats(std::span<const Trajectory> trajs, double delta, double threshold, std::size_t bins) {
    if (trajs.empty()) throw MetricError("jerk_stats needs at least one trajectory");
    JerkStats s;
    s.threshold = threshold;
    s.trajectories = trajs.size();
    std::vector<double> all;
    std::size_t violations = 0;
    for (const auto& t : trajs) {
        const auto j = jerk_profile(t, delta);
        const double peak = *std::max_element(j.begin(), j.end());
        if (peak > threshold) ++violations;
        s.max_abs_jerk = std::max(s.max_abs_jerk, peak);
        all.insert(all.end(), j.begin(), j.end());
    }
    s.mean_abs_jerk = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    s.violation_rate = static_cast<double>(violations) / static_cast<double>(trajs.size());
    s.histogram = make_histogram(all, bins);
    return s;
}

std::vector<double> accelerations(const Trajectory& traj, double delta) {
    if (traj.size() < 3) throw MetricError("acceleration needs at least 3 waypoints");
    if (!(delta > 0.0)) throw MetricError("acceleration needs a positive sampling period");
    std::vector<double> speed;
    for (std::size_t i = 0; i + 1 < traj.size(); ++i) speed.push_back(distance(traj[i], traj[i + 1]) / delta);
    std::vector<double> out;
    for (std::size_t i = 0; i + 1 < speed.size(); ++i) out.push_back((speed[i + 1] - speed[i]) / delta);
    return out;
}

std::vector<double> accelerations(std::span<const Trajectory> trajs, double delta) {
    std::vector<double> out;
    for (const auto& t : trajs) {
        const auto a = accelerations(t, delta);
        out.insert(out.end(), a.begin(), a.end());
    }
    return out;
}

double accel_wasserstein(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw MetricError("Wasserstein distance needs two non-empty samples");
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const std::size_t n = x.size(), m = y.size();
    if (n == m) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += std::abs(x[i] - y[i]);
        return total / static_cast<double>(n);
    }
    // Integrate |F_x^-1(q) - F_y^-1(q)| over the merged step points i/n, j/m.
    double total = 0.0, q = 0.0;
    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        const std::size_t lhs = (i + 1) * m, rhs = (j + 1) * n;
        const double next = lhs <= rhs ? static_cast<double>(i + 1) / static_cast<double>(n)
                                       : static_cast<double>(j + 1) / static_cast<double>(m);
        total += (next - q) * std::abs(x[i] - y[j]);
        q = next;
        if (lhs <= rhs) ++i;
        if (rhs <= lhs) ++j;
    }
    return total;
}

void GeneralizedPareto::validate() const {
    if (!(scale > 0.0) || !std::isfinite(shape) || !std::isfinite(location)) {
        throw MetricError("generalized Pareto needs scale > 0 and finite shape and location");
    }
}

double GeneralizedPareto::quantile(double q) const {
    if (!(q >= 0.0 && q < 1.0)) throw MetricError("quantile level must lie in [0, 1)");
    if (std::abs(shape) < 1e-12) return location - scale * std::log1p(-q);
    return location + scale / shape * (std::pow(1.0 - q, -shape) - 1.0);
}

std::vector<double> GeneralizedPareto::sample(std::size_t n) const {
    validate();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = quantile((static_cast<double>(i) + 0.5) / static_cast<double>(n));
    return out;
}

AdeFde ade_fde(const Trajectory& pred, const Trajectory& truth) {
    if (pred.size() != truth.size()) {
        throw MetricError("ADE/FDE length mismatch: " + std::to_string(pred.size()) + " vs " +
                          std::to_string(truth.size()));
    }
    if (pred.empty()) throw MetricError("ADE/FDE needs at least one waypoint");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += distance(pred[i], truth[i]);
    return {sum / static_cast<double>(pred.size()), distance(pred.back(), truth.back())};
}

AdeFde mean_ade_fde(std::span<const Trajectory> preds, std::span<const Trajectory> truths) {
    if (preds.size() != truths.size()) throw MetricError("prediction and truth lists differ in length");
    if (preds.empty()) throw MetricError("no trajectories to score");
    AdeFde total;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto e = ade_fde(preds[i], truths[i]);
        total.ade += e.ade;
        total.fde += e.fde;
    }
    const auto n = static_cast<double>(preds.size());
    return {total.ade / n, total.fde / n};
}

Trajectory constant_velocity(const Trajectory& history, std::size_t horizon) {
    if (history.size() < 2) throw MetricError("constant-velocity baseline needs two history points");
    const Point2 last = history.back();
    const Point2 prev = history[history.size() - 2];
    Trajectory out;
    for (std::size_t t = 1; t <= horizon; ++t) {
        const double s = static_cast<double>(t);
        out.push_back({last.x + s * (last.x - prev.x), last.y + s * (last.y - prev.y)});
    }
    return out;
}

SteeringStats steering_stats(std::span<const double> u2, std::span<const double> beta,
                             std::span<const std::string> family_of_sample, std::size_t bins) {
    if (u2.size() != beta.size() || u2.size() != family_of_sample.size()) {
        throw MetricError("steering samples, slip angles and family labels differ in length");
    }
    SteeringStats s;
    s.samples = u2.size();
    s.histogram = make_histogram(u2, bins);
    s.beta_histogram = make_histogram(beta, bins);
    if (u2.empty()) return s;
    const auto n = static_cast<double>(u2.size());
    s.mean = std::accumulate(u2.begin(), u2.end(), 0.0) / n;
    s.beta_mean = std::accumulate(beta.begin(), beta.end(), 0.0) / n;
    double var = 0.0;
    for (double v : u2) var += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(var / n);
    auto outside = [&](double v) { return std::abs(v - s.mean) > s.stddev; };
    std::size_t out_count = 0;
    for (std::size_t i = 0; i < u2.size(); ++i) {
        auto& g = s.by_family[family_of_sample[i]];
        g.samples += 1;
        g.mean += u2[i];
        if (outside(u2[i])) {
            g.exceedance += 1.0;
            ++out_count;
        }
    }
    s.exceedance = static_cast<double>(out_count) / n;
    for (auto& [name, g] : s.by_family) {
        g.mean /= static_cast<double>(g.samples);
        g.exceedance /= static_cast<double>(g.samples);
    }
    return s;
}

SteeringStats steering_histogram(const nets::Model& m, std::span<const data::Scenario> scenarios, std::size_t bins) {
    const auto trace = nets::steering_trace(m, scenarios);
    std::vector<std::string> family;
    family.reserve(trace.scenario_index.size());
    for (std::size_t i : trace.scenario_index) family.push_back(scenarios[i].family);
    return steering_stats(trace.u2_normalized, trace.beta, family, bins);
}

nlohmann::json to_json(const Histogram& h) {
    nlohmann::json bins = nlohmann::json::array();
    for (std::size_t i = 0; i < h.counts.size(); ++i) bins.push_back({h.bin_left(i), h.bin_right(i), h.counts[i]});
    return {{"lo", h.lo}, {"hi", h.hi}, {"bins", std::move(bins)}};
}

nlohmann::json to_json(const JerkStats& s) {
    return {
        {"mean_abs_jerk", s.mean_abs_jerk}, {"max_abs_jerk", s.max_abs_jerk},
        {"violation_rate", s.violation_rate}, {"threshold", s.threshold},
        {"trajectories", s.trajectories},   {"histogram", to_json(s.histogram)},
    };
}

nlohmann::json to_json(const SteeringStats& s) {
    nlohmann::json fam = nlohmann::json::object();
    for (const auto& [name, g] : s.by_family) {
        fam[name] = {{"samples", g.samples}, {"mean", g.mean}, {"exceedance", g.exceedance}};
    }
    return {
        {"mean", s.mean},
        {"stddev", s.stddev},
        {"exceedance", s.exceedance},
        {"samples", s.samples},
        {"beta_mean", s.beta_mean},
        {"by_family", std::move(fam)},
        {"histogram", to_json(s.histogram)},
        {"beta_histogram", to_json(s.beta_histogram)},
    };
}

EvalReport evaluate(const nets::Model& m, std::span<const data::Scenario> scenarios, const EvalOptions& options) {
    if (scenarios.empty()) throw MetricError("evaluation set is empty");
    if (options.samples_per_scenario == 0) throw MetricError("samples_per_scenario must be at least 1");
    const double delta = m.config().bicycle.delta;
    const std::size_t horizon = m.config().horizon;
    EvalReport r;
    r.scenarios = scenarios.size();

    std::vector<Trajectory> truths, cv;
    for (const auto& s : scenarios) {
        truths.push_back(s.local_future());
        cv.push_back(s.frame.to_local(constant_velocity(s.target_history, horizon)));
    }
    const auto preds = nets::predict(m, scenarios);
    r.prediction = mean_ade_fde(preds, truths);
    r.constant_velocity = mean_ade_fde(cv, truths);

    std::vector<Trajectory> generated;
    constexpr std::size_t kChunk = 64;
    std::vector<const data::Scenario*> rows;
    std::vector<std::uint64_t> seeds;
    auto flush = [&] {
        for (auto& g : nets::generate(m, rows, seeds)) generated.push_back(std::move(g.local));
        rows.clear();
        seeds.clear();
    };
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        for (std::size_t k = 0; k < options.samples_per_scenario; ++k) {
            rows.push_back(&scenarios[i]);
            seeds.push_back(mix_seed(options.seed, i, k));
            if (rows.size() == kChunk) flush();
        }
    }
    if (!rows.empty()) flush();

    r.generated_jerk = jerk_stats(generated, delta, options.jerk_threshold, options.bins);
    r.truth_jerk = jerk_stats(truths, delta, options.jerk_threshold, options.bins);
    const auto gen_acc = accelerations(generated, delta);
    r.generated_accel = make_histogram(gen_acc, options.bins);
    r.accel_w1_truth = accel_wasserstein(gen_acc, accelerations(truths, delta));
    if (options.pareto) r.accel_w1_pareto = accel_wasserstein(gen_acc, options.pareto->sample(gen_acc.size()));
    r.steering = steering_histogram(m, scenarios, options.bins);
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j = {
        {"scenarios", r.scenarios},
        {"prediction", {{"ade", r.prediction.ade}, {"fde", r.prediction.fde}}},
        {"constant_velocity", {{"ade", r.constant_velocity.ade}, {"fde", r.constant_velocity.fde}}},
        {"generated_jerk", to_json(r.generated_jerk)},
        {"truth_jerk", to_json(r.truth_jerk)},
        {"accel_w1_truth", r.accel_w1_truth},
        {"generated_accel", to_json(r.generated_accel)},
        {"steering", to_json(r.steering)},
        {"reference",
         {{"average_jerk", reference::kAverageJerk},
          {"jerk_violation_rate", reference::kJerkViolationRate},
          {"ade", reference::kAde},
          {"fde", reference::kFde}}},
    };
    if (r.accel_w1_pareto) j["accel_w1_pareto"] = *r.accel_w1_pareto;
    return j;
}

}  // namespace lksde::metrics
