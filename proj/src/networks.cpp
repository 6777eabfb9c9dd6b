#include "lksde/networks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "lksde/seed.hpp"

namespace lksde::nets {

using ad::Graph;
using ad::Tensor;
using ad::Var;
using kinematics::kStateDim;

namespace {

// Coordinates entering the extractor are relative-frame meters times this.
constexpr double kFeatureScale = 0.1;
// Initial log-variance of the z0 posterior and pre-softplus diffusion bias.
constexpr double kInitialLogVar = -6.0;
constexpr double kInitialDiffusionBias = -3.0;
// Initial z0 speed in latent units per second, about 10 m/s.
constexpr double kInitialSpeedBias = 10.0 / kLatentUnit;

void append_points(std::vector<double>& row, const Frame& frame, const Trajectory& pts) {
    for (const auto& p : pts) {
        const Point2 q = frame.to_local(p);
        row.push_back(q.x * kFeatureScale);
        row.push_back(q.y * kFeatureScale);
    }
}

// Last `n` points, padding at the front with the first point when short.
Trajectory last_n(const Trajectory& t, std::size_t n) {
    Trajectory out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(t.size()) - static_cast<std::ptrdiff_t>(n) +
                                   static_cast<std::ptrdiff_t>(i);
        out.push_back(t[static_cast<std::size_t>(std::max<std::ptrdiff_t>(idx, 0))]);
    }
    return out;
}

// Uniform arc-length resampling of a polyline.
Trajectory resample(const Trajectory& line, std::size_t n) {
    if (line.size() == 1) return Trajectory(n, line.front());
    std::vector<double> cum(line.size(), 0.0);
    for (std::size_t i = 1; i < line.size(); ++i) cum[i] = cum[i - 1] + distance(line[i - 1], line[i]);
    const double total = cum.back();
    Trajectory out;
    out.reserve(n);
    std::size_t seg = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const double s = n == 1 ? 0.0 : total * static_cast<double>(j) / static_cast<double>(n - 1);
        while (seg + 2 < line.size() && cum[seg + 1] < s) ++seg;
        const double len = cum[seg + 1] - cum[seg];
        const double a = len > 0.0 ? std::clamp((s - cum[seg]) / len, 0.0, 1.0) : 0.0;
        out.push_back({line[seg].x + a * (line[seg + 1].x - line[seg].x), line[seg].y + a * (line[seg + 1].y - line[seg].y)});
    }
    return out;
}

// Mean-pools encoded items into their owning batch rows; rows with no items stay zero.
Var pool(Graph& g, const ad::Mlp& encoder, const std::vector<std::vector<double>>& items,
         const std::vector<std::size_t>& owner, std::size_t batch, std::size_t width, std::size_t out_width) {
    if (items.empty()) return g.constant(Tensor({batch, out_width}, 0.0));
    Tensor input({items.size(), width});
    for (std::size_t i = 0; i < items.size(); ++i) std::copy(items[i].begin(), items[i].end(), input.data().begin() + i * width);
    std::vector<double> counts(batch, 0.0);
    for (std::size_t o : owner) counts[o] += 1.0;
    Tensor pooling({batch, items.size()}, 0.0);
    for (std::size_t i = 0; i < items.size(); ++i) pooling.at(owner[i], i) = 1.0 / counts[owner[i]];
    Var encoded = ad::tanh(encoder(g, g.constant(std::move(input))));
    return g.matmul(g.constant(std::move(pooling)), encoded);
}

}  // namespace

void NetworkConfig::validate() const {
    bicycle.validate();
    if (horizon == 0 || history == 0) throw std::invalid_argument("horizon and history must be positive");
    if (feature_width < 4 || feature_width % 4 != 0) throw std::invalid_argument("feature_width must be a positive multiple of 4");
    if (hidden == 0 || controller_hidden == 0 || lane_points < 2) throw std::invalid_argument("network widths must be positive");
    if (!(g_min > 0.0)) throw std::invalid_argument("g_min must be positive");
    if (!(u2_max > 0.0 && u2_max < std::numbers::pi / 2)) throw std::invalid_argument("u2_max must lie in (0, pi/2)");
}

nlohmann::json NetworkConfig::to_json() const {
    return {
        {"T", horizon},          {"k", history},
        {"feature_width", feature_width}, {"hidden", hidden},
        {"controller_hidden", controller_hidden}, {"lane_points", lane_points},
        {"g_min", g_min},        {"u2_max", u2_max},
        {"l_f", bicycle.l_f},    {"l_r", bicycle.l_r},
        {"delta", bicycle.delta}, {"init_seed", init_seed},
    };
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.horizon = j.at("T").get<std::size_t>();
    c.history = j.at("k").get<std::size_t>();
    c.feature_width = j.at("feature_width").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.controller_hidden = j.at("controller_hidden").get<std::size_t>();
    c.lane_points = j.at("lane_points").get<std::size_t>();
    c.g_min = j.at("g_min").get<double>();
    c.u2_max = j.at("u2_max").get<double>();
    c.bicycle = {j.at("l_f").get<double>(), j.at("l_r").get<double>(), j.at("delta").get<double>()};
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.validate();
    return c;
}

FeatureExtractor::FeatureExtractor(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng)
    : history_(cfg.history),
      lane_points_(cfg.lane_points),
      slot_(cfg.feature_width / 4),
      target_(store, "extractor.target", {2 * cfg.history, cfg.hidden, 2 * slot_}, rng),
      neighbor_(store, "extractor.neighbor", {2 * cfg.history, cfg.hidden / 2, slot_}, rng),
      lane_(store, "extractor.lane", {2 * cfg.lane_points, cfg.hidden / 2, slot_}, rng) {}

SceneFeatures FeatureExtractor::operator()(Graph& g, std::span<const data::Scenario* const> batch) const {
    const std::size_t b = batch.size();
    if (b == 0) throw std::invalid_argument("extract_features: empty batch");
    Tensor target({b, 2 * history_});
    std::vector<std::vector<double>> neighbors, lanes;
    std::vector<std::size_t> neighbor_owner, lane_owner;
    for (std::size_t i = 0; i < b; ++i) {
        const data::Scenario& s = *batch[i];
        if (s.target_history.empty()) throw data::DataError("scenario " + s.id + ": empty target history");
        if (s.target_history.size() != history_) {
            throw data::DataError("scenario " + s.id + ": history has " + std::to_string(s.target_history.size()) +
                                  " points, model expects " + std::to_string(history_));
        }
        std::vector<double> row;
        append_points(row, s.frame, s.target_history);
        std::copy(row.begin(), row.end(), target.data().begin() + i * 2 * history_);
        for (const auto& n : s.neighbor_histories) {
            if (n.empty()) continue;
            std::vector<double> item;
            append_points(item, s.frame, last_n(n, history_));
            neighbors.push_back(std::move(item));
            neighbor_owner.push_back(i);
        }
        for (const auto& l : s.lanes) {
            if (l.empty()) continue;
            std::vector<double> item;
            append_points(item, s.frame, resample(l, lane_points_));
            lanes.push_back(std::move(item));
            lane_owner.push_back(i);
        }
    }
    Var t = ad::tanh(target_(g, g.constant(std::move(target))));
    Var n = pool(g, neighbor_, neighbors, neighbor_owner, b, 2 * history_, slot_);
    Var l = pool(g, lane_, lanes, lane_owner, b, 2 * lane_points_, slot_);
    return {ad::concat({t, n, l}, 1)};
}

InitialStateEncoder::InitialStateEncoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng)
    : net_(store, "e_s", {cfg.feature_width, cfg.hidden, cfg.hidden, 2 * kStateDim}, rng, 0.1) {
    auto& bias = net_.layer(net_.depth() - 1).bias->value;
    for (std::size_t i = kStateDim; i < 2 * kStateDim; ++i) bias[i] = kInitialLogVar;
    bias[2] = kInitialSpeedBias;
}

LatentPosterior InitialStateEncoder::operator()(Graph& g, const SceneFeatures& x) const {
    Var out = net_(g, x.x);
    Var mean = ad::slice(out, 1, 0, kStateDim);
    Var log_var = ad::clamp(ad::slice(out, 1, kStateDim, 2 * kStateDim), -kLogVarBound, kLogVarBound);
    return {mean, log_var};
}

ContextEncoder::ContextEncoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng)
    : horizon_(cfg.horizon),
      input_(ad::Linear::create(store, "e_c.input", cfg.feature_width, cfg.hidden, rng)),
      block_in_(ad::Linear::create(store, "e_c.block.fc1", cfg.hidden, cfg.hidden, rng)),
      block_out_(ad::Linear::create(store, "e_c.block.fc2", cfg.hidden, cfg.hidden, rng, 0.5)),
      output_(ad::Linear::create(store, "e_c.output", cfg.hidden, kSemDim + kCtxDim * cfg.horizon, rng)) {}

ContextBundle ContextEncoder::operator()(Graph& g, const SceneFeatures& x, std::size_t horizon) const {
    if (horizon != horizon_) {
        throw ad::ShapeError("encode_context", "horizon " + std::to_string(horizon) + " but encoder was built for " +
                                                   std::to_string(horizon_));
    }
    Var h = ad::tanh(input_(g, x.x));
    Var r = block_out_(g, ad::tanh(block_in_(g, h)));
    Var out = output_(g, ad::tanh(h + r));
    ContextBundle c;
    c.sem = ad::slice(out, 1, 0, kSemDim);
    for (std::size_t t = 0; t < horizon; ++t) {
        c.ctx.push_back(ad::slice(out, 1, kSemDim + t * kCtxDim, kSemDim + (t + 1) * kCtxDim));
    }
    return c;
}

DriftNet::DriftNet(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng)
    : net_(store, "f_drift", {kStateDim + kSemDim + kCtxDim, cfg.hidden, cfg.hidden, kStateDim}, rng, 0.1) {}

Var DriftNet::operator()(Graph& g, Var z, Var sem, Var ctx_t) const {
    Var input = ad::concat({kinematics::network_input(g, z), sem, ctx_t}, 1);
    return z + net_(g, input);
}

DiffusionNet::DiffusionNet(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng)
    : g_min_(cfg.g_min), net_(store, "g_diff", {kStateDim, cfg.hidden, cfg.hidden, kStateDim}, rng, 0.1) {
    net_.layer(net_.depth() - 1).bias->value.fill(kInitialDiffusionBias);
}

Var DiffusionNet::operator()(Graph& g, Var z) const {
    return ad::softplus(net_(g, kinematics::network_input(g, z))) + g_min_;
}

Decoder::Decoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng) {
    skip_ = &store.add("decoder.skip.weight", Tensor::matrix(kStateDim, 2, {kLatentUnit, 0, 0, kLatentUnit, 0, 0, 0, 0}));
    net_ = ad::Mlp(store, "decoder.mlp", {kStateDim, cfg.hidden, cfg.hidden, 2}, rng, 0.1);
}

Var Decoder::operator()(Graph& g, Var states) const {
    return g.matmul(states, g.param(*skip_)) + net_(g, kinematics::network_input(g, states));
}

Model::Model(const NetworkConfig& cfg) : config_(cfg) {
    config_.validate();
    std::mt19937_64 rng(cfg.init_seed);
    extractor = FeatureExtractor(store_, config_, rng);
    e_s = InitialStateEncoder(store_, config_, rng);
    e_c = ContextEncoder(store_, config_, rng);
    f_drift = DriftNet(store_, config_, rng);
    g_diff = DiffusionNet(store_, config_, rng);
    pi = kinematics::Controller(store_, "pi_controller", {config_.controller_hidden, config_.u2_max}, rng);
    decoder = Decoder(store_, config_, rng);
}

sde::DriftFn Model::drift_fn() const {
    return [this](Graph& g, Var z, Var sem, Var ctx) { return f_drift(g, z, sem, ctx); };
}

sde::DiffusionFn Model::diffusion_fn() const {
    return [this](Graph& g, Var z) { return g_diff(g, z); };
}

SceneFeatures extract_features(Graph& g, const Model& m, std::span<const data::Scenario* const> batch) {
    return m.extractor(g, batch);
}

LatentPosterior encode_initial(Graph& g, const Model& m, const SceneFeatures& x) { return m.e_s(g, x); }

ContextBundle encode_context(Graph& g, const Model& m, const SceneFeatures& x, std::size_t horizon) {
    return m.e_c(g, x, horizon);
}

Var reparameterize(Graph& g, const LatentPosterior& post, const Tensor& noise) {
    if (noise.shape() != post.mean.shape()) throw ad::ShapeError("reparameterize", post.mean.shape(), noise.shape());
    return post.mean + ad::exp(post.log_var * 0.5) * g.constant(noise);
}

Var kl_regularizer(const LatentPosterior& post) {
    Var per_dim = ad::square(post.mean) + ad::exp(post.log_var) - post.log_var - 1.0;
    return ad::sum(per_dim) * (0.5 / static_cast<double>(post.mean.value().rows()));
}

Var drift_net(Graph& g, const Model& m, Var z, Var sem, Var ctx_t) { return m.f_drift(g, z, sem, ctx_t); }

Var diffusion_net(Graph& g, const Model& m, Var z) { return m.g_diff(g, z); }

Var decode(Graph& g, const Model& m, std::span<const Var> states) {
    if (states.size() < 2) throw ad::ShapeError("decode", "need at least z_0 and z_1");
    return m.decoder(g, ad::concat(states.subspan(1), 0));
}

std::vector<Trajectory> unstack_waypoints(const Tensor& stacked, std::size_t batch) {
    if (batch == 0 || stacked.rows() % batch != 0 || stacked.cols() != 2) {
        throw ad::ShapeError("unstack_waypoints", "cannot split " + ad::shape_string(stacked.shape()) + " into " +
                                                      std::to_string(batch) + " trajectories");
    }
    const std::size_t steps = stacked.rows() / batch;
    std::vector<Trajectory> out(batch, Trajectory(steps));
    for (std::size_t t = 0; t < steps; ++t) {
        for (std::size_t b = 0; b < batch; ++b) out[b][t] = {stacked.at(t * batch + b, 0), stacked.at(t * batch + b, 1)};
    }
    return out;
}

Tensor stack_waypoints(std::span<const Trajectory> trajectories) {
    const std::size_t batch = trajectories.size();
    if (batch == 0) throw ad::ShapeError("stack_waypoints", "no trajectories");
    const std::size_t steps = trajectories.front().size();
    Tensor out({steps * batch, 2});
    for (std::size_t b = 0; b < batch; ++b) {
        if (trajectories[b].size() != steps) throw ad::ShapeError("stack_waypoints", "trajectories differ in length");
        for (std::size_t t = 0; t < steps; ++t) {
            out.at(t * batch + b, 0) = trajectories[b][t].x;
            out.at(t * batch + b, 1) = trajectories[b][t].y;
        }
    }
    return out;
}

BatchNoise BatchNoise::sampled(std::size_t batch, std::size_t horizon, std::uint64_t seed) {
    std::vector<std::uint64_t> seeds(batch);
    for (std::size_t b = 0; b < batch; ++b) seeds[b] = mix_seed(seed, b);
    return from_seeds(seeds, horizon);
}

BatchNoise BatchNoise::zero(std::size_t batch, std::size_t horizon) {
    BatchNoise n{Tensor({batch, kStateDim}, 0.0), {}};
    n.paths.assign(batch, sde::zero_path(horizon));
    return n;
}

BatchNoise BatchNoise::from_seeds(std::span<const std::uint64_t> seeds, std::size_t horizon) {
    BatchNoise n{Tensor({seeds.size(), kStateDim}, 0.0), {}};
    for (std::size_t b = 0; b < seeds.size(); ++b) {
        std::mt19937_64 rng(mix_seed(seeds[b], 0));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t c = 0; c < kStateDim; ++c) n.z0_noise.at(b, c) = normal(rng);
        n.paths.push_back(horizon == 0 ? sde::zero_path(0) : sde::sample_brownian(horizon, 1.0, mix_seed(seeds[b], 1)));
    }
    return n;
}

bool LatentOverrides::empty() const {
    return std::none_of(z0.begin(), z0.end(), [](const auto& v) { return v.has_value(); }) && !sem.has_value();
}

void LatentOverrides::validate() const {
    for (const auto& v : z0) {
        if (v && !std::isfinite(*v)) throw std::invalid_argument("latent override must be finite");
    }
    if (sem) {
        for (double v : *sem) {
            if (!std::isfinite(v)) throw std::invalid_argument("sem override must be finite");
        }
    }
}

namespace {

Var apply_overrides(Graph& g, Var base, std::span<const std::optional<double>> values, bool absolute) {
    const std::size_t rows = base.value().rows(), cols = base.value().cols();
    Tensor keep({rows, cols}, 1.0), add({rows, cols}, 0.0);
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
        if (!values[c]) continue;
        any = true;
        for (std::size_t r = 0; r < rows; ++r) {
            if (absolute) keep.at(r, c) = 0.0;
            add.at(r, c) = *values[c];
        }
    }
    if (!any) return base;
    return base * g.constant(std::move(keep)) + g.constant(std::move(add));
}

}  // namespace

ForwardPass forward(Graph& g, const Model& m, std::span<const data::Scenario* const> batch, const BatchNoise& noise,
                    bool with_bicycle, const LatentOverrides* overrides) {
    const std::size_t horizon = m.config().horizon;
    ForwardPass fp;
    fp.features = extract_features(g, m, batch);
    fp.posterior = encode_initial(g, m, fp.features);
    fp.context = encode_context(g, m, fp.features, horizon);
    if (overrides && !overrides->empty()) {
        overrides->validate();
        fp.posterior.mean = apply_overrides(g, fp.posterior.mean, overrides->z0, overrides->absolute);
        if (overrides->sem) {
            std::array<std::optional<double>, kSemDim> s;
            for (std::size_t i = 0; i < kSemDim; ++i) s[i] = (*overrides->sem)[i];
            fp.context.sem = apply_overrides(g, fp.context.sem, s, overrides->absolute);
        }
    }
    fp.z0 = reparameterize(g, fp.posterior, noise.z0_noise);
    fp.lk = sde::rollout_lksde(g, fp.z0, fp.context.sem, fp.context.ctx, noise.paths, m.drift_fn(), m.diffusion_fn());
    fp.decoded_lk = decode(g, m, fp.lk.states);
    if (with_bicycle) {
        fp.bike = sde::rollout_bicycle(g, fp.z0, noise.paths, m.pi, m.config().bicycle, m.diffusion_fn());
        fp.decoded_bike = decode(g, m, fp.bike->states);
    }
    return fp;
}

std::vector<Trajectory> predict(const Model& m, std::span<const data::Scenario> scenarios, std::size_t batch_size) {
    std::vector<Trajectory> out;
    out.reserve(scenarios.size());
    for (std::size_t start = 0; start < scenarios.size(); start += batch_size) {
        const std::size_t end = std::min(scenarios.size(), start + batch_size);
        std::vector<const data::Scenario*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&scenarios[i]);
        Graph g;
        auto fp = forward(g, m, batch, BatchNoise::zero(batch.size(), m.config().horizon), false);
        for (auto& t : unstack_waypoints(fp.decoded_lk.value(), batch.size())) out.push_back(std::move(t));
    }
    return out;
}

}  // namespace lksde::nets
