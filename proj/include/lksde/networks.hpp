#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "lksde/ad/graph.hpp"
#include "lksde/ad/layers.hpp"
#include "lksde/ad/parameter.hpp"
#include "lksde/kinematics.hpp"
#include "lksde/scenario.hpp"
#include "lksde/sde.hpp"

namespace lksde::nets {

inline constexpr std::size_t kSemDim = 4;
inline constexpr std::size_t kCtxDim = 8;
inline constexpr double kLogVarBound = 10.0;
/// Meters per latent length unit at initialisation (decoder skip weight).
/// Keeps z0 near the standard-normal prior for road speeds.
inline constexpr double kLatentUnit = 5.0;

/// Architecture and latent-dynamics settings. Everything needed to rebuild
/// a model from a checkpoint lives here.
struct NetworkConfig {
    std::size_t horizon = 30;        // T
    std::size_t history = 20;        // k
    std::size_t feature_width = 64;  // F, multiple of 4
    std::size_t hidden = 64;
    std::size_t controller_hidden = 32;
    std::size_t lane_points = 10;
    double g_min = 1e-3;
    double u2_max = 0.6;
    kinematics::BicycleParams bicycle;
    std::uint64_t init_seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);
};

/// x = G(o, M): [B, F]. Slots: target history (F/2), pooled neighbours
/// (F/4), pooled lanes (F/4).
struct SceneFeatures {
    ad::Var x;
};

/// Diagonal Gaussian q(z0 | x); log_var already clamped to [-10, 10].
struct LatentPosterior {
    ad::Var mean;     // [B,4]
    ad::Var log_var;  // [B,4]
};

struct ContextBundle {
    ad::Var sem;               // [B,4]
    std::vector<ad::Var> ctx;  // T entries of [B,8]
};

/// Stand-in for the graph feature extractor: per-agent encoders over the
/// flattened relative history and mean pooling over neighbours and lanes.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);

    SceneFeatures operator()(ad::Graph& g, std::span<const data::Scenario* const> batch) const;

private:
    std::size_t history_ = 0;
    std::size_t lane_points_ = 0;
    std::size_t slot_ = 0;
    ad::Mlp target_, neighbor_, lane_;
};

class InitialStateEncoder {
public:
    InitialStateEncoder() = default;
    InitialStateEncoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);
    LatentPosterior operator()(ad::Graph& g, const SceneFeatures& x) const;
    const ad::Mlp& network() const { return net_; }

private:
    ad::Mlp net_;
};

/// Residual head producing the global semantics and per-step contexts.
class ContextEncoder {
public:
    ContextEncoder() = default;
    ContextEncoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);
    ContextBundle operator()(ad::Graph& g, const SceneFeatures& x, std::size_t horizon) const;

private:
    std::size_t horizon_ = 0;
    ad::Linear input_, block_in_, block_out_, output_;
};

/// f(z, sem, ctx_t) = z + MLP([z, sem, ctx_t]).
class DriftNet {
public:
    DriftNet() = default;
    DriftNet(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);
    ad::Var operator()(ad::Graph& g, ad::Var z, ad::Var sem, ad::Var ctx_t) const;

private:
    ad::Mlp net_;
};

/// g(z) = softplus(MLP(z)) + g_min, the diagonal of the shared diffusion.
class DiffusionNet {
public:
    DiffusionNet() = default;
    DiffusionNet(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);
    ad::Var operator()(ad::Graph& g, ad::Var z) const;
    double g_min() const { return g_min_; }

private:
    double g_min_ = 1e-3;
    ad::Mlp net_;
};

/// Per-step waypoint head shared over time: p_t = z_t W_skip + MLP(z_t).
class Decoder {
public:
    Decoder() = default;
    Decoder(ad::ParameterStore& store, const NetworkConfig& cfg, std::mt19937_64& rng);
    ad::Var operator()(ad::Graph& g, ad::Var states) const;

private:
    ad::Parameter* skip_ = nullptr;
    ad::Mlp net_;
};

/// All learned mappings plus the parameter store that owns their weights.
/// Parameter groups: extractor, e_s, e_c, f_drift, g_diff, pi_controller, decoder.
class Model {
public:
    explicit Model(const NetworkConfig& cfg);
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const NetworkConfig& config() const { return config_; }
    ad::ParameterStore& params() { return store_; }
    const ad::ParameterStore& params() const { return store_; }

    sde::DriftFn drift_fn() const;
    sde::DiffusionFn diffusion_fn() const;

    FeatureExtractor extractor;
    InitialStateEncoder e_s;
    ContextEncoder e_c;
    DriftNet f_drift;
    DiffusionNet g_diff;
    kinematics::Controller pi;
    Decoder decoder;

private:
    NetworkConfig config_;
    ad::ParameterStore store_;
};

inline constexpr std::array<const char*, 7> kParameterGroups = {"extractor", "e_s",           "e_c",    "f_drift",
                                                                "g_diff",    "pi_controller", "decoder"};

SceneFeatures extract_features(ad::Graph& g, const Model& m, std::span<const data::Scenario* const> batch);
LatentPosterior encode_initial(ad::Graph& g, const Model& m, const SceneFeatures& x);
ContextBundle encode_context(ad::Graph& g, const Model& m, const SceneFeatures& x, std::size_t horizon);

/// z0 = mean + exp(log_var / 2) * noise; noise is [B,4] standard normal.
ad::Var reparameterize(ad::Graph& g, const LatentPosterior& post, const ad::Tensor& noise);

/// Batch mean of 1/2 sum_i (mean_i^2 + exp(log_var_i) - log_var_i - 1).
ad::Var kl_regularizer(const LatentPosterior& post);

ad::Var drift_net(ad::Graph& g, const Model& m, ad::Var z, ad::Var sem, ad::Var ctx_t);
ad::Var diffusion_net(ad::Graph& g, const Model& m, ad::Var z);

/// Decodes z_1..z_T of a rollout (states has T+1 entries). Result is
/// [T*B, 2] in step-major order: row t*B + b is waypoint t+1 of sample b.
ad::Var decode(ad::Graph& g, const Model& m, std::span<const ad::Var> states);

/// Splits a step-major [T*B, 2] tensor into B trajectories of T points.
std::vector<Trajectory> unstack_waypoints(const ad::Tensor& stacked, std::size_t batch);

/// Stacks per-sample trajectories into the step-major layout used by decode.
ad::Tensor stack_waypoints(std::span<const Trajectory> trajectories);

/// Noise for one batch: z0 reparameterization draws and Brownian paths.
struct BatchNoise {
    ad::Tensor z0_noise;  // [B,4]
    std::vector<sde::BrownianPath> paths;

    static BatchNoise sampled(std::size_t batch, std::size_t horizon, std::uint64_t seed);
    static BatchNoise zero(std::size_t batch, std::size_t horizon);
    /// One sample's noise with its own seed, matching `sampled` row-wise.
    static BatchNoise from_seeds(std::span<const std::uint64_t> seeds, std::size_t horizon);
};

/// Edits to the encoded latent before rollout. By default values are
/// offsets on the posterior mean (and on sem); `absolute` replaces them.
struct LatentOverrides {
    std::array<std::optional<double>, 4> z0{};
    std::optional<std::array<double, 4>> sem;
    bool absolute = false;

    bool empty() const;
    void validate() const;
};

struct ForwardPass {
    SceneFeatures features;
    LatentPosterior posterior;
    ContextBundle context;
    ad::Var z0;
    sde::LatentRollout lk;
    std::optional<sde::LatentRollout> bike;
    ad::Var decoded_lk;
    ad::Var decoded_bike;
};

/// Full encoder -> latent SDE(s) -> decoder pass for a batch.
ForwardPass forward(ad::Graph& g, const Model& m, std::span<const data::Scenario* const> batch,
                    const BatchNoise& noise, bool with_bicycle, const LatentOverrides* overrides = nullptr);

/// Deterministic prediction (posterior mean, zero Brownian increments) in
/// each scenario's relative frame.
std::vector<Trajectory> predict(const Model& m, std::span<const data::Scenario> scenarios, std::size_t batch_size = 64);

}  // namespace lksde::nets
