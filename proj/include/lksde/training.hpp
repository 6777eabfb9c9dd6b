#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lksde/ad/checkpoint.hpp"
#include "lksde/ad/graph.hpp"
#include "lksde/ad/optimizer.hpp"
#include "lksde/networks.hpp"
#include "lksde/scenario.hpp"

namespace lksde::training {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    std::size_t T = 30;
    std::size_t k = 20;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double lambda_reg = 0.1;
    double lambda_kin = 1.0;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    kinematics::BicycleParams bicycle;
    double g_min = 1e-3;
    double u2_max = 0.6;
    OptimizerKind optimizer = OptimizerKind::sgd;
    std::array<double, 3> split = {0.7, 0.15, 0.15};
    std::size_t feature_width = 64;
    std::size_t hidden = 64;
    std::size_t controller_hidden = 32;
    std::size_t lane_points = 10;

    void validate() const;
    nets::NetworkConfig network() const;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);

    /// `key = value` lines; `#` starts a comment. Unknown keys are errors.
    static TrainConfig parse(std::istream& in);
    static TrainConfig load(const std::filesystem::path& path);
    std::string to_text() const;
};

struct LossReport {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    double l_reg = 0.0;
    double l_kin = 0.0;
    double l_pred = 0.0;
    double total = 0.0;
};

inline constexpr const char* kLossCsvHeader = "epoch,batch,l_reg,l_kin,l_pred,total";

/// Elementwise 0.5 e^2 for |e| < 1, |e| - 0.5 otherwise, averaged over all
/// waypoints and both coordinates.
ad::Var smooth_l1(ad::Graph& g, ad::Var pred, const ad::Tensor& truth);
double smooth_l1(const Trajectory& pred, const Trajectory& truth);

/// Where the bicycle drift in l_kin is evaluated: at the LK-SDE state z_t
/// (both drifts on one path, the path-measure KL) or at the bicycle
/// rollout's own state s_t.
enum class KinAnchor { shared_state, own_rollout };

struct LossWeights {
    double lambda_reg = 0.1;
    double lambda_kin = 1.0;
    KinAnchor anchor = KinAnchor::shared_state;
};

struct Losses {
    ad::Var l_reg;
    ad::Var l_kin;
    ad::Var l_pred;
    ad::Var total;
    nets::ForwardPass pass;
};

/// Builds the three losses with their gradient routing:
///   l_reg reaches extractor and e_s only;
///   l_kin is evaluated on detached states, semantics and bicycle drift, so it
///   reaches f_drift and g_diff only;
///   l_pred decodes both rollouts and reaches every group.
Losses compute_losses(ad::Graph& g, const nets::Model& model, std::span<const data::Scenario* const> batch,
                      const nets::BatchNoise& noise, const LossWeights& weights);

/// Step-major [T*B, 2] ground truth in each scenario's relative frame.
ad::Tensor stacked_truth(std::span<const data::Scenario* const> batch, std::size_t horizon);

class Trainer {
public:
    Trainer(nets::Model& model, const TrainConfig& config);

    /// One combined optimizer step on a batch. Throws TrainingError on a
    /// non-finite loss, leaving parameters untouched.
    LossReport train_step(std::span<const data::Scenario* const> batch, std::uint64_t noise_seed);

private:
    nets::Model& model_;
    TrainConfig config_;
    std::vector<ad::Parameter*> params_;
    ad::Adam adam_;
};

/// Mean ADE of deterministic predictions against the local ground truth.
double mean_ade(const nets::Model& model, std::span<const data::Scenario> scenarios);

struct TrainOutputs {
    std::filesystem::path directory;
    bool keep_epoch_checkpoints = false;
};

struct TrainResult {
    std::vector<LossReport> history;
    std::vector<double> val_ade;  // one entry per epoch
    std::size_t best_epoch = 0;   // 0 = initial weights
    double best_val_ade = 0.0;
};

using ProgressFn = std::function<void(std::size_t epoch, double mean_total, double val_ade)>;

/// Outer loop. Writes into `outputs.directory`:
///   model.json          best epoch by validation ADE (initial weights if epochs = 0)
///   last.json           weights after the final epoch
///   loss_history.csv    one row per batch
///   epoch_NNN.json      per-epoch weights when keep_epoch_checkpoints is set
/// `model` ends holding the best weights.
TrainResult train(nets::Model& model, std::span<const data::Scenario> train_set, std::span<const data::Scenario> val_set,
                  const TrainConfig& config, const TrainOutputs* outputs = nullptr, const ProgressFn& progress = {});

void write_loss_csv(std::ostream& out, std::span<const LossReport> history);

/// Checkpoint with the network configuration in its metadata.
void save_model(const std::filesystem::path& path, const nets::Model& model, const nlohmann::json& extra = {});
nets::Model load_model(const std::filesystem::path& path);
nets::Model model_from_checkpoint(const ad::Checkpoint& ckpt);

}  // namespace lksde::training
