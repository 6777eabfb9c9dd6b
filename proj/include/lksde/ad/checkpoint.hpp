#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "lksde/ad/parameter.hpp"

namespace lksde::ad {

inline constexpr const char* kCheckpointFormat = "lksde-checkpoint";
inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parsed container: parameter name -> tensor, plus free-form metadata
/// (the training module stores its run configuration there).
struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;
};

nlohmann::json checkpoint_to_json(const ParameterStore& store, const nlohmann::json& metadata);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const nlohmann::json& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Overwrites every parameter in `store` from the checkpoint. Missing names
/// or shape mismatches raise CheckpointError.
void load_parameters(ParameterStore& store, const Checkpoint& ckpt);

}  // namespace lksde::ad
