#include "lksde/ad/checkpoint.hpp"

#include <fstream>
#include <sstream>

namespace lksde::ad {

nlohmann::json checkpoint_to_json(const ParameterStore& store, const nlohmann::json& metadata) {
    nlohmann::json params = nlohmann::json::object();
    for (const Parameter* p : store.all()) {
        params[p->name] = {
            {"shape", p->value.shape()},
            {"data", std::vector<double>(p->value.data().begin(), p->value.data().end())},
        };
    }
    return {
        {"format", kCheckpointFormat},
        {"version", kCheckpointVersion},
        {"metadata", metadata},
        {"parameters", std::move(params)},
    };
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) throw CheckpointError("not an lksde checkpoint");
        const int version = doc.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
        }
        Checkpoint ckpt;
        ckpt.metadata = doc.value("metadata", nlohmann::json::object());
        for (const auto& [name, entry] : doc.at("parameters").items()) {
            auto shape = entry.at("shape").get<Shape>();
            auto data = entry.at("data").get<std::vector<double>>();
            try {
                ckpt.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
            } catch (const ShapeError& e) {
                throw CheckpointError("parameter " + name + ": " + e.what());
            }
        }
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store, const nlohmann::json& metadata) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(store, metadata).dump(1) << '\n';
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
    return checkpoint_from_json(doc);
}

void load_parameters(ParameterStore& store, const Checkpoint& ckpt) {
    for (Parameter* p : store.all()) {
        auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint is missing parameter " + p->name);
        if (it->second.shape() != p->value.shape()) {
            throw CheckpointError("parameter " + p->name + " has shape " + shape_string(it->second.shape()) +
                                  ", model expects " + shape_string(p->value.shape()));
        }
        p->value = it->second;
        p->zero_grad();
    }
}

}  // namespace lksde::ad
