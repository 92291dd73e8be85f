#include "p2pfl/cost_model.hpp"

#include <cmath>
#include <string>

#include "p2pfl/errors.hpp"

namespace p2pfl {

std::string_view to_string(ActionKind kind) {
    switch (kind) {
    case ActionKind::ShareModel: return "model";
    case ActionKind::SharePartialModel: return "partial_model";
    case ActionKind::ShareRawData: return "raw";
    case ActionKind::ShareSyntheticData: return "synthetic";
    }
    throw InternalError("unknown action kind " + std::to_string(static_cast<int>(kind)));
}

ActionKind parse_action_kind(std::string_view name) {
    for (ActionKind k : kAllActionKinds) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown action kind '" + std::string(name) + "'");
}

void DeviceResources::validate() const {
    if (!(power >= 0.0 && power <= 1.0)) throw ConfigError("resources.power must be in [0,1]");
    if (!(mem >= 0.0 && mem <= 1.0)) throw ConfigError("resources.mem must be in [0,1]");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("resources.bandwidth must be > 0");
}

void SizeModel::validate() const {
    if (bytes_per_sample == 0) throw ConfigError("size_model.bytes_per_sample must be > 0");
    if (bytes_per_param == 0) throw ConfigError("size_model.bytes_per_param must be > 0");
    if (!(model_compression > 0.0 && model_compression <= 1.0)) {
        throw ConfigError("size_model.compression must be in (0,1]");
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("size_model.alpha must be > 0");
}

double compute_capacity(const DeviceResources& resources) {
    resources.validate();
    return resources.power * resources.mem;
}

double comm_cost(double bandwidth, double size_bytes, double alpha) {
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be > 0");
    return alpha * size_bytes / bandwidth;
}

std::uint64_t packet_size(ActionKind kind, PayloadDescriptor payload, const SizeModel& size_model) {
    switch (kind) {
    case ActionKind::ShareModel:
    case ActionKind::SharePartialModel: {
        const auto raw = payload.count * size_model.bytes_per_param;
        if (size_model.model_compression == 1.0) return raw;
        return static_cast<std::uint64_t>(std::ceil(static_cast<double>(raw) * size_model.model_compression));
    }
    case ActionKind::ShareRawData:
    case ActionKind::ShareSyntheticData:
        return payload.count * size_model.bytes_per_sample;
    }
    throw InternalError("unknown action kind " + std::to_string(static_cast<int>(kind)));
}

} // namespace p2pfl
