#pragma once

// Device capability, channel cost and packet sizing used to price actions.

#include <cstdint>
#include <string_view>

namespace p2pfl {

enum class ActionKind : std::uint8_t {
    ShareModel = 0,
    SharePartialModel = 1,
    ShareRawData = 2,
    ShareSyntheticData = 3,
};

inline constexpr ActionKind kAllActionKinds[] = {ActionKind::ShareModel, ActionKind::SharePartialModel,
                                                 ActionKind::ShareRawData, ActionKind::ShareSyntheticData};

/// Short stable name used in configs and CSV output: model, partial_model,
/// raw, synthetic.
std::string_view to_string(ActionKind kind);
/// Inverse of to_string; throws ConfigError on unknown names.
ActionKind parse_action_kind(std::string_view name);

constexpr bool is_model_action(ActionKind k) {
    return k == ActionKind::ShareModel || k == ActionKind::SharePartialModel;
}

struct DeviceResources {
    double power = 1.0;        ///< battery level, [0,1]
    double mem = 1.0;          ///< available memory, [0,1]
    double bandwidth = 1.0e6;  ///< bytes per round; also the per-round budget

    void validate() const;
};

struct SizeModel {
    std::uint64_t bytes_per_sample = 3072; // one 32x32x3 byte image
    std::uint64_t bytes_per_param = 4;
    double model_compression = 1.0;
    double alpha = 1.0;

    void validate() const;
    bool operator==(const SizeModel&) const = default;
};

/// Capability weight power * mem, in [0,1].
double compute_capacity(const DeviceResources& resources);

/// Channel time alpha * size / bandwidth, in rounds.
double comm_cost(double bandwidth, double size_bytes, double alpha);

/// Parameter count for model actions (unfrozen count for partial sharing),
/// sample count for data actions.
struct PayloadDescriptor {
    std::uint64_t count = 0;
    bool operator==(const PayloadDescriptor&) const = default;
};

/// Bytes on the wire for one action. Model packets are rounded up to whole
/// bytes after compression; data packets are exactly linear in sample count.
std::uint64_t packet_size(ActionKind kind, PayloadDescriptor payload, const SizeModel& size_model);

} // namespace p2pfl
