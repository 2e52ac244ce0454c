#pragma once

#include <json.hpp>

#include "dfr/datasets.hpp"
#include "dfr/replay.hpp"
#include "dfr/session.hpp"

namespace dfr {

// Canonical JSON forms: field order is fixed, so dumps are byte-stable and
// hashable. from_* accept missing fields (defaults apply) and reject unknown
// ones to catch config typos.

nlohmann::ordered_json gen_config_json(const GenTrainConfig& cfg);
GenTrainConfig gen_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json protocol_config_json(const ProtocolConfig& cfg);
ProtocolConfig protocol_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json protocol_spec_json(const ProtocolSpec& spec);
ProtocolSpec protocol_spec_from_json(const nlohmann::json& j);

}  // namespace dfr
