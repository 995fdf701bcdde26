#pragma once

#include <json.hpp>

#include "homegate/enrollment.hpp"
#include "homegate/ids.hpp"
#include "homegate/pki.hpp"
#include "homegate/segmentation.hpp"

// JSON renderings shared by the HTTP API, the CLI and state.json.
namespace homegate::core {

nlohmann::json device_view(const enroll::DeviceRecord& d);
nlohmann::json request_view(const enroll::EnrollmentRequest& r);
nlohmann::json alert_view(const ids::Alert& a);
nlohmann::json zone_view(const seg::Zone& z);
nlohmann::json certificate_view(const pki::Certificate& c);

seg::Zone zone_from_json(const nlohmann::json& j);
ids::Alert alert_from_json(const nlohmann::json& j);
ids::RuleId parse_rule_name(std::string_view s);

}  // namespace homegate::core
