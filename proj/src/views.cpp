#include "homegate/views.hpp"

namespace homegate::core {

using nlohmann::json;

json certificate_view(const pki::Certificate& c) {
  return {{"serial", to_hex(c.serial)},
          {"subject", c.subject},
          {"issuer", c.issuer},
          {"role", pki::role_name(c.role)},
          {"not_before", c.not_before},
          {"not_after", c.not_after},
          {"public_key", to_hex(c.public_key)}};
}

json device_view(const enroll::DeviceRecord& d) {
  return {{"id", to_hex(d.device_id)},
          {"name", d.name},
          {"zone", d.zone},
          {"address", d.address.to_string()},
          {"status", enroll::device_status_name(d.status)},
          {"telemetry_key_epoch", d.telemetry_key_epoch},
          {"last_seq", d.last_seq},
          {"last_seen", d.last_seen},
          {"enrolled_at", d.enrolled_at},
          {"request_id", to_hex(d.request_id)},
          {"certificate", certificate_view(d.certificate)}};
}

json request_view(const enroll::EnrollmentRequest& r) {
  json j = {{"id", to_hex(r.request_id)},
            {"requested_name", r.requested_name},
            {"subject", r.csr.subject},
            {"role", pki::role_name(r.csr.role)},
            {"public_key", to_hex(r.csr.public_key)},
            {"source_address", r.source_address},
            {"received_at", r.received_at},
            {"state", enroll::request_state_name(r.state)},
            {"reason", r.reason},
            {"decided_at", r.decided_at}};
  j["device_id"] = r.device_id ? json(to_hex(*r.device_id)) : json(nullptr);
  return j;
}

json alert_view(const ids::Alert& a) {
  json j = {{"alert_id", a.alert_id},
            {"rule", ids::rule_name(a.rule)},
            {"severity", ids::severity_name(a.severity)},
            {"source", a.source},
            {"at", a.at},
            {"detail", a.detail},
            {"acknowledged", a.acknowledged}};
  j["device_id"] = a.device_id ? json(to_hex(*a.device_id)) : json(nullptr);
  return j;
}

json zone_view(const seg::Zone& z) {
  json grants = json::array();
  for (const auto& g : z.allow_to) {
    json gj = {{"zone", g.zone}, {"proto", seg::proto_name(g.proto)}};
    gj["port"] = g.port ? json(*g.port) : json(nullptr);
    grants.push_back(gj);
  }
  return {{"name", z.name},
          {"range", z.range.to_string()},
          {"role", seg::zone_role_name(z.role)},
          {"gateway", z.gateway_address().to_string()},
          {"assignable", z.assignable()},
          {"allow_to", grants}};
}

seg::Zone zone_from_json(const json& j) {
  seg::Zone z;
  z.name = j.at("name").get<std::string>();
  z.range = seg::Block::parse(j.at("range").get<std::string>());
  z.role = seg::parse_zone_role(j.at("role").get<std::string>());
  if (j.contains("allow_to")) {
    for (const auto& g : j.at("allow_to")) {
      seg::Grant grant;
      grant.zone = g.at("zone").get<std::string>();
      if (g.contains("proto")) grant.proto = seg::parse_proto(g.at("proto").get<std::string>());
      if (g.contains("port") && !g.at("port").is_null())
        grant.port = g.at("port").get<std::uint16_t>();
      z.allow_to.push_back(grant);
    }
  }
  return z;
}

ids::RuleId parse_rule_name(std::string_view s) {
  for (auto r : {ids::RuleId::R1Unknown, ids::RuleId::R2Replay, ids::RuleId::R3Auth,
                 ids::RuleId::R4Flood, ids::RuleId::R5Silent})
    if (ids::rule_name(r) == s) return r;
  throw Error(Errc::InvalidValue, "unknown rule '" + std::string(s) + "'");
}

ids::Alert alert_from_json(const json& j) {
  ids::Alert a;
  a.alert_id = j.at("alert_id").get<std::uint64_t>();
  a.rule = parse_rule_name(j.at("rule").get<std::string>());
  const auto sev = j.at("severity").get<std::string>();
  a.severity = sev == "CRIT" ? ids::Severity::Crit
               : sev == "WARN" ? ids::Severity::Warn
                               : ids::Severity::Info;
  a.source = j.value("source", "");
  a.at = j.at("at").get<UnixMs>();
  a.detail = j.value("detail", "");
  a.acknowledged = j.value("acknowledged", false);
  if (!j.at("device_id").is_null())
    a.device_id = to_fixed<8>(from_hex(j.at("device_id").get<std::string>()));
  return a;
}

}  // namespace homegate::core
