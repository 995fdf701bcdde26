#include <httplib.h>

#include <charconv>
#include <condition_variable>
#include <deque>
#include <limits>

#include "homegate/service.hpp"
#include "homegate/views.hpp"

namespace homegate::core {

using nlohmann::json;

namespace {

constexpr auto kHeartbeat = std::chrono::seconds(15);

struct Route {
  std::string method;
  std::string pattern;  // httplib regex
  std::string sample;
  bool mutating;
  std::function<void(Gateway&, const httplib::Request&, httplib::Response&)> handler;
};

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& msg) {
  send_json(res, {{"status", status}, {"code", code}, {"message", msg}}, status);
}

std::string bearer(const httplib::Request& req) {
  const auto h = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) return {};
  return h.substr(prefix.size());
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw Error(Errc::InvalidValue, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidValue, std::string("request body is not valid JSON: ") + e.what());
  }
}

std::string body_string(const json& j, const char* key, bool required = true) {
  if (!j.contains(key)) {
    if (required) throw Error(Errc::InvalidValue, std::string("missing field '") + key + "'");
    return {};
  }
  if (!j.at(key).is_string()) throw Error(Errc::InvalidValue, std::string("field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::uint64_t body_u64(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_unsigned())
    throw Error(Errc::InvalidValue, std::string("field '") + key + "' must be a non-negative integer");
  return j.at(key).get<std::uint64_t>();
}

std::optional<std::uint64_t> query_u64(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  const auto v = req.get_param_value(key);
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || p != v.data() + v.size())
    throw Error(Errc::InvalidValue, std::string("query parameter '") + key + "' must be an integer");
  return out;
}

template <std::size_t N>
FixedBytes<N> path_id(const std::string& text, const char* what) {
  const auto raw = from_hex(text);
  if (raw.size() != N)
    throw Error(Errc::InvalidValue, std::string(what) + " must be " + std::to_string(2 * N) + " hex characters");
  return to_fixed<N>(raw);
}

json delta_json(const PolicyDelta& d) { return {{"added", d.added}, {"removed", d.removed}}; }

// One SSE connection: a bounded queue fed by the gateway's event fan-out.
struct EventPipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> q;
  bool closed = false;
};

std::vector<Route> build_routes(std::shared_ptr<std::atomic<bool>> stopping) {
  std::vector<Route> r;
  const std::string id8 = "0000000000000001";
  const std::string id16 = "00000000000000000000000000000001";

  r.push_back({"GET", "/api/v1/health", "/api/v1/health", false,
               [](Gateway&, const httplib::Request&, httplib::Response& res) {
                 send_json(res, {{"status", "ok"}});
               }});
  r.push_back({"GET", "/api/v1/devices", "/api/v1/devices", false,
               [](Gateway& gw, const httplib::Request&, httplib::Response& res) {
                 json out = json::array();
                 for (const auto& d : gw.devices()) out.push_back(device_view(d));
                 send_json(res, out);
               }});
  r.push_back({"GET", R"(/api/v1/devices/([0-9a-fA-F]+))", "/api/v1/devices/" + id8, false,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<8>(req.matches[1], "device id");
                 const auto d = gw.device(id);
                 if (!d) throw Error(Errc::UnknownDevice, "unknown device " + to_hex(id));
                 send_json(res, device_view(*d));
               }});
  r.push_back({"GET", "/api/v1/enrollments", "/api/v1/enrollments", false,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 std::optional<enroll::RequestState> st;
                 if (req.has_param("state"))
                   st = enroll::parse_request_state(req.get_param_value("state"));
                 json out = json::array();
                 for (const auto& e : gw.enrollments(st)) out.push_back(request_view(e));
                 send_json(res, out);
               }});
  r.push_back({"POST", R"(/api/v1/enrollments/([0-9a-fA-F]+)/approve)",
               "/api/v1/enrollments/" + id16 + "/approve", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<16>(req.matches[1], "request id");
                 const auto body = body_json(req);
                 auto out = gw.decide_enrollment(id, Approve{body_string(body, "zone")}, bearer(req));
                 send_json(res, {{"request", request_view(out.request)},
                                 {"device", out.device ? device_view(*out.device) : json(nullptr)}});
               }});
  r.push_back({"POST", R"(/api/v1/enrollments/([0-9a-fA-F]+)/deny)",
               "/api/v1/enrollments/" + id16 + "/deny", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<16>(req.matches[1], "request id");
                 const auto body = body_json(req);
                 auto out = gw.decide_enrollment(id, Deny{body_string(body, "reason", false)}, bearer(req));
                 send_json(res, {{"request", request_view(out.request)}});
               }});
  r.push_back({"POST", R"(/api/v1/devices/([0-9a-fA-F]+)/quarantine)",
               "/api/v1/devices/" + id8 + "/quarantine", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<8>(req.matches[1], "device id");
                 const auto body = body_json(req);
                 std::string cause = body_string(body, "cause", false);
                 if (cause.empty()) cause = "operator";
                 try {
                   const auto delta = gw.quarantine(id, cause);
                   send_json(res, {{"device", device_view(*gw.device(id))},
                                   {"policy_delta", delta_json(delta)}});
                 } catch (const Error& e) {
                   if (e.code() != Errc::AlreadyQuarantined) throw;
                   send_json(res, {{"device", device_view(*gw.device(id))},
                                   {"already_quarantined", true}});
                 }
               }});
  r.push_back({"POST", R"(/api/v1/devices/([0-9a-fA-F]+)/release)",
               "/api/v1/devices/" + id8 + "/release", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<8>(req.matches[1], "device id");
                 const auto delta = gw.release(id, bearer(req));
                 send_json(res, {{"device", device_view(*gw.device(id))},
                                 {"policy_delta", delta_json(delta)}});
               }});
  r.push_back({"POST", R"(/api/v1/devices/([0-9a-fA-F]+)/revoke)",
               "/api/v1/devices/" + id8 + "/revoke", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<8>(req.matches[1], "device id");
                 const auto body = body_json(req);
                 const auto rec = gw.revoke_device(id, body_string(body, "reason", false), bearer(req));
                 send_json(res, {{"device_id", to_hex(rec.device_id)},
                                 {"serial", to_hex(rec.serial)},
                                 {"revoked_at", rec.revoked_at},
                                 {"reason", rec.reason},
                                 {"newly_revoked", rec.newly_revoked}});
               }});
  r.push_back({"GET", "/api/v1/alerts", "/api/v1/alerts", false,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 std::optional<bool> ack;
                 if (req.has_param("ack")) {
                   const auto v = req.get_param_value("ack");
                   if (v != "true" && v != "false")
                     throw Error(Errc::InvalidValue, "ack must be true or false");
                   ack = v == "true";
                 }
                 json out = json::array();
                 for (const auto& a : gw.alerts(query_u64(req, "since"), ack)) out.push_back(alert_view(a));
                 send_json(res, out);
               }});
  r.push_back({"POST", R"(/api/v1/alerts/(\d+)/ack)", "/api/v1/alerts/1/ack", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 std::uint64_t id = 0;
                 const std::string s = req.matches[1];
                 std::from_chars(s.data(), s.data() + s.size(), id);
                 send_json(res, alert_view(gw.acknowledge_alert(id)));
               }});
  r.push_back({"GET", R"(/api/v1/telemetry/([0-9a-fA-F]+))", "/api/v1/telemetry/" + id8, false,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto id = path_id<8>(req.matches[1], "device id");
                 const auto from = query_u64(req, "from").value_or(0);
                 const auto to = query_u64(req, "to").value_or(std::numeric_limits<UnixMs>::max());
                 const auto bucket = query_u64(req, "bucket").value_or(0);
                 const auto agg = req.has_param("agg") ? store::parse_aggregate(req.get_param_value("agg"))
                                                       : store::Aggregate::Raw;
                 json pts = json::array();
                 for (const auto& p : gw.query_readings(id, from, to, bucket, agg))
                   pts.push_back({{"t", p.t}, {"value", p.value}, {"count", p.count}});
                 send_json(res, {{"device_id", to_hex(id)},
                                 {"agg", store::aggregate_name(agg)},
                                 {"bucket", bucket},
                                 {"points", pts}});
               }});
  r.push_back({"GET", "/api/v1/zones", "/api/v1/zones", false,
               [](Gateway& gw, const httplib::Request&, httplib::Response& res) {
                 json out = json::array();
                 for (const auto& z : gw.zones()) out.push_back(zone_view(z));
                 send_json(res, out);
               }});
  r.push_back({"PUT", R"(/api/v1/zones/([A-Za-z0-9_.-]+))", "/api/v1/zones/sample", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 auto body = body_json(req);
                 body["name"] = std::string(req.matches[1]);
                 seg::Zone z;
                 try {
                   z = zone_from_json(body);
                 } catch (const json::exception& e) {
                   throw Error(Errc::InvalidValue, std::string("invalid zone: ") + e.what());
                 }
                 send_json(res, zone_view(gw.define_zone(z.name, z.range, z.role, z.allow_to)), 201);
               }});
  r.push_back({"GET", "/api/v1/policy/rules", "/api/v1/policy/rules", false,
               [](Gateway& gw, const httplib::Request&, httplib::Response& res) {
                 res.set_content(gw.policy().render(), "text/plain");
               }});
  r.push_back({"GET", "/api/v1/audit/verify", "/api/v1/audit/verify", false,
               [](Gateway& gw, const httplib::Request&, httplib::Response& res) {
                 const auto v = gw.verify_audit();
                 json out = {{"ok", v.ok}, {"count", v.count}};
                 out["broken_at"] = v.ok ? json(nullptr) : json(v.broken_at);
                 send_json(res, out);
               }});
  r.push_back({"POST", "/api/v1/export", "/api/v1/export", true,
               [](Gateway& gw, const httplib::Request& req, httplib::Response& res) {
                 const auto body = body_json(req);
                 const auto pub = from_base64(body_string(body, "recipient_pub"));
                 if (pub.size() != 32)
                   throw Error(Errc::InvalidValue, "recipient_pub must be 32 bytes of base64");
                 const auto bundle = gw.export_batch(body_u64(body, "from"), body_u64(body, "to"),
                                                     to_fixed<32>(pub));
                 send_json(res, {{"bundle", to_base64(bundle.encode())},
                                 {"bundle_hash", to_hex(bundle.bundle_hash())},
                                 {"record_count", bundle.header.record_count}});
               }});
  r.push_back({"GET", "/api/v1/events", "/api/v1/events", false,
               [stopping](Gateway& gw, const httplib::Request&, httplib::Response& res) {
                 auto pipe = std::make_shared<EventPipe>();
                 const auto sub = gw.subscribe([pipe](const GatewayEvent& ev) {
                   std::lock_guard lock(pipe->mu);
                   if (pipe->closed || pipe->q.size() > 4096) return;
                   pipe->q.push_back("event: " + ev.type + "\ndata: " + ev.data.dump() + "\n\n");
                   pipe->cv.notify_one();
                 });
                 res.set_header("Cache-Control", "no-cache");
                 res.set_chunked_content_provider(
                     "text/event-stream",
                     [pipe, stopping](std::size_t, httplib::DataSink& sink) {
                       std::unique_lock lock(pipe->mu);
                       const auto deadline = std::chrono::steady_clock::now() + kHeartbeat;
                       while (pipe->q.empty() && !*stopping &&
                              std::chrono::steady_clock::now() < deadline)
                         pipe->cv.wait_for(lock, std::chrono::milliseconds(200));
                       if (*stopping) {
                         sink.done();
                         return true;
                       }
                       std::string chunk;
                       if (pipe->q.empty()) chunk = ": heartbeat\n\n";
                       while (!pipe->q.empty()) {
                         chunk += pipe->q.front();
                         pipe->q.pop_front();
                       }
                       lock.unlock();
                       return sink.write(chunk.data(), chunk.size());
                     },
                     [pipe, sub, &gw](bool) {
                       {
                         std::lock_guard lock(pipe->mu);
                         pipe->closed = true;
                       }
                       gw.unsubscribe(sub);
                     });
               }});
  return r;
}

}  // namespace

const std::vector<RouteInfo>& api_routes() {
  static const std::vector<RouteInfo> info = [] {
    std::vector<RouteInfo> out;
    for (const auto& r : build_routes(std::make_shared<std::atomic<bool>>(false)))
      out.push_back({r.method, r.sample, r.mutating});
    return out;
  }();
  return info;
}

int http_status(Errc code) {
  switch (code) {
    case Errc::Unauthorized: return 401;
    case Errc::UnknownRequest:
    case Errc::UnknownDevice:
    case Errc::UnknownAlert:
    case Errc::UnknownHandle: return 404;
    case Errc::NotPending:
    case Errc::DuplicatePending:
    case Errc::RegistryFull:
    case Errc::AlreadyQuarantined:
    case Errc::NotQuarantined:
    case Errc::NotActive:
    case Errc::DuplicateName:
    case Errc::OverlappingRange:
    case Errc::ZoneExhausted: return 409;
    case Errc::UnknownZone:
    case Errc::InvalidValue:
    case Errc::InvalidAddress:
    case Errc::InvalidProof:
    case Errc::RoleForbidden:
    case Errc::InvalidReading:
    case Errc::PayloadTooLarge:
    case Errc::BadRange:
    case Errc::ParseError:
    case Errc::Malformed: return 422;
    default: return 500;
  }
}

ApiServer::ApiServer(Gateway& gateway, std::optional<std::filesystem::path> www_dir,
                     bool single_thread)
    : gw_(gateway), svr_(std::make_unique<httplib::Server>()),
      stopping_(std::make_shared<std::atomic<bool>>(false)) {
  if (single_thread) svr_->new_task_queue = [] { return new httplib::ThreadPool(1); };
  // no SO_REUSEPORT: a second gateway on the same port must fail to bind
  svr_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  install_routes();
  if (www_dir && std::filesystem::is_directory(*www_dir)) svr_->set_mount_point("/", www_dir->string());
  svr_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty())
      send_error(res, res.status, res.status == 404 ? "not_found" : "http_error",
                 httplib::status_message(res.status));
  });
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::install_routes() {
  for (auto& route : build_routes(stopping_)) {
    auto handler = [this, route](const httplib::Request& req, httplib::Response& res) {
      try {
        if (route.mutating && !gw_.authorize(bearer(req)))
          return send_error(res, 401, errc_name(Errc::Unauthorized),
                            "missing or invalid operator token");
        route.handler(gw_, req, res);
      } catch (const Error& e) {
        send_error(res, http_status(e.code()), errc_name(e.code()), e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    };
    if (route.method == "GET") svr_->Get(route.pattern, handler);
    else if (route.method == "POST") svr_->Post(route.pattern, handler);
    else if (route.method == "PUT") svr_->Put(route.pattern, handler);
  }
}

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = svr_->bind_to_any_port(host);
    if (port_ <= 0) throw Error(Errc::PortInUse, "cannot bind HTTP on " + host);
  } else {
    if (!svr_->bind_to_port(host, port))
      throw Error(Errc::PortInUse, "HTTP port " + host + ":" + std::to_string(port) + " is in use");
    port_ = port;
  }
  return port_;
}

void ApiServer::start() {
  thread_ = std::thread([this] { svr_->listen_after_bind(); });
  svr_->wait_until_ready();
}

void ApiServer::stop() {
  *stopping_ = true;
  if (svr_) svr_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace homegate::core
