#include <csignal>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "homegate/audit.hpp"
#include "homegate/config.hpp"
#include "homegate/gateway.hpp"
#include "homegate/ids.hpp"
#include "homegate/service.hpp"
#include "homegate/sim.hpp"

using namespace homegate;
using nlohmann::json;

namespace {

struct ClientOpts {
  std::string config_path;
  std::string url;
  std::string token;
};

core::Config config_or_default(const std::string& path) {
  return path.empty() ? core::Config{} : core::load_config(path);
}

// Resolves --url/--token, falling back to the config file.
struct ApiClient {
  std::unique_ptr<httplib::Client> http;
  std::string token;

  explicit ApiClient(const ClientOpts& o) {
    std::string url = o.url;
    token = o.token;
    if (url.empty() || token.empty()) {
      const auto cfg = config_or_default(o.config_path);
      if (url.empty()) {
        auto host = cfg.http_listen.host;
        if (host == "0.0.0.0") host = "127.0.0.1";
        url = "http://" + host + ":" + std::to_string(cfg.http_listen.port);
      }
      if (token.empty()) token = cfg.operator_token;
    }
    http = std::make_unique<httplib::Client>(url);
    http->set_connection_timeout(5);
    http->set_read_timeout(10);
  }

  httplib::Headers headers() const {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return h;
  }

  json check(const httplib::Result& r) const {
    if (!r) throw Error(Errc::StorageFailure, "gateway unreachable: " + httplib::to_string(r.error()));
    json body = json::parse(r->body, nullptr, false);
    if (r->status / 100 != 2) {
      std::string msg = body.is_object() && body.contains("message")
                            ? body["code"].get<std::string>() + ": " + body["message"].get<std::string>()
                            : r->body;
      throw std::runtime_error("HTTP " + std::to_string(r->status) + " " + msg);
    }
    return body;
  }

  json get(const std::string& path) { return check(http->Get(path, headers())); }
  json post(const std::string& path, const json& body) {
    return check(http->Post(path, headers(), body.dump(), "application/json"));
  }
  json put(const std::string& path, const json& body) {
    return check(http->Put(path, headers(), body.dump(), "application/json"));
  }
};

void add_client_opts(CLI::App* app, ClientOpts& o) {
  app->add_option("--config", o.config_path, "config file (for url and token)");
  app->add_option("--url", o.url, "gateway API base url, e.g. http://127.0.0.1:8080");
  app->add_option("--token", o.token, "operator token");
}

crypto::Key32 seed_from_hex(const std::string& hex) {
  const Bytes raw = from_hex(hex);
  if (raw.empty()) throw Error(Errc::InvalidValue, "--seed must not be empty");
  if (raw.size() == 32) {
    crypto::Key32 k{};
    std::copy(raw.begin(), raw.end(), k.begin());
    return k;
  }
  return crypto::sha256(raw);
}

int cmd_init(const std::string& dir, const std::string& seed_hex, bool as_json) {
  std::optional<crypto::Key32> seed;
  if (!seed_hex.empty()) seed = seed_from_hex(seed_hex);
  SystemClock clock;
  const auto res = core::init_data_dir(dir, seed, clock);
  const auto& c = res.root_cert;
  if (as_json) {
    std::cout << json{{"data_dir", res.data_dir.string()},
                      {"root_serial", to_hex(c.serial)},
                      {"root_public_key", to_hex(c.public_key)},
                      {"not_after", c.not_after}}
                     .dump(2)
              << "\n";
  } else {
    std::cout << "initialized " << res.data_dir.string() << "\n"
              << "root serial " << to_hex(c.serial) << "\n"
              << "root key    " << to_hex(c.public_key) << "\n";
  }
  return 0;
}

int cmd_run(const std::string& config_path) {
  const auto cfg = core::load_config(config_path);
  if (cfg.operator_token.empty())
    throw Error(Errc::InvalidValue, "operator_token must be set to run the gateway");

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);  // before any thread starts

  SystemClock clock;
  auto svc = core::Service::start(cfg, clock);
  std::cerr << "homegate: udp " << cfg.udp_listen.host << ":" << svc->udp_port() << ", http "
            << cfg.http_listen.host << ":" << svc->http_port() << "\n";
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "homegate: signal " << sig << ", shutting down\n";
  svc->stop();
  return 0;
}

void print_requests(const json& list, bool as_json) {
  if (as_json) {
    std::cout << list.dump(2) << "\n";
    return;
  }
  if (list.empty()) {
    std::cout << "no enrollment requests\n";
    return;
  }
  for (const auto& r : list)
    std::cout << r["id"].get<std::string>() << "  " << r["state"].get<std::string>() << "  "
              << r["requested_name"].get<std::string>() << "  " << r["source_address"].get<std::string>()
              << "\n";
}

int cmd_audit_verify(const std::string& data_dir, const std::string& config_path, bool as_json) {
  std::filesystem::path dir = data_dir;
  if (dir.empty()) dir = config_or_default(config_path).data_dir;
  const auto r = audit::verify_directory(dir);
  if (as_json)
    std::cout << json{{"ok", r.ok}, {"count", r.count},
                      {"broken_at", r.ok ? json(nullptr) : json(r.broken_at)}}
                     .dump()
              << "\n";
  else if (r.ok)
    std::cout << "OK n=" << r.count << "\n";
  else
    std::cout << "BROKEN index=" << r.broken_at << "\n";
  return r.ok ? 0 : 1;
}

int cmd_credscan(const std::string& dict_path, const sim::CredentialFleetOptions& opts,
                 bool as_json) {
  const auto dict = ids::load_dictionary(dict_path);
  auto fleet = sim::make_credential_fleet(opts);
  ManualClock clock(sim::Simulation::kEpoch);
  std::vector<ids::LoginEndpoint*> targets;
  for (auto& ep : fleet) {
    ep->attach_clock(&clock);
    targets.push_back(ep.get());
  }
  ids::ScanPacing pacing;
  pacing.clock = &clock;
  pacing.wait_until = [&clock](UnixMs t) {
    if (t > clock.now_ms()) clock.set(t);
  };
  const auto rep = ids::audit_default_credentials(targets, dict, pacing);

  if (as_json) {
    json f = json::array();
    for (const auto& x : rep.findings)
      f.push_back({{"target", x.target_id},
                   {"service", x.service},
                   {"username", x.username},
                   {"password", x.masked_password()},
                   {"entry", x.entry_id}});
    std::cout << json{{"targets", targets.size()},
                      {"attempts", rep.attempts},
                      {"findings", f},
                      {"unreachable", rep.unreachable}}
                     .dump(2)
              << "\n";
  } else {
    std::cout << "scanned " << targets.size() << " simulated targets, " << rep.attempts
              << " attempts\n";
    for (const auto& x : rep.findings)
      std::cout << "FINDING " << x.target_id << " " << x.service << " " << x.username << " "
                << x.masked_password() << " (entry " << x.entry_id << ")\n";
    for (const auto& u : rep.unreachable) std::cout << "UNREACHABLE " << u << "\n";
    if (rep.findings.empty()) std::cout << "no default credentials found\n";
  }
  return rep.findings.empty() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"homegate: local IoT gateway"};
  app.require_subcommand(1);
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable output");

  // init
  auto* init = app.add_subcommand("init", "create a data directory with a fresh root identity");
  std::string init_dir, init_seed;
  init->add_option("--data-dir", init_dir, "data directory")->required();
  init->add_option("--seed", init_seed, "hex seed for deterministic keys (testing only)");
  init->add_flag("--json", as_json);

  // run
  auto* run = app.add_subcommand("run", "run the gateway service until SIGINT/SIGTERM");
  std::string run_config;
  run->add_option("--config", run_config, "config file")->required()->check(CLI::ExistingFile);

  // enroll
  auto* enroll = app.add_subcommand("enroll", "enrollment queue");
  enroll->require_subcommand(1);
  ClientOpts enroll_opts;
  auto* e_list = enroll->add_subcommand("list", "list enrollment requests");
  std::string e_state = "pending";
  e_list->add_option("--state", e_state, "pending|approved|denied|expired|all");
  auto* e_approve = enroll->add_subcommand("approve", "approve a pending request");
  std::string e_id, e_zone, e_reason = "denied by operator";
  e_approve->add_option("id", e_id)->required();
  e_approve->add_option("--zone", e_zone)->required();
  auto* e_deny = enroll->add_subcommand("deny", "deny a pending request");
  e_deny->add_option("id", e_id)->required();
  e_deny->add_option("--reason", e_reason);
  for (auto* s : {e_list, e_approve, e_deny}) {
    add_client_opts(s, enroll_opts);
    s->add_flag("--json", as_json);
  }

  // zones
  auto* zones = app.add_subcommand("zones", "segmentation zones");
  zones->require_subcommand(1);
  ClientOpts zone_opts;
  auto* z_add = zones->add_subcommand("add", "define a zone");
  std::string z_name, z_range, z_role;
  std::vector<std::string> z_allow;
  z_add->add_option("name", z_name)->required();
  z_add->add_option("range", z_range)->required();
  z_add->add_option("role", z_role)->required();
  z_add->add_option("--allow", z_allow, "grant as zone[:proto[:port]], repeatable");
  auto* z_list = zones->add_subcommand("list", "list zones");
  for (auto* s : {z_add, z_list}) {
    add_client_opts(s, zone_opts);
    s->add_flag("--json", as_json);
  }

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "audit chain");
  audit_cmd->require_subcommand(1);
  auto* a_verify = audit_cmd->add_subcommand("verify", "verify the audit chain on disk");
  std::string a_dir, a_config;
  a_verify->add_option("--data-dir", a_dir);
  a_verify->add_option("--config", a_config);
  a_verify->add_flag("--json", as_json);

  // credscan
  auto* credscan = app.add_subcommand(
      "credscan", "default-credential audit against the simulated device fleet");
  std::string dict_path;
  sim::CredentialFleetOptions cred_opts;
  bool clean = false;
  credscan->add_option("--dict", dict_path, "dictionary file")->required()->check(CLI::ExistingFile);
  credscan->add_flag("--clean", clean, "fleet with every credential rotated");
  credscan->add_flag("--unreachable", cred_opts.include_unreachable, "add an unreachable target");
  credscan->add_option("--clean-devices", cred_opts.clean_devices);
  credscan->add_option("--seed", cred_opts.seed);
  credscan->add_flag("--json", as_json);

  // sim
  auto* sim_cmd = app.add_subcommand("sim", "deterministic fleet simulator");
  sim_cmd->require_subcommand(1);
  auto* s_run = sim_cmd->add_subcommand("run", "run one scenario in virtual time");
  sim::FleetSpec spec;
  std::string scenario = "baseline";
  sim::ScenarioParams params;
  s_run->add_option("--devices", spec.n_direct, "devices attached directly");
  s_run->add_option("--via-repeater", spec.n_via_repeater, "devices behind the repeater");
  s_run->add_option("--duration", spec.duration_s, "virtual seconds");
  s_run->add_option("--interval", spec.send_interval_ms, "send interval in ms");
  s_run->add_option("--scenario", scenario,
                    "baseline|replay_attack|rogue_device|flood|dup_repeater|stale_key");
  s_run->add_option("--seed", spec.seed);
  s_run->add_option("--loss", spec.direct.loss_prob, "loss probability on every link");
  s_run->add_option("--dup", spec.direct.dup_prob, "duplication probability on every link");
  s_run->add_option("--max-delay", spec.direct.max_delay_ms, "max link delay in ms");
  s_run->add_option("--replays", params.replay_count);
  s_run->add_option("--rogue", params.rogue_count);
  s_run->add_flag("--json", as_json);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*init) return cmd_init(init_dir, init_seed, as_json);
    if (*run) return cmd_run(run_config);
    if (*enroll) {
      ApiClient api(enroll_opts);
      if (*e_list) {
        std::string path = "/api/v1/enrollments";
        if (e_state != "all") path += "?state=" + e_state;
        print_requests(api.get(path), as_json);
      } else if (*e_approve) {
        const auto r = api.post("/api/v1/enrollments/" + e_id + "/approve", {{"zone", e_zone}});
        if (as_json)
          std::cout << r.dump(2) << "\n";
        else
          std::cout << "approved " << e_id << " as device "
                    << r["device"]["id"].get<std::string>() << " ("
                    << r["device"]["address"].get<std::string>() << ")\n";
      } else {
        const auto r = api.post("/api/v1/enrollments/" + e_id + "/deny", {{"reason", e_reason}});
        if (as_json)
          std::cout << r.dump(2) << "\n";
        else
          std::cout << "denied " << e_id << "\n";
      }
      return 0;
    }
    if (*zones) {
      ApiClient api(zone_opts);
      if (*z_add) {
        json grants = json::array();
        for (const auto& g : z_allow) {
          std::vector<std::string> parts;
          std::size_t start = 0;
          for (std::size_t p; (p = g.find(':', start)) != std::string::npos; start = p + 1)
            parts.push_back(g.substr(start, p - start));
          parts.push_back(g.substr(start));
          json gj = {{"zone", parts[0]}};
          if (parts.size() > 1) gj["proto"] = parts[1];
          if (parts.size() > 2) gj["port"] = std::stoi(parts[2]);
          grants.push_back(gj);
        }
        const auto r = api.put("/api/v1/zones/" + z_name,
                               {{"range", z_range}, {"role", z_role}, {"allow_to", grants}});
        if (as_json)
          std::cout << r.dump(2) << "\n";
        else
          std::cout << "zone " << r["name"].get<std::string>() << " " << r["range"].get<std::string>()
                    << " " << r["role"].get<std::string>() << "\n";
      } else {
        const auto r = api.get("/api/v1/zones");
        if (as_json)
          std::cout << r.dump(2) << "\n";
        else
          for (const auto& z : r)
            std::cout << z["name"].get<std::string>() << "  " << z["range"].get<std::string>()
                      << "  " << z["role"].get<std::string>() << "\n";
      }
      return 0;
    }
    if (*audit_cmd) return cmd_audit_verify(a_dir, a_config, as_json);
    if (*credscan) {
      if (clean) cred_opts.plant_admin = cred_opts.plant_fortinet = false;
      return cmd_credscan(dict_path, cred_opts, as_json);
    }
    if (*sim_cmd) {
      spec.repeater_link = spec.uplink = spec.direct;
      const auto report = sim::run_scenario(scenario, spec, params);
      if (as_json)
        std::cout << report.to_json().dump(2) << "\n";
      else
        std::cout << report.to_table();
      return report.conserved() ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "homegate: " << errc_name(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "homegate: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
