// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include "vibrodiag/gateway.hpp"

#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <random>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/error.hpp"
#include "vibrodiag/optim.hpp"

namespace vibrodiag {

namespace {

using json = nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

struct SessionEntry {
  DialogueSession session;
  std::mutex busy;
  std::chrono::steady_clock::time_point last_active;
};

}  // namespace

struct Gateway::Impl {
  GatewayConfig cfg;
  std::optional<Diagnoser> model;
  json model_config;
  std::string load_error;
  httplib::Server server;
  Clock clock = [] { return std::chrono::steady_clock::now(); };
  std::function<void()> ask_hook;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<SessionEntry>> sessions;
  std::mt19937_64 id_rng{std::random_device{}()};

  explicit Impl(GatewayConfig c) : cfg(std::move(c)) {
    try {
      auto ck = load_checkpoint(cfg.ckpt);
      model_config = ck.params.cfg.to_json();
      if (cfg.label_set.empty()) cfg.label_set = ck.meta.value("label_set", "toy");
      model.emplace(std::move(ck.params), LabelSet::by_name(cfg.label_set));
    } catch (const std::exception& e) {
      load_error = e.what();
    }
    routes();
  }

  // Drops idle sessions; caller holds sessions_mu.
  void sweep(std::chrono::steady_clock::time_point now) {
    for (auto it = sessions.begin(); it != sessions.end();) {
      it = now - it->second->last_active > cfg.session_ttl ? sessions.erase(it) : std::next(it);
    }
  }

  std::string new_id() {
    char buf[33];
    std::string id;
    do {
      std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(id_rng()),
                    static_cast<unsigned long long>(id_rng()));
      id = buf;
    } while (sessions.count(id) > 0);
    return id;
  }

  void health(httplib::Response& res) {
    if (!model) {
      send_json(res, 503,
                {{"status", "unavailable"}, {"checkpoint", cfg.ckpt.string()}, {"error", load_error}});
      return;
    }
    send_json(res, 200,
              {{"status", "ok"},
               {"checkpoint", cfg.ckpt.string()},
               {"label_set", cfg.label_set},
               {"model_config", model_config}});
  }

  void diagnose(const httplib::Request& req, httplib::Response& res) {
    if (!model) return send_error(res, 503, "ModelNotLoaded", load_error);
    const httplib::MultipartFormData* file = nullptr;
    for (const char* name : {"wav", "file"}) {
      if (req.has_file(name)) {
        file = &req.files.find(name)->second;
        break;
      }
    }
    if (!file && !req.files.empty()) file = &req.files.begin()->second;
    if (!file) return send_error(res, 400, "MissingFile", "multipart field 'wav' is required");

    WavClip clip;
    try {
      clip = sigproc::decode_wav(std::vector<std::uint8_t>(file->content.begin(), file->content.end()));
    } catch (const Error& e) {
      return send_error(res, 400, to_string(e.code()), e.what());
    }
    const double seconds = static_cast<double>(clip.pcm.size()) / clip.sample_rate_hz;
    if (seconds > cfg.max_clip_seconds) {
      return send_error(res, 413, "ClipTooLong", "clips are limited to " +
                                                    std::to_string(cfg.max_clip_seconds) + " s");
    }
    auto entry = std::make_shared<SessionEntry>();
    Diagnosis d;
    try {
      d = model->diagnose(clip, entry->session);
    } catch (const Error& e) {
      return send_error(res, 400, to_string(e.code()), e.what());
    }
    std::string id;
    {
      std::lock_guard lk(sessions_mu);
      const auto now = clock();
      sweep(now);
      id = new_id();
      entry->session.id = id;
      entry->last_active = now;
      sessions.emplace(id, entry);
    }
    send_json(res, 200,
              {{"session_id", id},
               {"raw_text", d.raw_text},
               {"label", d.parsed_label ? json(*d.parsed_label) : json(nullptr)},
               {"parse_status", to_string(d.status)},
               {"truncated", d.truncated}});
  }

  void ask(const httplib::Request& req, httplib::Response& res) {
    if (!model) return send_error(res, 503, "ModelNotLoaded", load_error);
    const std::string id = req.matches[1];
    std::string question;
    try {
      const auto body = json::parse(req.body);
      question = body.at("question").get<std::string>();
    } catch (const json::exception& e) {
      return send_error(res, 400, "BadRequest", std::string("expected {\"question\": string}: ") + e.what());
    }
    std::shared_ptr<SessionEntry> entry;
    {
      std::lock_guard lk(sessions_mu);
      sweep(clock());
      const auto it = sessions.find(id);
      if (it == sessions.end()) return send_error(res, 404, "SessionNotFound", "unknown or expired session");
      entry = it->second;
    }
    std::unique_lock busy(entry->busy, std::try_to_lock);
    if (!busy.owns_lock()) {
      return send_error(res, 409, "SessionBusy", "another question is in flight on this session");
    }
    if (ask_hook) ask_hook();
    std::string answer;
    try {
      answer = model->follow_up(entry->session, question);
    } catch (const Error& e) {
      return send_error(res, 400, to_string(e.code()), e.what());
    }
    const auto turn = entry->session.history.size();
    {
      std::lock_guard lk(sessions_mu);
      entry->last_active = clock();
    }
    send_json(res, 200, {{"answer", answer}, {"turn_index", turn}});
  }

  void routes() {
    server.set_payload_max_length(cfg.max_upload_bytes);
    server.set_default_headers({{"Access-Control-Allow-Origin", cfg.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.status = 204;
    });
    server.Get("/api/v1/health", [this](const httplib::Request&, httplib::Response& res) { health(res); });
    server.Post("/api/v1/diagnose",
                [this](const httplib::Request& req, httplib::Response& res) { diagnose(req, res); });
    server.Post(R"(/api/v1/sessions/([^/]+)/ask)",
                [this](const httplib::Request& req, httplib::Response& res) { ask(req, res); });
    if (!cfg.static_dir.empty()) server.set_mount_point("/", cfg.static_dir.string());
  }
};

Gateway::Gateway(GatewayConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

Gateway::~Gateway() { stop(); }

bool Gateway::model_loaded() const { return impl_->model.has_value(); }

const std::string& Gateway::load_error() const { return impl_->load_error; }

int Gateway::bind() {
  if (impl_->cfg.port == 0) return impl_->server.bind_to_any_port(impl_->cfg.host);
  return impl_->server.bind_to_port(impl_->cfg.host, impl_->cfg.port) ? impl_->cfg.port : -1;
}

bool Gateway::listen() { return impl_->server.listen_after_bind(); }

void Gateway::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void Gateway::set_clock(Clock clock) { impl_->clock = std::move(clock); }

void Gateway::set_ask_hook(std::function<void()> hook) { impl_->ask_hook = std::move(hook); }

}  // namespace vibrodiag
