// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// HTTP/JSON front end over a Diagnoser. Sessions live in memory and expire
// after an idle TTL.

#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

namespace vibrodiag {

struct GatewayConfig {
  std::string host = "0.0.0.0";
  int port = 8080;
  std::filesystem::path ckpt;
  std::string label_set;  // empty: checkpoint meta, then "toy"
  std::chrono::seconds session_ttl{30 * 60};
  double max_clip_seconds = 60.0;
  std::size_t max_upload_bytes = 8u << 20;
  std::string cors_origin = "*";
  std::filesystem::path static_dir;  // served at / when set
};

class Gateway {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  /// Loads the checkpoint; on failure the service still starts and answers
  /// 503 until restarted with a usable checkpoint.
  explicit Gateway(GatewayConfig cfg);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  bool model_loaded() const;
  /// Empty when the model loaded.
  const std::string& load_error() const;

  /// Binds cfg.host:cfg.port (0 picks a free port) and returns the port, or -1.
  int bind();
  /// Serves until stop(); call after bind().
  bool listen();
  void stop();

  /// Replaces the session clock (tests).
  void set_clock(Clock clock);
  /// Runs inside /ask while the session is held (tests).
  void set_ask_hook(std::function<void()> hook);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vibrodiag
