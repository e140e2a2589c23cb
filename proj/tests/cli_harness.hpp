// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the vibrodiag binary through /bin/sh and captures its streams.

#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace vibrodiag::testing {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// `env` is prepended verbatim, e.g. "VIBRODIAG_LOG=off".
inline CliRun run_cli(const std::vector<std::string>& args, const std::string& stdin_text = {},
                      const std::string& env = {}) {
  static int counter = 0;
  const auto dir = std::filesystem::path(VIBRODIAG_TEST_TMP) / "cli_io";
  std::filesystem::create_directories(dir);
  const auto tag = std::to_string(counter++);
  const auto in = dir / ("in" + tag), out = dir / ("out" + tag), err = dir / ("err" + tag);
  std::ofstream(in, std::ios::binary) << stdin_text;
  std::string cmd = env.empty() ? "" : env + " ";
  cmd += shell_quote(VIBRODIAG_CLI);
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " <" + shell_quote(in.string()) + " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace vibrodiag::testing
