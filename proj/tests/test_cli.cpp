// Copyright 2026 The vibrodiag Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <csignal>
#include <thread>

#include "cli_harness.hpp"
#include "test_util.hpp"
#include "vibrodiag/diagnose.hpp"
#include "vibrodiag/optim.hpp"

using namespace vibrodiag;
using namespace vibrodiag::testing;
namespace fs = std::filesystem;

namespace {

int count_files(const fs::path& dir, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

// First test clip whose file name starts with `prefix`.
fs::path test_clip(const fs::path& data, const std::string& prefix) {
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(data / "test")) {
    if (e.path().filename().string().rfind(prefix, 0) == 0) found.push_back(e.path());
  }
  REQUIRE_FALSE(found.empty());
  return *std::min_element(found.begin(), found.end());
}

int count_lines(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

// Small dataset plus a briefly trained checkpoint, built once.
struct Workspace {
  fs::path root, data, ckpt;
};

const Workspace& workspace() {
  static const Workspace ws = [] {
    Workspace w;
    w.root = scratch_dir("cli_ws");
    w.data = w.root / "data";
    const auto s = run_cli({"synth", "--classes", "4", "--per-class", "5", "--duration", "1", "--seed", "3",
                            "--out", w.data.string()});
    REQUIRE_MESSAGE(s.exit_code == 0, s.err);
    w.ckpt = w.root / "m.ckpt";
    const auto t = run_cli({"train", "--stage", "gfc", "--data", w.data.string(), "--ckpt", w.ckpt.string(),
                            "--updates", "2", "--batch", "4", "--grad-accum", "1"});
    REQUIRE_MESSAGE(t.exit_code == 0, t.err);
    return w;
  }();
  return ws;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run_cli({}).exit_code == 1);
  CHECK(run_cli({"frobnicate"}).exit_code == 1);
  CHECK(run_cli({"synth"}).exit_code == 1);  // --out is required
  CHECK(run_cli({"synth", "--out", "x", "--bogus"}).exit_code == 1);
  CHECK(run_cli({"synth", "--out", "x", "--classes", "5"}).exit_code == 1);
  CHECK(run_cli({"diagnose", "--ckpt", "/nonexistent", "--wav", "/nonexistent"}).exit_code == 1);
  const auto r = run_cli({"synth", "--out", "x", "--bogus"});
  CHECK(r.out.empty());
  CHECK_FALSE(r.err.empty());
}

TEST_CASE("every subcommand has --help") {
  for (const auto* cmd : {"synth", "corpus", "train", "diagnose", "ask", "eval", "gradcheck", "serve"}) {
    CAPTURE(cmd);
    const auto r = run_cli({cmd, "--help"});
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("--") != std::string::npos);
  }
  CHECK(run_cli({"--help"}).exit_code == 0);
}

TEST_CASE("synth writes the dataset, manifest and snapshot") {
  const auto dir = scratch_dir("cli_synth") / "ds";
  const auto r = run_cli({"synth", "--classes", "4", "--per-class", "250", "--out", dir.string()});
  REQUIRE(r.exit_code == 0);
  CHECK(count_files(dir, ".wav") == 1000);
  CHECK(count_lines(slurp(dir / "manifest.jsonl")) == 1000);
  const auto info = nlohmann::json::parse(slurp(dir / "dataset.json"));
  CHECK(info.at("train") == 800);
  CHECK(info.at("test") == 200);
  CHECK(info.at("label_set") == "toy");
  const auto snap = slurp(dir / "synth.config.toml");
  CHECK(snap.find("per-class=250") != std::string::npos);
}

TEST_CASE("a snapshot replays the run") {
  const auto base = scratch_dir("cli_replay");
  const auto first = run_cli({"synth", "--classes", "3", "--per-class", "3", "--duration", "0.5", "--seed", "9",
                              "--snr-db", "10", "--out", (base / "a").string()});
  REQUIRE(first.exit_code == 0);
  const auto again = run_cli({"--config", (base / "a" / "synth.config.toml").string(), "synth", "--out",
                              (base / "b").string()});
  REQUIRE_MESSAGE(again.exit_code == 0, again.err);
  CHECK(slurp(base / "b" / "manifest.jsonl") == slurp(base / "a" / "manifest.jsonl"));
  CHECK(slurp(base / "b" / "train" / "inner_c1_0000.wav") == slurp(base / "a" / "train" / "inner_c1_0000.wav"));
}

TEST_CASE("corpus and train outputs") {
  const auto& ws = workspace();
  const auto c = run_cli({"corpus", "--data", ws.data.string(), "--variants", "2"});
  REQUIRE(c.exit_code == 0);
  CHECK(count_lines(slurp(ws.data / "corpus.jsonl")) == 40);
  CHECK(fs::exists(ws.data / "corpus.jsonl.config.toml"));

  CHECK(count_lines(slurp(fs::path(ws.ckpt.string() + ".loss.csv"))) == 3);
  CHECK(fs::exists(fs::path(ws.ckpt.string() + ".config.toml")));
  const auto ck = load_checkpoint(ws.ckpt);
  CHECK(ck.meta.at("label_set") == "toy");
  CHECK(ck.meta.at("stages").size() == 1);
  CHECK(ck.meta.at("stages")[0].at("train_config").at("updates") == 2);

  // Continue training from the checkpoint with the VSA stage.
  const auto next = ws.root / "m2.ckpt";
  const auto t = run_cli({"train", "--stage", "vsa", "--data", ws.data.string(), "--init", ws.ckpt.string(),
                          "--ckpt", next.string(), "--updates", "1", "--batch", "2", "--grad-accum", "1"});
  REQUIRE_MESSAGE(t.exit_code == 0, t.err);
  CHECK(load_checkpoint(next).meta.at("stages").size() == 2);
}

TEST_CASE("diagnose and ask print the library results") {
  const auto& ws = workspace();
  const auto wav = test_clip(ws.data, "outer");
  auto ck = load_checkpoint(ws.ckpt);
  const Diagnoser model(std::move(ck.params), LabelSet::toy());
  const auto clip = sigproc::read_wav(wav);
  const auto want = model.diagnose(clip);
  std::string expect = "raw_text: " + want.raw_text + "\nlabel: " +
                       (want.parsed_label ? *want.parsed_label : "<unparseable>") +
                       "\nparse_status: " + std::string(to_string(want.status)) + "\n";
  if (want.truncated) expect += "truncated: true\n";

  const auto d = run_cli({"diagnose", "--ckpt", ws.ckpt.string(), "--wav", wav.string()});
  REQUIRE(d.exit_code == 0);
  CHECK(d.out == expect);

  DialogueSession s;
  model.diagnose(clip, s);
  const auto a1 = model.follow_up(s, "where is the fault located?");
  const auto a2 = model.follow_up(s, "how severe is it?");
  const auto a = run_cli({"ask", "--ckpt", ws.ckpt.string(), "--wav", wav.string()},
                         "where is the fault located?\n\nhow severe is it?\n");
  REQUIRE(a.exit_code == 0);
  CHECK(a.out == expect + "answer[1]: " + a1 + "\nanswer[2]: " + a2 + "\n");
}

TEST_CASE("eval reports in both formats") {
  const auto& ws = workspace();
  const auto out = ws.root / "report.json";
  const auto j = run_cli({"eval", "--ckpt", ws.ckpt.string(), "--data", ws.data.string(), "--out", out.string()});
  REQUIRE(j.exit_code == 0);
  const auto report = nlohmann::json::parse(j.out);
  CHECK(report.at("n") == 4);
  CHECK(slurp(out) == j.out);
  CHECK(fs::exists(fs::path(out.string() + ".config.toml")));
  const auto t = run_cli({"eval", "--ckpt", ws.ckpt.string(), "--data", ws.data.string(), "--format", "text",
                          "--split", "train"});
  REQUIRE(t.exit_code == 0);
  CHECK(t.out.find("total") != std::string::npos);
}

TEST_CASE("runtime failures exit with 2") {
  const auto dir = scratch_dir("cli_runtime");
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  std::ofstream(dir / "bad.wav") << "not a wav";
  const auto& ws = workspace();
  const auto wav = test_clip(ws.data, "healthy");
  const auto r = run_cli({"diagnose", "--ckpt", (dir / "bad.ckpt").string(), "--wav", wav.string()});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("BadMagic") != std::string::npos);
  CHECK(run_cli({"diagnose", "--ckpt", ws.ckpt.string(), "--wav", (dir / "bad.wav").string()}).exit_code == 2);
  CHECK(run_cli({"corpus", "--data", dir.string()}).exit_code == 2);
}

TEST_CASE("VIBRODIAG_LOG controls stderr verbosity") {
  const auto& ws = workspace();
  const auto dir = scratch_dir("cli_log");
  const std::vector<std::string> args = {"corpus", "--data", ws.data.string(), "--out", (dir / "c.jsonl").string()};
  const auto quiet = run_cli(args, {}, "VIBRODIAG_LOG=off");
  const auto loud = run_cli(args, {}, "VIBRODIAG_LOG=debug");
  CHECK(quiet.exit_code == 0);
  CHECK(quiet.err.empty());
  CHECK(loud.err.find("resolved config") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run_cli({"gradcheck", "--clips", "1"});
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.at("coordinates") == 68);
  CHECK(j.at("max_rel_error").get<double>() < 1e-3);
}

TEST_CASE("serve answers health checks") {
  const auto& ws = workspace();
  const auto dir = scratch_dir("cli_serve");
  const auto out = dir / "out", pid = dir / "pid";
  const std::string cmd = shell_quote(VIBRODIAG_CLI) + " serve --host 127.0.0.1 --port 0 --ckpt " +
                          shell_quote(ws.ckpt.string()) + " >" + shell_quote(out.string()) +
                          " 2>/dev/null & echo $! >" + shell_quote(pid.string());
  REQUIRE(std::system(cmd.c_str()) == 0);
  int port = -1;
  for (int i = 0; i < 500 && port < 0; ++i) {
    const auto text = slurp(out);
    const auto colon = text.rfind(':');
    if (text.find('\n') != std::string::npos && colon != std::string::npos) port = std::stoi(text.substr(colon + 1));
    else std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  REQUIRE(port > 0);
  httplib::Client client("127.0.0.1", port);
  const auto h = client.Get("/api/v1/health");
  REQUIRE(h);
  CHECK(h->status == 200);
  CHECK(nlohmann::json::parse(h->body).at("label_set") == "toy");
  ::kill(std::stoi(slurp(pid)), SIGTERM);
}
