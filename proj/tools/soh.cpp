// Command-line front end for the battery state-of-health pipeline.

#include "soh/error.hpp"
#include "soh/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string cycles, labels, test_cycles, test_labels, model;
  std::optional<int> ref_cycle;
  std::optional<int> every, from;
  std::vector<std::string> sets;
};

soh::PipelineConfig resolve(const Overrides& o) {
  soh::PipelineConfig c;
  if (!o.config.empty()) c.load(o.config);
  auto put = [&c](const char* key, const std::string& v) {
    if (!v.empty()) c.set(key, v);
  };
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw soh::Error(soh::Errc::config, "--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  put("out_dir", o.out_dir);
  put("cycles", o.cycles);
  put("labels", o.labels);
  put("test_cycles", o.test_cycles);
  put("test_labels", o.test_labels);
  put("model", o.model);
  if (o.seed) c.seed = *o.seed;
  if (o.ref_cycle) c.ref_cycle = *o.ref_cycle;
  if (o.every) c.stream_every = *o.every;
  if (o.from) c.stream_from = *o.from;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Battery state-of-health estimation pipeline"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "key = value configuration file");
  app.add_option("--seed", o.seed, "seed for every random choice");
  app.add_option("--out-dir", o.out_dir, "directory for artefacts");
  app.add_option("--cycles", o.cycles, "cycles CSV (cycle,t,voltage,temperature)");
  app.add_option("--labels", o.labels, "labels CSV (cycle,capacity_ah)");
  app.add_option("--test-cycles", o.test_cycles, "cycles CSV of a separate test battery");
  app.add_option("--test-labels", o.test_labels, "labels CSV of a separate test battery");
  app.add_option("--model", o.model, "model file");
  app.add_option("--ref-cycle", o.ref_cycle, "cycle index of the synchronisation reference");
  app.add_option("--set", o.sets, "override any configuration key (key=value)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic degrading battery");
  auto* ingest = app.add_subcommand("ingest", "validate cycles/labels and report the split");
  auto* sync = app.add_subcommand("sync", "synchronise every cycle to the reference");
  auto* importance = app.add_subcommand("importance", "importance profile, interval and grid");
  auto* train = app.add_subcommand("train", "fit the regressor and score the held-out cycles");
  auto* evaluate = app.add_subcommand("evaluate", "score a saved model on the held-out cycles");
  auto* stream = app.add_subcommand("stream", "step-by-step online estimation of selected cycles");
  stream->add_option("--from", o.from, "first cycle index to stream (default: first test cycle)");
  stream->add_option("--every", o.every, "stream every N-th cycle from --from");
  for (auto* sub : {synth, ingest, sync, importance, train, evaluate, stream})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    soh::guarded([&] {
      const auto config = resolve(o);
      auto& log = std::cout;
      if (*synth) soh::cmd_synth(config, log);
      if (*ingest) soh::cmd_ingest(config, log);
      if (*sync) soh::cmd_sync(config, log);
      if (*importance) soh::cmd_importance(config, log);
      if (*train) soh::cmd_train(config, log);
      if (*evaluate) soh::cmd_evaluate(config, log);
      if (*stream) soh::cmd_stream(config, log);
    });
  } catch (const soh::CommandError& e) {
    std::cerr << "error: " << e.reason() << ": " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
