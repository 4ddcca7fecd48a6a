#pragma once

#include "soh/dataset.hpp"
#include "soh/error.hpp"
#include "soh/importance.hpp"
#include "soh/realtime.hpp"
#include "soh/regressor.hpp"
#include "soh/warp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace soh {

/// Every knob of the command-line pipeline. Keys accepted by set() and by
/// config files are listed in config_keys().
struct PipelineConfig {
  std::filesystem::path cycles;        // default <out_dir>/cycles.csv
  std::filesystem::path labels;        // default <out_dir>/labels.csv
  std::filesystem::path test_cycles;   // optional separate test battery
  std::filesystem::path test_labels;
  std::filesystem::path model;         // default <out_dir>/model.bin
  std::filesystem::path out_dir = "out";
  double nominal_capacity = 1.1;
  int ref_cycle = 1;
  EdtwOptions edtw;
  int grids = 200;
  SplitSpec split;
  TrainConfig train;
  SyntheticConfig synthetic;
  std::uint64_t seed = 7;
  unsigned threads = 0;
  int stream_from = 0;   // cycle_index; 0 selects the first test cycle
  int stream_every = 0;  // 0 streams a single cycle

  /// Throws Errc::config for an unknown key or a malformed value.
  void set(std::string_view key, std::string_view value);
  /// Reads `key = value` lines; `#` starts a comment.
  void load(const std::filesystem::path& file);

  std::filesystem::path cycles_path() const;
  std::filesystem::path labels_path() const;
  std::filesystem::path model_path() const;
  std::filesystem::path artifact(std::string_view name) const { return out_dir / name; }
};

std::vector<std::string> config_keys();

/// Failure of a pipeline command: process exit code plus a one-word reason.
class CommandError : public std::runtime_error {
 public:
  CommandError(int exit_code, std::string reason, const std::string& message);
  int exit_code() const { return exit_code_; }
  const std::string& reason() const { return reason_; }

 private:
  int exit_code_;
  std::string reason_;
};

/// 0 ok, 2 input, 3 training, 4 model.
int exit_code_for(Errc code);

// Artefact readers and writers shared by the commands.
void write_synced(const SyncedBattery& synced, const EdtwOptions& options,
                  const std::filesystem::path& dir);
SyncedBattery read_synced(const std::filesystem::path& dir, const BatteryRecord& record);
void write_importance(const ImportanceProfile& profile, const std::filesystem::path& dir);
ImportanceProfile read_importance(const std::filesystem::path& dir);
void write_grid(const GridSpec& grid, const std::filesystem::path& file);
GridSpec read_grid(const std::filesystem::path& file);
void write_stream(const std::vector<RealtimeEstimate>& estimates, int cycle_index,
                  std::optional<double> truth, const std::filesystem::path& file);

// Commands. Each writes its artefacts under config.out_dir and a short
// human-readable report to `log`.
void cmd_synth(const PipelineConfig& config, std::ostream& log);
void cmd_ingest(const PipelineConfig& config, std::ostream& log);
void cmd_sync(const PipelineConfig& config, std::ostream& log);
void cmd_importance(const PipelineConfig& config, std::ostream& log);
Metrics cmd_train(const PipelineConfig& config, std::ostream& log);
Metrics cmd_evaluate(const PipelineConfig& config, std::ostream& log);
void cmd_stream(const PipelineConfig& config, std::ostream& log);

/// Runs `fn`, translating library errors into CommandError.
template <typename Fn>
auto guarded(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const CommandError&) {
    throw;
  } catch (const Error& e) {
    throw CommandError(exit_code_for(e.code()), std::string(errc_name(e.code())), e.what());
  }
}

}  // namespace soh
