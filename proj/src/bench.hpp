#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "orchestrator.hpp"

namespace vlmlight {

/// Single-episode metrics. A metric is absent when its population has no
/// completed vehicle.
struct SeedMetrics {
  std::uint64_t seed = 0;
  std::optional<double> att, awt, aett, aewt;
  int completed = 0;
  int emergency_completed = 0;
  int incomplete = 0;  // counted vehicles still in the network or its entry backlog at T_max
  int incomplete_emergency = 0;
};

/// Vehicles with entry_time < warmup are skipped entirely.
SeedMetrics compute_metrics(const std::vector<VehicleRecord>& records, double warmup = 0.0);

/// Independent recomputation from the raw event log: entry from Insert (or
/// Spawn while still in the backlog), exit from Exit, waiting from Halt/Move
/// intervals. `dt` covers a vehicle that exits while halted.
SeedMetrics metrics_from_events(const std::vector<Event>& events, double warmup, double dt);

struct MetricStat {
  std::optional<double> mean;
  std::optional<double> std;  // sample std (n-1) across contributing seeds; 0 with std_defined=false for n=1
  bool std_defined = false;
  int n = 0;  // seeds where the metric was present
};

struct MetricsReport {
  std::string scenario;
  std::string controller;
  std::vector<SeedMetrics> per_seed;
  MetricStat att, awt, aett, aewt;
  int seeds = 0;
  int incomplete_count = 0;  // summed over seeds
};

MetricStat aggregate(const std::vector<std::optional<double>>& values);
MetricsReport summarize(const std::string& scenario, const std::string& controller,
                        std::vector<SeedMetrics> per_seed);

struct ExperimentOptions {
  EpisodeOptions episode;
  int workers = 0;  // 0 = hardware concurrency
};

/// One episode per seed (in parallel), aggregated in seed order. An episode
/// failure aborts with the seed id in the message.
MetricsReport run_experiment(const Scenario& scenario, const ControllerSpec& spec,
                             const std::vector<std::uint64_t>& seeds, const ExperimentOptions& options = {});

std::string controller_label(const ControllerSpec& spec);

std::string format_csv(const std::vector<MetricsReport>& reports);
/// Reads back the summary columns of format_csv (per-seed values are not in
/// the CSV).
std::vector<MetricsReport> parse_csv(const std::string& text);
nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// format: "csv" or "json". Throws Error(Io) when the file cannot be written.
void export_table(const std::vector<MetricsReport>& reports, const std::string& path, const std::string& format);

}  // namespace vlmlight
