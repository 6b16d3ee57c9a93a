#include "bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "error.hpp"
#include "numfmt.hpp"

namespace vlmlight {

using nlohmann::json;

namespace {

struct Accum {
  double sum = 0.0;
  int n = 0;
  std::optional<double> mean() const {
    if (n == 0) return std::nullopt;
    return sum / n;
  }
};

}  // namespace

SeedMetrics compute_metrics(const std::vector<VehicleRecord>& records, double warmup) {
  SeedMetrics m;
  Accum tt, wt, ett, ewt;
  for (const auto& r : records) {
    if (r.entry_time < warmup) continue;
    const bool emergency = is_emergency(r.cls);
    if (!r.completed || !r.exit_time) {
      ++m.incomplete;
      if (emergency) ++m.incomplete_emergency;
      continue;
    }
    const double travel = *r.exit_time - r.entry_time;
    tt.sum += travel;
    ++tt.n;
    wt.sum += r.accumulated_wait;
    ++wt.n;
    if (emergency) {
      ett.sum += travel;
      ++ett.n;
      ewt.sum += r.accumulated_wait;
      ++ewt.n;
    }
  }
  m.att = tt.mean();
  m.awt = wt.mean();
  m.aett = ett.mean();
  m.aewt = ewt.mean();
  m.completed = tt.n;
  m.emergency_completed = ett.n;
  return m;
}

SeedMetrics metrics_from_events(const std::vector<Event>& events, double warmup, double dt) {
  struct Trip {
    VehicleClass cls = VehicleClass::Regular;
    double entry = 0.0;
    std::optional<double> exit;
    std::optional<double> halted_since;
    double wait = 0.0;
  };
  std::map<VehicleId, Trip> trips;
  for (const auto& e : events) {
    Trip& trip = trips[e.vehicle];
    trip.cls = e.cls;
    switch (e.kind) {
      case EventKind::Spawn: trip.entry = e.t; break;
      case EventKind::Insert: trip.entry = e.t; break;
      case EventKind::Halt: trip.halted_since = e.t; break;
      case EventKind::Move:
        if (trip.halted_since) trip.wait += e.t - *trip.halted_since;
        trip.halted_since.reset();
        break;
      case EventKind::Cross: break;
      case EventKind::Exit:
        if (trip.halted_since) trip.wait += e.t - *trip.halted_since + dt;
        trip.halted_since.reset();
        trip.exit = e.t;
        break;
    }
  }
  std::vector<VehicleRecord> records;
  for (const auto& [id, trip] : trips) {
    VehicleRecord r;
    r.id = id;
    r.cls = trip.cls;
    r.entry_time = trip.entry;
    r.exit_time = trip.exit;
    r.completed = trip.exit.has_value();
    r.accumulated_wait = trip.wait;
    records.push_back(r);
  }
  return compute_metrics(records, warmup);
}

MetricStat aggregate(const std::vector<std::optional<double>>& values) {
  MetricStat s;
  double sum = 0.0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++s.n;
    }
  if (s.n == 0) return s;
  const double mean = sum / s.n;
  s.mean = mean;
  if (s.n == 1) {
    s.std = 0.0;
    return s;
  }
  double ss = 0.0;
  for (const auto& v : values)
    if (v) ss += (*v - mean) * (*v - mean);
  s.std = std::sqrt(ss / (s.n - 1));
  s.std_defined = true;
  return s;
}

MetricsReport summarize(const std::string& scenario, const std::string& controller, std::vector<SeedMetrics> per_seed) {
  MetricsReport r;
  r.scenario = scenario;
  r.controller = controller;
  std::vector<std::optional<double>> att, awt, aett, aewt;
  for (const auto& m : per_seed) {
    att.push_back(m.att);
    awt.push_back(m.awt);
    aett.push_back(m.aett);
    aewt.push_back(m.aewt);
    r.incomplete_count += m.incomplete;
  }
  r.att = aggregate(att);
  r.awt = aggregate(awt);
  r.aett = aggregate(aett);
  r.aewt = aggregate(aewt);
  r.seeds = static_cast<int>(per_seed.size());
  r.per_seed = std::move(per_seed);
  return r;
}

std::string controller_label(const ControllerSpec& spec) {
  std::string label = spec.kind;
  if (spec.kind == "vlmlight") {
    if (spec.orchestrator.ablate_phase) label += "-no-phase";
    if (spec.orchestrator.ablate_check) label += "-no-check";
  }
  return label;
}

MetricsReport run_experiment(const Scenario& scenario, const ControllerSpec& spec,
                             const std::vector<std::uint64_t>& seeds, const ExperimentOptions& options) {
  if (seeds.empty()) fail(ErrorKind::InvalidArgument, "run_experiment: no seeds");
  options.episode.validate();
  std::vector<SeedMetrics> per_seed(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < seeds.size();) {
      try {
        const auto ep = run_episode(scenario, spec, seeds[i], options.episode);
        per_seed[i] = compute_metrics(ep.records, options.episode.warmup);
        per_seed[i].seed = seeds[i];
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  unsigned n = options.workers > 0 ? static_cast<unsigned>(options.workers) : std::thread::hardware_concurrency();
  n = std::clamp<unsigned>(n, 1, static_cast<unsigned>(seeds.size()));
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (size_t i = 0; i < seeds.size(); ++i)
    if (!errors[i].empty()) fail(ErrorKind::Internal, "episode with seed " + std::to_string(seeds[i]) + " failed: " + errors[i]);
  return summarize(scenario.name, controller_label(spec), std::move(per_seed));
}

namespace {

const char* kCsvHeader = "scenario,controller,ATT,ATT_std,AWT,AWT_std,AETT,AETT_std,AEWT,AEWT_std,seeds,incomplete_count";

std::string cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

std::optional<double> read_cell(const std::string& text, int line) {
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  if (!parse_double(text, v)) fail(ErrorKind::Parse, "csv line " + std::to_string(line) + ": bad number '" + text + "'");
  return v;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

json stat_to_json(const MetricStat& s) {
  return {{"mean", s.mean ? json(*s.mean) : json(nullptr)},
          {"std", s.std ? json(*s.std) : json(nullptr)},
          {"std_defined", s.std_defined},
          {"n", s.n}};
}

MetricStat stat_from_json(const json& j) {
  MetricStat s;
  if (!j.at("mean").is_null()) s.mean = j.at("mean").get<double>();
  if (!j.at("std").is_null()) s.std = j.at("std").get<double>();
  s.std_defined = j.at("std_defined").get<bool>();
  s.n = j.at("n").get<int>();
  return s;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> read_opt(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string format_csv(const std::vector<MetricsReport>& reports) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : reports) {
    for (const auto& name : {r.scenario, r.controller})
      if (name.find_first_of(",\n\"") != std::string::npos)
        fail(ErrorKind::InvalidArgument, "csv: name '" + name + "' holds a separator");
    out += r.scenario + "," + r.controller;
    for (const MetricStat* s : {&r.att, &r.awt, &r.aett, &r.aewt}) out += "," + cell(s->mean) + "," + cell(s->std);
    out += "," + std::to_string(r.seeds) + "," + std::to_string(r.incomplete_count) + "\n";
  }
  return out;
}

std::vector<MetricsReport> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) fail(ErrorKind::Parse, "csv: unexpected header");
  std::vector<MetricsReport> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split_row(line);
    if (cols.size() != 12) fail(ErrorKind::Parse, "csv line " + std::to_string(lineno) + ": expected 12 columns");
    MetricsReport r;
    r.scenario = cols[0];
    r.controller = cols[1];
    MetricStat* stats[] = {&r.att, &r.awt, &r.aett, &r.aewt};
    for (int k = 0; k < 4; ++k) {
      stats[k]->mean = read_cell(cols[2 + 2 * k], lineno);
      stats[k]->std = read_cell(cols[3 + 2 * k], lineno);
    }
    try {
      r.seeds = std::stoi(cols[10]);
      r.incomplete_count = std::stoi(cols[11]);
    } catch (const std::exception&) {
      fail(ErrorKind::Parse, "csv line " + std::to_string(lineno) + ": bad count");
    }
    out.push_back(std::move(r));
  }
  return out;
}

json report_to_json(const MetricsReport& r) {
  json seeds = json::array();
  for (const auto& m : r.per_seed)
    seeds.push_back({{"seed", m.seed},
                     {"ATT", opt(m.att)},
                     {"AWT", opt(m.awt)},
                     {"AETT", opt(m.aett)},
                     {"AEWT", opt(m.aewt)},
                     {"completed", m.completed},
                     {"emergency_completed", m.emergency_completed},
                     {"incomplete", m.incomplete},
                     {"incomplete_emergency", m.incomplete_emergency}});
  return {{"scenario", r.scenario},
          {"controller", r.controller},
          {"ATT", stat_to_json(r.att)},
          {"AWT", stat_to_json(r.awt)},
          {"AETT", stat_to_json(r.aett)},
          {"AEWT", stat_to_json(r.aewt)},
          {"seeds", r.seeds},
          {"incomplete_count", r.incomplete_count},
          {"per_seed", seeds}};
}

MetricsReport report_from_json(const json& j) {
  try {
    MetricsReport r;
    r.scenario = j.at("scenario").get<std::string>();
    r.controller = j.at("controller").get<std::string>();
    r.att = stat_from_json(j.at("ATT"));
    r.awt = stat_from_json(j.at("AWT"));
    r.aett = stat_from_json(j.at("AETT"));
    r.aewt = stat_from_json(j.at("AEWT"));
    r.seeds = j.at("seeds").get<int>();
    r.incomplete_count = j.at("incomplete_count").get<int>();
    for (const auto& s : j.at("per_seed")) {
      SeedMetrics m;
      m.seed = s.at("seed").get<std::uint64_t>();
      m.att = read_opt(s.at("ATT"));
      m.awt = read_opt(s.at("AWT"));
      m.aett = read_opt(s.at("AETT"));
      m.aewt = read_opt(s.at("AEWT"));
      m.completed = s.at("completed").get<int>();
      m.emergency_completed = s.at("emergency_completed").get<int>();
      m.incomplete = s.at("incomplete").get<int>();
      m.incomplete_emergency = s.at("incomplete_emergency").get<int>();
      r.per_seed.push_back(m);
    }
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("report: ") + e.what());
  }
}

void export_table(const std::vector<MetricsReport>& reports, const std::string& path, const std::string& format) {
  if (reports.empty()) fail(ErrorKind::InvalidArgument, "export_table: no reports");
  std::string body;
  if (format == "csv") {
    body = format_csv(reports);
  } else if (format == "json") {
    json arr = json::array();
    for (const auto& r : reports) arr.push_back(report_to_json(r));
    body = arr.dump(2) + "\n";
  } else {
    fail(ErrorKind::InvalidArgument, "export format must be csv or json");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << body;
  if (!out) fail(ErrorKind::Io, "write failed for " + path);
}

}  // namespace vlmlight
