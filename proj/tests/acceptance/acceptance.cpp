// Acceptance run: one PASS/FAIL line per criterion, also written to
// acceptance_report.txt in the working directory. The exit code is nonzero
// only when the harness itself breaks; criterion outcomes are reported, not
// enforced, so a red line stays visible in the ctest log.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "agents/http_backend.hpp"
#include "agents/mock_server.hpp"
#include "bench.hpp"
#include "error.hpp"
#include "orchestrator.hpp"
#include "rl/ppo.hpp"
#include "rl/rl_controller.hpp"

#ifndef VLMLIGHT_CLI_PATH
#error "VLMLIGHT_CLI_PATH must name the vlmlight CLI binary"
#endif

using namespace vlmlight;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<std::uint64_t> seeds_1_to(int n) {
  std::vector<std::uint64_t> s(static_cast<size_t>(n));
  std::iota(s.begin(), s.end(), 1);
  return s;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;
std::vector<std::string> g_lines;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  if (!o.pass) ++g_failures;
  g_lines.push_back("criterion " + std::to_string(id) + " " + (o.pass ? "PASS" : "FAIL") + " | " + title + " | " +
                    o.detail + " [" + fmt("%.1f", seconds_since(t0)) + " s]");
  std::cout << g_lines.back() << std::endl;
}

double mean_of(const MetricStat& m, const char* what) {
  if (!m.mean) fail(ErrorKind::Internal, std::string(what) + " has no completed vehicle");
  return *m.mean;
}

ControllerSpec spec_of(const std::string& kind, std::shared_ptr<const PolicyNet> policy = nullptr) {
  ControllerSpec s;
  s.kind = kind;
  s.policy = std::move(policy);
  s.backend.kind = "scripted";
  return s;
}

StateTensor random_state(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  StateTensor s;
  for (auto& v : s.data) v = n(rng);
  return s;
}

PPOBatch random_batch(std::mt19937_64& rng, int n, int phases) {
  std::normal_distribution<double> N(0.0, 1.0);
  PPOBatch b;
  for (int i = 0; i < n; ++i) {
    const auto s = random_state(rng);
    b.states.insert(b.states.end(), s.data.begin(), s.data.end());
    std::vector<int> feasible;
    for (int j = 0; j < phases; ++j) {
      const bool ok = j == 0 || (i % 2 == 1);
      b.masks.push_back(ok ? 1 : 0);
      if (ok) feasible.push_back(j + 1);
    }
    b.actions.push_back(feasible[static_cast<size_t>(i) % feasible.size()]);
    b.old_logp.push_back(-1.0 + 0.1 * N(rng));
    b.advantages.push_back(N(rng));
    b.returns.push_back(N(rng));
  }
  return b;
}

// Norm-relative error of the analytic gradient against central differences
// over the given coordinates.
double fd_error(PolicyNet& net, const PPOBatch& batch, const std::vector<size_t>& coords) {
  ParamVector grad(net.param_count(), 0.0);
  ppo_batch_loss(net, batch, 0.2, 0.5, &grad);
  double num = 0.0, den = 0.0;
  for (size_t k : coords) {
    const double saved = net.params()[k];
    const double h = 1e-5;
    net.params()[k] = saved + h;
    const double up = ppo_batch_loss(net, batch, 0.2, 0.5, nullptr).total;
    net.params()[k] = saved - h;
    const double down = ppo_batch_loss(net, batch, 0.2, 0.5, nullptr).total;
    net.params()[k] = saved;
    const double fd = (up - down) / (2.0 * h);
    num += (fd - grad[k]) * (fd - grad[k]);
    den += fd * fd;
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

}  // namespace

int main() {
  const fs::path work = fs::current_path() / "acceptance_work";
  fs::create_directories(work);
  const auto massy = builtin_scenario("massy");
  const auto songdo = builtin_scenario("songdo");
  std::shared_ptr<const PolicyNet> policy;
  const fs::path policy_path = work / "massy_policy.bin";

  try {
    report(1, "songdo ATT ordering MaxPressure < Webster < FixTime, >=3% gaps, <=2 min", [&] {
      const auto t0 = Clock::now();
      const auto seeds = seeds_1_to(10);
      const double mp = mean_of(run_experiment(songdo, spec_of("maxpressure"), seeds).att, "maxpressure");
      const double wb = mean_of(run_experiment(songdo, spec_of("webster"), seeds).att, "webster");
      const double ft = mean_of(run_experiment(songdo, spec_of("fixtime"), seeds).att, "fixtime");
      const double secs = seconds_since(t0);
      const bool ok = mp * 1.03 <= wb && wb * 1.03 <= ft && secs <= 120.0;
      return Outcome{ok, "ATT maxpressure " + fmt("%.2f", mp) + ", webster " + fmt("%.2f", wb) + ", fixtime " +
                             fmt("%.2f", ft) + "; gaps " + fmt("%.1f%%", 100.0 * (wb / mp - 1.0)) + ", " +
                             fmt("%.1f%%", 100.0 * (ft / wb - 1.0)) + "; " + fmt("%.0f s", secs)};
    });

    report(2, "RL after 1e5 training steps on massy: ATT <= 1.02 x MaxPressure, <=30 min", [&] {
      const auto t0 = Clock::now();
      PPOConfig config;
      config.total_steps = 100000;
      config.net.phases = massy.topology.phase_count();
      auto trained = train(massy, config, 1);
      const double train_secs = seconds_since(t0);
      save_checkpoint(trained.net, massy.topology.movement_count(), policy_path.string());
      policy = std::make_shared<const PolicyNet>(std::move(trained.net));
      const auto seeds = seeds_1_to(10);
      const double rl = mean_of(run_experiment(massy, spec_of("rl", policy), seeds).att, "rl");
      const double mp = mean_of(run_experiment(massy, spec_of("maxpressure"), seeds).att, "maxpressure");
      const double secs = seconds_since(t0);
      const bool ok = rl <= 1.02 * mp && secs <= 1800.0;
      return Outcome{ok, "ATT rl " + fmt("%.2f", rl) + " vs maxpressure " + fmt("%.2f", mp) + " (ratio " +
                             fmt("%.4f", rl / mp) + "); training " + fmt("%.0f s", train_secs) + ", total " +
                             fmt("%.0f s", secs)};
    });
    if (!policy) {
      // Training failed; later criteria still need a fast branch.
      policy = std::make_shared<const PolicyNet>(NetConfig{64, 4, 128, massy.topology.phase_count()}, 1);
    }

    const auto seeds10 = seeds_1_to(10);
    MetricsReport full_report;
    report(3, "VLMLight (scripted) vs RL on massy: AEWT -40% with ATT <= +2%", [&] {
      const auto rl = run_experiment(massy, spec_of("rl", policy), seeds10);
      full_report = run_experiment(massy, spec_of("vlmlight", policy), seeds10);
      const double rl_att = mean_of(rl.att, "rl"), v_att = mean_of(full_report.att, "vlmlight");
      const double rl_aewt = mean_of(rl.aewt, "rl AEWT"), v_aewt = mean_of(full_report.aewt, "vlmlight AEWT");
      const double d_aewt = v_aewt / rl_aewt - 1.0, d_att = v_att / rl_att - 1.0;
      const bool ok = d_aewt <= -0.40 && d_att <= 0.02;
      return Outcome{ok, "AEWT " + fmt("%.2f", rl_aewt) + " -> " + fmt("%.2f", v_aewt) + " (" +
                             fmt("%+.1f%%", 100.0 * d_aewt) + "), ATT " + fmt("%.2f", rl_att) + " -> " +
                             fmt("%.2f", v_att) + " (" + fmt("%+.1f%%", 100.0 * d_att) + ")"};
    });

    report(4, "ablations: no-phase strictly worsens AETT; no-check unchanged when proposals are feasible", [&] {
      if (full_report.per_seed.empty()) full_report = run_experiment(massy, spec_of("vlmlight", policy), seeds10);
      auto no_phase = spec_of("vlmlight", policy);
      no_phase.orchestrator.ablate_phase = true;
      const auto np = run_experiment(massy, no_phase, seeds10);
      const double full_aett = mean_of(full_report.aett, "full AETT"), np_aett = mean_of(np.aett, "no-phase AETT");
      const bool phase_ok = np_aett > full_aett;

      // At a 15 s control interval every tick is past min green, so every
      // proposal is feasible and Check has nothing to repair.
      EpisodeOptions eo;
      eo.delta_t = 15.0;
      auto full_spec = spec_of("vlmlight", policy);
      auto nc_spec = full_spec;
      nc_spec.orchestrator.ablate_check = true;
      bool check_ok = true, all_feasible = true;
      int deliberative = 0;
      for (auto seed : seeds10) {
        const auto a = run_episode(massy, full_spec, seed, eo);
        const auto b = run_episode(massy, nc_spec, seed, eo);
        for (const auto& t : a.traces)
          if (t.mode == ControlMode::Deliberative) {
            ++deliberative;
            if (t.attempts.empty() || !t.attempts.front().feasible) all_feasible = false;
          }
        const auto ma = compute_metrics(a.records, eo.warmup), mb = compute_metrics(b.records, eo.warmup);
        bool same = a.traces.size() == b.traces.size() && ma.att == mb.att && ma.awt == mb.awt &&
                    ma.aett == mb.aett && ma.aewt == mb.aewt && ma.completed == mb.completed;
        for (size_t i = 0; same && i < a.traces.size(); ++i)
          same = a.traces[i].final_action == b.traces[i].final_action;
        check_ok = check_ok && same;
      }
      const bool ok = phase_ok && all_feasible && check_ok;
      return Outcome{ok, "AETT full " + fmt("%.2f", full_aett) + " vs no-phase " + fmt("%.2f", np_aett) + " (" +
                             (phase_ok ? "worse" : "not worse") + "); no-check at delta_t 15: " +
                             std::to_string(deliberative) + " deliberative ticks, proposals " +
                             (all_feasible ? "all feasible" : "NOT all feasible") + ", outcomes " +
                             (check_ok ? "identical" : "differ")};
    });

    report(5, "always-invalid backend, N_check=3: exactly 3 attempts per tick, RL action executes", [&] {
      auto spec = spec_of("vlmlight", policy);
      spec.backend.kind = "invalid";
      spec.orchestrator.n_check = 3;
      size_t ticks = 0, bad = 0;
      for (std::uint64_t seed : {1, 2, 3}) {
        const auto ep = run_episode(massy, spec, seed);
        const auto rl = run_episode(massy, spec_of("rl", policy), seed);
        if (ep.traces.size() != rl.traces.size()) fail(ErrorKind::Internal, "tick count differs from the RL run");
        for (size_t i = 0; i < ep.traces.size(); ++i) {
          const auto& t = ep.traces[i];
          ++ticks;
          if (t.mode != ControlMode::Deliberative || t.attempts.size() != 3 || !t.fallback ||
              t.final_action != t.routine_action || t.final_action != rl.traces[i].final_action)
            ++bad;
        }
      }
      return Outcome{bad == 0 && ticks > 0,
                     std::to_string(ticks) + " ticks over 3 seeds, " + std::to_string(bad) + " deviations"};
    });

    report(6, "fuzzed timing invariants over 10 episodes x all controllers", [&] {
      std::mt19937_64 rng(2024);
      const std::vector<std::string> names = {"songdo", "massy", "yaumatei"};
      size_t episodes = 0, violations = 0;
      std::string first;
      for (int i = 0; i < 10; ++i) {
        const auto scenario = builtin_scenario(names[static_cast<size_t>(i) % names.size()]);
        const auto net = std::make_shared<const PolicyNet>(
            NetConfig{64, 4, 128, scenario.topology.phase_count()}, static_cast<std::uint64_t>(100 + i));
        EpisodeOptions eo;
        eo.check_invariants = true;
        eo.delta_t = 1.0 + static_cast<double>(rng() % 10);
        eo.t_max = eo.delta_t * static_cast<double>(30 + rng() % 40);
        eo.warmup = 0.0;
        const std::uint64_t seed = rng() % 100000;
        for (const auto& kind : controller_kinds()) {
          const auto ep = run_episode(scenario, spec_of(kind, net), seed, eo);
          ++episodes;
          violations += ep.violations.size();
          if (first.empty() && !ep.violations.empty()) first = kind + ": " + ep.violations.front();
        }
      }
      return Outcome{violations == 0, std::to_string(episodes) + " episodes, " + std::to_string(violations) +
                                          " violations" + (first.empty() ? "" : " (first: " + first + ")")};
    });

    report(7, "gradient vs central differences <=1e-4; permutation <=1e-6; normalization <=1e-6 on 10k inputs", [&] {
      std::mt19937_64 rng(7);
      std::normal_distribution<double> N(0.0, 1.0);
      PolicyNet small(NetConfig{8, 2, 16, 4}, 7);
      for (auto& p : small.params()) p += 0.3 * N(rng);
      const auto b1 = random_batch(rng, 6, 4);
      std::vector<size_t> all(small.param_count());
      std::iota(all.begin(), all.end(), 0);
      const double fd_small = fd_error(small, b1, all);
      // Full-size network: a random subset of 400 coordinates.
      PolicyNet big(NetConfig{}, 8);
      for (auto& p : big.params()) p += 0.05 * N(rng);
      const auto b2 = random_batch(rng, 4, 4);
      std::vector<size_t> some(400);
      for (auto& k : some) k = static_cast<size_t>(rng() % big.param_count());
      const double fd_big = fd_error(big, b2, some);

      PolicyNet net(NetConfig{}, 11);
      for (auto& p : net.params()) p += 0.05 * N(rng);
      std::vector<int> perm(kTokens);
      std::iota(perm.begin(), perm.end(), 0);
      double perm_err = 0.0, norm_err = 0.0;
      for (int i = 0; i < 10000; ++i) {
        const auto s = random_state(rng);
        std::shuffle(perm.begin(), perm.end(), rng);
        StateTensor p;
        for (int f = 0; f < kFrames; ++f)
          for (int t = 0; t < kTokens; ++t)
            for (int k = 0; k < kFeatureDim; ++k) p.at(f, perm[static_cast<size_t>(t)], k) = s.at(f, t, k);
        std::vector<PhaseId> feasible;
        for (int ph = 1; ph <= 4; ++ph)
          if (rng() % 2 || ph == 1 + i % 4) feasible.push_back(ph);
        const auto a = net.evaluate(s, feasible);
        const auto b = net.evaluate(p, feasible);
        double sum = 0.0;
        for (size_t j = 0; j < a.probs.size(); ++j) {
          perm_err = std::max(perm_err, std::abs(a.probs[j] - b.probs[j]));
          const bool in = std::find(feasible.begin(), feasible.end(), static_cast<int>(j) + 1) != feasible.end();
          if (!in) norm_err = std::max(norm_err, std::abs(a.probs[j]));
          sum += a.probs[j];
        }
        perm_err = std::max(perm_err, std::abs(a.value - b.value));
        norm_err = std::max(norm_err, std::abs(sum - 1.0));
      }
      const bool ok = fd_small <= 1e-4 && fd_big <= 1e-4 && perm_err <= 1e-6 && norm_err <= 1e-6;
      return Outcome{ok, "FD rel err " + fmt("%.2e", fd_small) + " (small net, all params), " + fmt("%.2e", fd_big) +
                             " (full net, 400 params); permutation " + fmt("%.2e", perm_err) + "; normalization " +
                             fmt("%.2e", norm_err)};
    });

    report(8, "hand 3-vehicle trace exact; full-episode metrics equal the event-log recomputation to 1e-9", [&] {
      auto rec = [](VehicleId id, VehicleClass cls, double travel, double wait) {
        VehicleRecord r;
        r.id = id;
        r.cls = cls;
        r.entry_time = 100.0;
        r.exit_time = 100.0 + travel;
        r.accumulated_wait = wait;
        r.completed = true;
        return r;
      };
      const auto hand = compute_metrics({rec(1, VehicleClass::Regular, 10, 0), rec(2, VehicleClass::Ambulance, 20, 5),
                                         rec(3, VehicleClass::Regular, 30, 10)},
                                        60.0);
      const bool hand_ok = hand.att == 20.0 && hand.awt == 5.0 && hand.aett == 20.0 && hand.aewt == 5.0;
      double worst = 0.0;
      int mismatched_counts = 0, episodes = 0;
      auto diff = [](const std::optional<double>& a, const std::optional<double>& b) {
        if (a.has_value() != b.has_value()) return 1.0;
        return a ? std::abs(*a - *b) : 0.0;
      };
      for (const char* name : {"songdo", "massy", "yaumatei"})
        for (const char* kind : {"maxpressure", "vlmlight"}) {
          EpisodeOptions eo;
          eo.log_events = true;
          const auto ep = run_episode(builtin_scenario(name), spec_of(kind), 5, eo);
          const auto a = compute_metrics(ep.records, eo.warmup);
          const auto b = metrics_from_events(ep.events, eo.warmup, eo.dt);
          worst = std::max({worst, diff(a.att, b.att), diff(a.awt, b.awt), diff(a.aett, b.aett), diff(a.aewt, b.aewt)});
          if (a.completed != b.completed || a.incomplete != b.incomplete) ++mismatched_counts;
          ++episodes;
        }
      const bool ok = hand_ok && worst <= 1e-9 && mismatched_counts == 0;
      return Outcome{ok, std::string("hand trace ") + (hand_ok ? "exact" : "WRONG") + "; " + std::to_string(episodes) +
                             " episodes, max |diff| " + fmt("%.1e", worst) + ", count mismatches " +
                             std::to_string(mismatched_counts)};
    });

    report(9, "compare run twice with identical flags gives byte-identical CSV", [&] {
      const std::string cli = VLMLIGHT_CLI_PATH;
      std::string out[2];
      for (int i = 0; i < 2; ++i) {
        const fs::path csv = work / ("compare_" + std::to_string(i) + ".csv");
        fs::remove(csv);
        const std::string cmd = quote(cli) +
                                " --workers 2 compare --controllers fixtime,webster,maxpressure,rl,vlmlight,"
                                "vlmlight-no-phase --scenario massy --seeds 3 --policy " +
                                quote(policy_path.string()) + " --csv " + quote(csv.string()) + " > /dev/null";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) fail(ErrorKind::Internal, "compare exited with status " + std::to_string(rc));
        out[i] = read_file(csv);
      }
      const size_t lines = static_cast<size_t>(std::count(out[0].begin(), out[0].end(), '\n'));
      return Outcome{!out[0].empty() && out[0] == out[1],
                     std::to_string(out[0].size()) + " bytes, " + std::to_string(lines) + " lines, " +
                         (out[0] == out[1] ? "identical" : "DIFFERENT")};
    });

    report(10, "HTTP mock: request conformance, parsed replies, timeouts fall back", [&] {
      BackendConfig cfg;
      cfg.kind = "http";
      cfg.model = "mock-model";
      cfg.api_key = "secret";
      cfg.timeout_s = 2.0;
      std::vector<std::string> problems;

      // Conformance and a full deliberative episode answered by the mock.
      MockChatServer server(mock_fixed_handler(2));
      server.start();
      cfg.endpoint = server.base_url();
      auto spec = spec_of("vlmlight", policy);
      spec.backend = cfg;
      EpisodeOptions eo;
      eo.t_max = 100;
      eo.warmup = 0;
      const auto ep = run_episode(massy, spec, 1, eo);
      const auto reqs = server.requests();
      server.stop();
      for (const auto& r : reqs) {
        const bool ok = r.value("model", "") == "mock-model" && r.contains("temperature") &&
                        r.at("temperature") == 0.0 && r.contains("messages") && r.at("messages").size() == 2 &&
                        r["messages"][0]["role"] == "system" && r["messages"][1]["role"] == "user";
        if (!ok) {
          problems.push_back("malformed request");
          break;
        }
      }
      size_t accepted = 0;
      for (const auto& t : ep.traces) {
        if (t.mode != ControlMode::Deliberative) continue;
        const bool feasible2 = std::find(t.feasible.begin(), t.feasible.end(), 2) != t.feasible.end();
        if (feasible2 && (t.fallback || t.final_action != 2)) problems.push_back("mock action 2 not executed");
        if (!t.fallback) ++accepted;
      }
      if (accepted == 0) problems.push_back("no mock reply was accepted");

      // Plan and Check replies arrive after the client timeout.
      MockChatServer slow([](const nlohmann::json& req) {
        const auto role = mock_request_role(req);
        if (role == "mode_selector") return MockReply{200, "DELIBERATIVE", 0.0};
        if (role == "plan" || role == "check") return MockReply{200, "{\"action\": 1}", 1.0};
        return MockReply{200, "text", 0.0};
      });
      slow.start();
      auto tspec = spec;
      tspec.backend.endpoint = slow.base_url();
      tspec.backend.timeout_s = 0.1;
      tspec.backend.max_retries = 1;
      EpisodeOptions to;
      to.t_max = 20;
      to.warmup = 0;
      const auto tep = run_episode(massy, tspec, 1, to);
      const auto rl = run_episode(massy, spec_of("rl", policy), 1, to);
      slow.stop();
      // The mock keeps sleeping after a client gives up, so a later mode
      // selector call can time out too; that tick routes to RL directly.
      size_t fallbacks = 0, routed = 0;
      for (size_t i = 0; i < tep.traces.size(); ++i) {
        const auto& t = tep.traces[i];
        const bool rl_action = t.final_action == rl.traces[i].final_action;
        if (t.mode == ControlMode::Deliberative && t.attempts.size() == 3 && t.fallback && rl_action)
          ++fallbacks;
        else if (t.mode == ControlMode::RL && !t.notes.empty() && rl_action)
          ++routed;
        else
          problems.push_back("timeout tick did not fall back to the RL action");
      }
      return Outcome{problems.empty() && fallbacks > 0,
                     std::to_string(reqs.size()) + " conforming requests, " + std::to_string(accepted) +
                         " mock actions executed; timeouts: " + std::to_string(fallbacks) +
                         " ticks fell back after 3 failed attempts, " + std::to_string(routed) +
                         " routed to RL by a timed-out mode selector, of " + std::to_string(tep.traces.size()) +
                         (problems.empty() ? "" : "; " + problems.front())};
    });
  } catch (const std::exception& e) {
    std::cerr << "acceptance harness error: " << e.what() << "\n";
    return 2;
  }
  g_lines.push_back(std::to_string(10 - g_failures) + "/10 criteria passed");
  std::cout << g_lines.back() << std::endl;
  // ctest hides the output of passing tests; keep the lines on disk too.
  std::ofstream out("acceptance_report.txt");
  for (const auto& l : g_lines) out << l << "\n";
  return 0;
}
