// Command-line front end: batch trials, replay, offline detection over PGM
// frames, and the live operator service.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "rvc/errors.hpp"
#include "rvc/service.hpp"
#include "rvc/trial.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

std::string flag_name(const std::string& key) {
  std::string s = key;
  std::replace(s.begin(), s.end(), '_', '-');
  return "--" + s;
}

std::string config_path_from_argv(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
  }
  return {};
}

void bind_fields(CLI::App& app, rvc::RunConfig& cfg) {
  for (auto& f : rvc::config_fields(cfg)) {
    const std::string name = flag_name(f.key);
    const std::string group = "[" + f.section + "]";
    if (f.key == "mpc") {
      auto* mode = std::get<rvc::MpcMode*>(f.ref);
      app.add_flag_callback("--mpc", [mode] { *mode = rvc::MpcMode::On; }, "MPC on for every trial")->group(group);
      app.add_flag_callback("--no-mpc", [mode] { *mode = rvc::MpcMode::Off; }, "MPC off for every trial")
          ->group(group);
      app.add_option_function<std::string>(
             "--mpc-mode", [mode](const std::string& s) { *mode = rvc::mpc_mode_from_string(s); }, f.help)
          ->default_str(rvc::to_string(*mode))
          ->group(group);
      continue;
    }
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, bool>) {
            app.add_flag(name, *p, f.help)->group(group);
          } else if constexpr (!std::is_same_v<T, rvc::MpcMode>) {
            app.add_option(name, *p, f.help)->capture_default_str()->group(group);
          }
        },
        f.ref);
  }
}

int run_replay(const rvc::RunConfig& cfg, std::optional<double> gamma) {
  rvc::ReplayOptions ro;
  ro.gamma = gamma;
  try {
    const rvc::ReplayResult r = rvc::replay_log_file(cfg.replay, ro);
    json j;
    j["ticks"] = r.ticks;
    j["mode"] = gamma ? "what-if" : "verify";
    if (gamma) j["gamma"] = *gamma;
    j["recorded"] = r.recorded;
    j["replayed"] = r.replayed;
    std::cout << j.dump(2) << "\n";
    if (!gamma) std::cerr << "replay: " << r.ticks << " ticks, no divergence\n";
    return 0;
  } catch (const rvc::MismatchError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
}

int run_detect_dir(const rvc::RunConfig& cfg) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.detect_dir))
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("detect: no .pgm frames in " + cfg.detect_dir);

  const rvc::SupervisorConfig sc = cfg.supervisor_config(false);
  rvc::OracleTipDetector tips(cfg.tip_noise_px, cfg.seed);
  rvc::TipJumpDetector puncture(sc.puncture_jump_um * 1e-3 * sc.px_per_mm, sc.puncture_stride);
  rvc::NccTipTracker tracker(sc.ncc_search_radius, -1.0);
  puncture.activate();
  double ncc0 = 1.0;
  for (const auto& path : files) {
    const rvc::Frame frame = rvc::read_pgm_file(path.string());
    json j = {{"file", path.filename().string()}, {"index", frame.index}, {"t", frame.timestamp}};
    std::optional<rvc::Vec2> tip;
    try {
      tip = tips.detect(frame);
      j["tip"] = {tip->x(), tip->y()};
    } catch (const rvc::TipNotFound&) {
      j["tip"] = nullptr;
    }
    if (!tracker.has_template() && tip) {
      tracker.set_template(rvc::capture_template(frame, *tip, sc.template_size, sc.template_size), *tip);
      tracker.detect(frame);
      ncc0 = tracker.last_result().max_score;
    }
    if (tracker.has_template()) {
      tracker.detect(frame);
      const double m = tracker.last_result().max_score;
      const double score = rvc::contact_score(ncc0, m);
      j["ncc_max"] = m;
      j["contact_score"] = score;
      j["contact"] = rvc::is_contact(score, sc.gamma);
    }
    const rvc::DetectorVerdict v = puncture.step(frame, tip);
    j["p_c"] = v.p_c;
    j["p_vp"] = v.p_vp;
    j["triggered"] = v.triggered;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int run_serve(const rvc::RunConfig& cfg) {
  rvc::OperatorService svc(cfg);
  svc.start_simulation();
  const unsigned short port = svc.listen(static_cast<unsigned short>(cfg.port));
  std::cerr << "serving on http://127.0.0.1:" << port << " (GET /state, WS /stream, POST /goal /rcm /start /stop)\n";
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  svc.shutdown();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  rvc::RunConfig cfg;
  try {
    const std::string cfg_path = config_path_from_argv(argc, argv);
    if (!cfg_path.empty()) {
      std::ifstream f(cfg_path);
      if (!f) throw rvc::ConfigError("config: cannot open '" + cfg_path + "'");
      rvc::apply_run_config(f, cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  CLI::App app{"Autonomous retinal vein cannulation in simulation"};
  app.get_formatter()->column_width(36);
  std::string config_file;
  bool print_config = false;
  app.add_option("--config", config_file, "INI run configuration, applied before other flags");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");
  bind_fields(app, cfg);
  CLI11_PARSE(app, argc, argv);

  const bool gamma_given = app.count("--gamma") > 0;
  try {
    cfg.validate();
    if (print_config) {
      rvc::write_run_config(std::cout, cfg);
      return 0;
    }
    if (!cfg.replay.empty()) return run_replay(cfg, gamma_given ? std::optional<double>(cfg.gamma) : std::nullopt);
    if (!cfg.detect_dir.empty()) return run_detect_dir(cfg);
    if (cfg.serve) return run_serve(cfg);

    const auto t0 = std::chrono::steady_clock::now();
    const rvc::BatchSummary s = rvc::run_batch(cfg, &std::cerr);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << rvc::metrics_table(cfg, s.trials);
    std::cerr << "wall time " << wall << " s, results in " << cfg.out << "\n";
    if (s.any_aborted && !cfg.allow_abort) {
      std::cerr << "at least one trial aborted\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
