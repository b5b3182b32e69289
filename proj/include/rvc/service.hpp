#pragma once

// Live operator session: a simulation thread running at camera rate, HTTP
// endpoints for the three operator clicks plus start/stop, and a WebSocket
// stream of frames and telemetry. Slow clients drop frames; the simulation
// never waits on the network.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "rvc/trial.hpp"

namespace rvc {

struct ServiceOptions {
  double speed = 1.0;                    // simulated seconds per wall second
  double stream_hz = 15.0;               // WebSocket push rate
  std::optional<Mat2> initial_jacobian;  // seed for the first trial
  bool carry_jacobian = true;            // later trials start from the last learned Jacobian
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// One published simulation snapshot. Frames are shared, never copied per client.
struct StreamSnapshot {
  std::uint64_t seq = 0;
  std::shared_ptr<const Frame> frame;
  std::string telemetry;  // JSON object without the frame payload
};

/// JSON stream message: telemetry plus the frame as base64 PGM.
std::string stream_message(const StreamSnapshot& snap);

class OperatorService {
 public:
  explicit OperatorService(RunConfig cfg, ServiceOptions opts = {});
  ~OperatorService();
  OperatorService(const OperatorService&) = delete;
  OperatorService& operator=(const OperatorService&) = delete;

  /// Starts the simulation thread (idle rendering until /start).
  void start_simulation();
  /// Binds the HTTP/WebSocket server; port 0 picks a free port. Returns the bound port.
  unsigned short listen(unsigned short port);
  void shutdown();

  /// Request dispatch shared by the network layer and tests.
  HttpReply handle(const std::string& method, const std::string& target, const std::string& body);

  std::string state_json() const;
  StreamSnapshot latest() const;
  bool trial_active() const;
  std::string phase() const;
  std::optional<TrialMetrics> last_metrics() const;
  int clients() const { return clients_.load(); }

  /// Blocks until no trial is running or the timeout (wall seconds) passes.
  bool wait_idle(double timeout_s) const;

  void client_connected() { ++clients_; }
  void client_disconnected() { --clients_; }

 private:
  void sim_loop();
  void publish(const Frame& frame, const std::string& phase, const std::optional<Vec2>& tip, double rcm_um,
               const std::optional<double>& ncc, const std::optional<double>& pixel_error, long tick, double t);
  void prepare_idle_spec();

  RunConfig cfg_;
  ServiceOptions opts_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::string phase_ = "idle";
  bool active_ = false;
  bool start_requested_ = false;
  std::atomic<bool> stop_requested_{false};
  std::atomic<bool> shutdown_{false};
  std::optional<Vec2> goal_;
  std::optional<Vec2> rcm_click_;
  std::optional<Vec3> rcm_;
  TrialSpec idle_spec_;
  int trials_run_ = 0;
  std::optional<TrialMetrics> last_metrics_;
  std::optional<Mat2> jacobian_;
  std::uint64_t frame_id_ = 0;

  mutable std::mutex snap_mu_;
  StreamSnapshot snap_;

  std::atomic<int> clients_{0};
  std::thread sim_thread_;

  struct Net;
  std::unique_ptr<Net> net_;
};

}  // namespace rvc
