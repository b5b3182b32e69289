#include "rvc/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <sstream>

#include "json.hpp"
#include "rvc/errors.hpp"

namespace rvc {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;
using nlohmann::json;

namespace {

json vec_or_null(const std::optional<Vec2>& v) { return v ? json{v->x(), v->y()} : json(nullptr); }
json num_or_null(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

HttpReply error_reply(int status, const std::string& msg) { return {status, json{{"error", msg}}.dump()}; }

/// Parses {"u": .., "v": ..}; throws std::invalid_argument on anything else.
Vec2 parse_click(const std::string& body) {
  const json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("body must be a JSON object");
  if (!j.contains("u") || !j.contains("v") || !j["u"].is_number() || !j["v"].is_number())
    throw std::invalid_argument("body needs numeric 'u' and 'v'");
  return {j["u"].get<double>(), j["v"].get<double>()};
}

}  // namespace

std::string stream_message(const StreamSnapshot& snap) {
  json j = json::parse(snap.telemetry);
  j["seq"] = snap.seq;
  if (snap.frame) {
    std::ostringstream pgm;
    write_pgm(pgm, *snap.frame);
    const std::string raw = pgm.str();
    std::string enc(beast::detail::base64::encoded_size(raw.size()), '\0');
    enc.resize(beast::detail::base64::encode(enc.data(), raw.data(), raw.size()));
    j["frame"] = std::move(enc);
    j["frame_format"] = "pgm";
  } else {
    j["frame"] = nullptr;
  }
  return j.dump();
}

// ---------------------------------------------------------------------------
// Network layer: one io_context thread, async HTTP sessions, WebSocket pushers.

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& s, OperatorService& svc, double hz)
      : ws_(std::move(s)), timer_(ws_.get_executor()), svc_(svc), period_(std::chrono::microseconds(
                                                                          static_cast<long>(1e6 / hz))) {}

  void run(http::request<http::string_body> req) {
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->svc_.client_connected();
      self->connected_ = true;
      self->read_loop();
      self->next_ = std::chrono::steady_clock::now();
      self->tick();
    });
  }

  ~WsSession() {
    if (connected_) svc_.client_disconnected();
  }

 private:
  void read_loop() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
        return;
      }
      self->in_.consume(self->in_.size());
      self->read_loop();
    });
  }

  void tick() {
    if (closed_) return;
    // Fixed cadence: the time spent encoding a frame does not stretch the period.
    next_ += period_;
    const auto now = std::chrono::steady_clock::now();
    if (next_ < now) next_ = now;
    timer_.expires_at(next_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      self->push();
      self->tick();
    });
  }

  void push() {
    if (writing_) return;  // slow client: skip this frame
    StreamSnapshot snap = svc_.latest();
    if (snap.seq == sent_seq_) return;
    sent_seq_ = snap.seq;
    out_ = std::make_shared<std::string>(stream_message(snap));
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(*out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->closed_ = true;
        self->timer_.cancel();
      }
    });
  }

  websocket::stream<tcp::socket> ws_;
  asio::steady_timer timer_;
  OperatorService& svc_;
  std::chrono::microseconds period_;
  std::chrono::steady_clock::time_point next_;
  beast::flat_buffer in_;
  std::shared_ptr<std::string> out_;
  std::uint64_t sent_seq_ = 0;
  bool writing_ = false;
  bool closed_ = false;
  bool connected_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& s, OperatorService& svc, double hz) : socket_(std::move(s)), svc_(svc), hz_(hz) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    http::async_read(socket_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

  void on_request() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/stream") {
        std::make_shared<WsSession>(std::move(socket_), svc_, hz_)->run(std::move(req_));
        return;
      }
    }
    const std::string method(req_.method_string());
    const std::string target(req_.target());
    HttpReply r = svc_.handle(method, target, req_.body());
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status),
                                                                   req_.version());
    res->set(http::field::content_type, r.content_type);
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->body() = std::move(r.body);
    res->prepare_payload();
    http::async_write(socket_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->socket_.shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  tcp::socket socket_;
  OperatorService& svc_;
  double hz_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
};

}  // namespace

struct OperatorService::Net {
  asio::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread thread;

  void accept(OperatorService& svc, double hz) {
    acceptor.async_accept([this, &svc, hz](beast::error_code ec, tcp::socket s) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(s), svc, hz)->run();
      accept(svc, hz);
    });
  }
};

// ---------------------------------------------------------------------------

OperatorService::OperatorService(RunConfig cfg, ServiceOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)) {
  cfg_.validate();
  if (!(opts_.speed > 0.0) || !(opts_.stream_hz > 0.0)) throw std::invalid_argument("service: bad pacing options");
  jacobian_ = opts_.initial_jacobian;
  prepare_idle_spec();
}

OperatorService::~OperatorService() { shutdown(); }

void OperatorService::prepare_idle_spec() {
  idle_spec_ = make_trial_spec(cfg_, trials_run_);
  idle_spec_.mpc_enabled = cfg_.trial_uses_mpc(trials_run_ % cfg_.trials);
}

void OperatorService::start_simulation() {
  if (sim_thread_.joinable()) return;
  sim_thread_ = std::thread([this] { sim_loop(); });
}

unsigned short OperatorService::listen(unsigned short port) {
  if (net_) throw std::logic_error("service: already listening");
  net_ = std::make_unique<Net>();
  const tcp::endpoint ep(asio::ip::make_address("127.0.0.1"), port);
  net_->acceptor.open(ep.protocol());
  net_->acceptor.set_option(asio::socket_base::reuse_address(true));
  net_->acceptor.bind(ep);
  net_->acceptor.listen();
  net_->accept(*this, opts_.stream_hz);
  net_->thread = std::thread([n = net_.get()] { n->ioc.run(); });
  return net_->acceptor.local_endpoint().port();
}

void OperatorService::shutdown() {
  shutdown_ = true;
  stop_requested_ = true;
  cv_.notify_all();
  if (net_) {
    net_->ioc.stop();
    if (net_->thread.joinable()) net_->thread.join();
    net_.reset();
  }
  if (sim_thread_.joinable()) sim_thread_.join();
}

void OperatorService::publish(const Frame& frame, const std::string& phase, const std::optional<Vec2>& tip,
                              double rcm_um, const std::optional<double>& ncc,
                              const std::optional<double>& pixel_error, long tick, double t) {
  std::optional<Vec2> goal;
  {
    std::lock_guard lk(mu_);
    goal = goal_;
    ++frame_id_;
  }
  json tel = {{"type", "frame"},       {"phase", phase},         {"tick", tick},
              {"t", t},                {"i_tt", vec_or_null(tip)}, {"i_goal", vec_or_null(goal)},
              {"rcm_error_um", rcm_um}, {"ncc_max", num_or_null(ncc)}, {"pixel_error", num_or_null(pixel_error)},
              {"width", frame.width},  {"height", frame.height}};
  auto f = std::make_shared<const Frame>(frame);
  std::lock_guard lk(snap_mu_);
  snap_.seq += 1;
  snap_.frame = std::move(f);
  snap_.telemetry = tel.dump();
}

void OperatorService::sim_loop() {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(cfg_.dt() / opts_.speed));
  auto next = clock::now();
  long idle_tick = 0;
  std::unique_ptr<SceneRenderer> idle_renderer;
  std::uint64_t idle_eye = 0;
  const RobotModel robot = cfg_.robot_model();

  while (!shutdown_) {
    bool run = false;
    TrialSpec spec;
    {
      std::lock_guard lk(mu_);
      if (start_requested_) {
        start_requested_ = false;
        run = true;
        spec = idle_spec_;
        spec.i_goal = *goal_;
        spec.p_rcm = *rcm_;
      } else {
        spec = idle_spec_;
      }
    }

    if (!run) {
      if (!idle_renderer || idle_eye != spec.eye_seed) {
        idle_renderer = std::make_unique<SceneRenderer>(cfg_.scene_config(spec.eye_seed), cfg_.camera(),
                                                        texture_seed_for_eye(spec.eye_seed));
        idle_eye = spec.eye_seed;
      }
      const SceneState st = initial_scene(forward_kinematics(robot, spec.q0));
      std::string ph;
      {
        std::lock_guard lk(mu_);
        ph = phase_;
      }
      const Frame frame = idle_renderer->render(st, idle_tick, idle_tick * cfg_.dt());
      publish(frame, ph, frame.tip_px, 0.0, std::nullopt, std::nullopt, idle_tick, idle_tick * cfg_.dt());
      ++idle_tick;
      std::unique_lock lk(mu_);
      next += period;
      cv_.wait_until(lk, next, [this] { return start_requested_ || shutdown_.load(); });
      if (clock::now() > next) next = clock::now();
      continue;
    }

    TrialOptions topts;
    std::optional<Mat2> J0;
    {
      std::lock_guard lk(mu_);
      J0 = jacobian_;
    }
    topts.initial_jacobian = J0;
    topts.stop_requested = [this] { return stop_requested_.load(); };
    Mat2 learned = J0.value_or(Mat2::Identity());
    next = clock::now();
    topts.observer = [&](const TickView& v) {
      const TickReport& r = *v.report;
      const std::optional<double> perr = v.supervisor->decision_error();
      {
        std::lock_guard lk(mu_);
        phase_ = to_string(r.phase);
      }
      learned = v.supervisor->jacobian().J;
      publish(*v.frame, to_string(r.phase), r.tip, r.rcm_error * 1e6, r.ncc_max, perr, v.tick, v.t);
      next += period;
      std::this_thread::sleep_until(next);
    };
    TrialResult res = run_trial(cfg_, spec, topts);

    std::lock_guard lk(mu_);
    last_metrics_ = res.metrics;
    phase_ = res.metrics.final_phase;
    if (opts_.carry_jacobian) jacobian_ = learned;
    ++trials_run_;
    active_ = false;
    stop_requested_ = false;
    goal_.reset();
    rcm_.reset();
    rcm_click_.reset();
    prepare_idle_spec();
    cv_.notify_all();
  }
}

HttpReply OperatorService::handle(const std::string& method, const std::string& target, const std::string& body) {
  if (target == "/state") {
    if (method != "GET") return error_reply(405, "use GET");
    return {200, state_json()};
  }
  if (method != "POST") {
    if (target == "/goal" || target == "/rcm" || target == "/start" || target == "/stop")
      return error_reply(405, "use POST");
    return error_reply(404, "no such endpoint");
  }

  if (target == "/stop") {
    std::lock_guard lk(mu_);
    if (active_) stop_requested_ = true;
    return {200, json{{"ok", true}, {"stopping", active_}}.dump()};
  }
  if (target != "/goal" && target != "/rcm" && target != "/start") return error_reply(404, "no such endpoint");

  std::lock_guard lk(mu_);
  if (active_) return error_reply(409, "a trial is active (phase " + phase_ + ")");

  if (target == "/start") {
    if (!goal_) return error_reply(409, "set a goal before starting");
    if (!rcm_) return error_reply(409, "set the RCM point before starting");
    active_ = true;
    start_requested_ = true;
    stop_requested_ = false;
    phase_ = to_string(SupervisorPhase::PlanarServo);
    cv_.notify_all();
    return {200, json{{"ok", true}}.dump()};
  }

  Vec2 click;
  try {
    click = parse_click(body);
  } catch (const std::exception& e) {
    return error_reply(400, e.what());
  }
  const CameraModel cam = cfg_.camera();
  if (!(click.x() >= 0.0 && click.y() >= 0.0 && click.x() < cam.width && click.y() < cam.height))
    return error_reply(400, "click outside the frame");

  if (target == "/goal") {
    goal_ = click;
    if (phase_ != "idle") phase_ = "idle";
    return {200, json{{"ok", true}, {"goal", {click.x(), click.y()}}}.dump()};
  }
  const Pose g = forward_kinematics(cfg_.robot_model(), idle_spec_.q0);
  rcm_click_ = click;
  rcm_ = g.p + 0.02 * g.R.col(2);
  return {200, json{{"ok", true}, {"rcm", {rcm_->x(), rcm_->y(), rcm_->z()}}}.dump()};
}

std::string OperatorService::state_json() const {
  std::lock_guard lk(mu_);
  json j = {{"phase", phase_},
            {"trial_active", active_},
            {"frame_id", frame_id_},
            {"goal", vec_or_null(goal_)},
            {"rcm_click", vec_or_null(rcm_click_)},
            {"rcm", rcm_ ? json{rcm_->x(), rcm_->y(), rcm_->z()} : json(nullptr)},
            {"clients", clients_.load()},
            {"trials_run", trials_run_}};
  if (last_metrics_) {
    const auto& m = *last_metrics_;
    j["last_metrics"] = {{"final_xy_error_um", m.final_xy_error},     {"max_rcm_error_um", m.max_rcm_error},
                         {"contact_overshoot_um", m.contact_overshoot}, {"puncture_dz_um", m.puncture_dz},
                         {"duration_s", m.duration},                    {"final_phase", m.final_phase},
                         {"success", m.success}};
  } else {
    j["last_metrics"] = nullptr;
  }
  return j.dump();
}

StreamSnapshot OperatorService::latest() const {
  std::lock_guard lk(snap_mu_);
  return snap_;
}

bool OperatorService::trial_active() const {
  std::lock_guard lk(mu_);
  return active_;
}

std::string OperatorService::phase() const {
  std::lock_guard lk(mu_);
  return phase_;
}

std::optional<TrialMetrics> OperatorService::last_metrics() const {
  std::lock_guard lk(mu_);
  return last_metrics_;
}

bool OperatorService::wait_idle(double timeout_s) const {
  std::unique_lock lk(mu_);
  return cv_.wait_for(lk, std::chrono::duration<double>(timeout_s), [this] { return !active_; });
}

}  // namespace rvc
