#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "rvc/errors.hpp"
#include "rvc/trial.hpp"

using namespace rvc;
using nlohmann::json;

namespace {

// One recorded default trial shared by every case.
const std::string& recorded_log() {
  static const std::string log = [] {
    RunConfig cfg;
    std::ostringstream os;
    TrialOptions opts;
    opts.log = &os;
    run_trial(cfg, make_trial_spec(cfg, 1), opts);
    return os.str();
  }();
  return log;
}

// Applies `edit` to the tick record with the given index.
std::string with_edited_tick(long tick, const std::function<void(json&)>& edit) {
  std::istringstream in(recorded_log());
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line);
    if (j.value("type", "") == "tick" && j["tick"] == tick) {
      edit(j);
      line = j.dump();
    }
    out << line << '\n';
  }
  return out.str();
}

long tick_of(const std::vector<std::pair<long, std::string>>& transitions, const std::string& phase) {
  for (const auto& [t, p] : transitions)
    if (p == phase) return t;
  return -1;
}

}  // namespace

TEST_CASE("replay of a fresh log reproduces every transition") {
  std::istringstream in(recorded_log());
  const ReplayResult r = replay_log(in);
  CHECK(r.ticks > 100);
  CHECK(r.recorded == r.replayed);
  CHECK(tick_of(r.recorded, "puncture_stopped") > 0);

  const std::string path = "test_replay_log.jsonl";
  std::ofstream(path) << recorded_log();
  const ReplayResult f = replay_log_file(path);
  CHECK(f.replayed == r.replayed);
  std::remove(path.c_str());
}

TEST_CASE("a corrupted frame record is reported at its tick") {
  {
    std::istringstream in(with_edited_tick(200, [](json& j) { j["frame_hash"] = "0000000000000000"; }));
    try {
      replay_log(in);
      FAIL("replay accepted a corrupted frame");
    } catch (const MismatchError& e) {
      CHECK(e.tick == 200);
    }
  }
  {
    // A different scene state renders a different frame.
    std::istringstream in(with_edited_tick(321, [](json& j) {
      j["scene"]["p"][0] = j["scene"]["p"][0].get<double>() + 20e-6;
    }));
    try {
      replay_log(in);
      FAIL("replay accepted a moved needle");
    } catch (const MismatchError& e) {
      CHECK(e.tick == 321);
    }
  }
  {
    std::istringstream in(with_edited_tick(150, [](json& j) { j["qdot"][2] = 1.0; }));
    CHECK_THROWS_AS(replay_log(in), MismatchError);
  }
}

TEST_CASE("a higher contact threshold declares contact later") {
  std::istringstream base(recorded_log());
  const ReplayResult r0 = replay_log(base);
  const long recorded = tick_of(r0.recorded, "contact_stopped");
  REQUIRE(recorded > 0);

  ReplayOptions what_if;
  what_if.gamma = 0.25;
  std::istringstream in(recorded_log());
  const ReplayResult r = replay_log(in, what_if);
  const long later = tick_of(r.replayed, "contact_stopped");
  MESSAGE("contact tick recorded " << recorded << ", with gamma 0.25: " << later);
  CHECK((later < 0 || later > recorded));

  what_if.gamma = 0.18;
  std::istringstream same(recorded_log());
  CHECK(tick_of(replay_log(same, what_if).replayed, "contact_stopped") == recorded);
}

TEST_CASE("replay rejects logs without a header") {
  std::istringstream empty("");
  CHECK_THROWS(replay_log(empty));
  std::istringstream headless(R"({"type":"tick","tick":0})" "\n");
  CHECK_THROWS(replay_log(headless));
  CHECK_THROWS(replay_log_file("/nonexistent/log.jsonl"));
}
