#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "fepr/data/demo_file.hpp"
#include "fepr/env/car_racing.hpp"
#include "fepr/train/metrics.hpp"

namespace fepr::train {

// Client -> server messages.
struct KeyAction {
  int action = 0;
};
struct RecordToggle {
  bool on = false;
};
struct ResetRequest {
  std::uint64_t seed = 0;
};
using ClientMessage = std::variant<KeyAction, RecordToggle, ResetRequest>;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Strict: unknown types, missing or mistyped fields and out-of-range actions all throw.
ClientMessage parse_client_message(std::string_view text);

struct SessionConfig {
  env::EnvConfig env;
  std::uint64_t seed = 0;
  double tick_rate = 30.0;  // ticks per second
  std::filesystem::path record_dir = "recordings";
  std::size_t record_limit = 0;  // recording switches itself off after this many records; 0 = never
};

// Protocol state for one connection, free of any transport. The latest key action stays
// in force until another arrives; before the first one the car gets action 0.
//
// Server messages:
//   {type:"init", actions:[[steer,gas,brake] x11], labels:[...], width:96, height:96, tick_rate}
//   {type:"frame", seq, reward, done, action, recording, png_base64}
//   {type:"metrics", episode, steps, cumulative_reward, mar}
//   {type:"recording", on, path, records}   acknowledgement of a record toggle
class Session {
 public:
  Session(SessionConfig config, int id);
  ~Session();

  nlohmann::json init_message() const;
  // Frame message for the current state without stepping (sent after init and reset).
  nlohmann::json current_frame_message();
  std::vector<nlohmann::json> handle(const ClientMessage& message);
  std::vector<nlohmann::json> tick();

  int pending_action() const { return action_; }
  bool recording() const { return writer_ != nullptr; }
  std::uint64_t seq() const { return seq_; }
  int episode() const { return episode_; }
  const env::CarRacing& env() const { return env_; }

 private:
  nlohmann::json frame_message(const env::Frame& frame, float reward, bool done, int action, bool recorded);
  nlohmann::json start_recording();
  nlohmann::json stop_recording();
  void reset_env(std::uint64_t seed);

  SessionConfig config_;
  int id_;
  env::CarRacing env_;
  env::Frame frame_;
  int action_ = 0;
  std::uint64_t seq_ = 0;
  int episode_ = 0;
  int recordings_ = 0;
  MarTracker mar_;
  std::unique_ptr<data::DemoWriter> writer_;
};

// WebSocket server; each connection gets its own Session on its own thread.
class SessionServer {
 public:
  SessionServer(SessionConfig config, std::uint16_t port, const std::string& address = "127.0.0.1");
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  std::uint16_t port() const;
  // Blocks until stop() is called from another thread.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fepr::train
