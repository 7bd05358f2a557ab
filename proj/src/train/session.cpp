#include "fepr/train/session.hpp"

#include <chrono>
#include <deque>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "fepr/data/observation.hpp"
#include "fepr/errors.hpp"
#include "fepr/train/png.hpp"
#include "fepr/train/run_config.hpp"

namespace fepr::train {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

ClientMessage parse_client_message(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ProtocolError("message is not a JSON object");
  const auto type = j.find("type");
  if (type == j.end() || !type->is_string()) throw ProtocolError("message has no string 'type'");
  const std::string& t = type->get_ref<const std::string&>();
  if (t == "key_action") {
    const auto a = j.find("action");
    if (a == j.end() || !a->is_number_unsigned()) throw ProtocolError("key_action needs an unsigned integer 'action'");
    const auto v = a->get<std::uint64_t>();
    if (v >= static_cast<std::uint64_t>(env::kNumActions)) throw ProtocolError("action " + std::to_string(v) + " outside 0..10");
    return KeyAction{static_cast<int>(v)};
  }
  if (t == "record") {
    const auto on = j.find("on");
    if (on == j.end() || !on->is_boolean()) throw ProtocolError("record needs a boolean 'on'");
    return RecordToggle{on->get<bool>()};
  }
  if (t == "reset") {
    const auto seed = j.find("seed");
    if (seed == j.end() || !seed->is_number_unsigned()) throw ProtocolError("reset needs an unsigned integer 'seed'");
    return ResetRequest{seed->get<std::uint64_t>()};
  }
  throw ProtocolError("unknown message type '" + t + "'");
}

Session::Session(SessionConfig config, int id) : config_(std::move(config)), id_(id), env_(config_.env) {
  if (!(config_.tick_rate > 0)) throw ConfigError("tick_rate must be positive");
  reset_env(episode_seed(config_.seed, 3, 0));
}

Session::~Session() {
  if (writer_) stop_recording();
}

void Session::reset_env(std::uint64_t seed) { frame_ = env_.reset(seed); }

json Session::init_message() const {
  json actions = json::array();
  json labels = json::array();
  for (const env::ActionEntry& e : env::kActionTable) {
    actions.push_back({e.controls.steer, e.controls.accelerate, e.controls.brake});
    labels.push_back(std::string(e.label));
  }
  return {{"type", "init"},
          {"actions", actions},
          {"labels", labels},
          {"width", env::Frame::kWidth},
          {"height", env::Frame::kHeight},
          {"tick_rate", config_.tick_rate}};
}

json Session::frame_message(const env::Frame& frame, float reward, bool done, int action, bool recorded) {
  return {{"type", "frame"},
          {"seq", seq_++},
          {"reward", reward},
          {"done", done},
          {"action", action},
          {"recording", recorded},
          {"png_base64", base64_encode(encode_png(frame))}};
}

json Session::current_frame_message() { return frame_message(frame_, 0.f, false, action_, false); }

json Session::start_recording() {
  if (!writer_) {
    std::filesystem::create_directories(config_.record_dir);
    const auto path = config_.record_dir / fmt::format("session{}_{:03d}.fepd", id_, recordings_++);
    writer_ = std::make_unique<data::DemoWriter>(path.string());
    spdlog::info("session {}: recording to {}", id_, path.string());
  }
  return {{"type", "recording"}, {"on", true}, {"path", writer_->path()}, {"records", writer_->count()}};
}

json Session::stop_recording() {
  if (!writer_) return {{"type", "recording"}, {"on", false}, {"path", ""}, {"records", 0}};
  writer_->close();
  const std::size_t n = writer_->count();
  const std::string path = writer_->path();
  writer_.reset();
  spdlog::info("session {}: recording stopped, {} records written to {}", id_, n, path);
  return {{"type", "recording"}, {"on", false}, {"path", path}, {"records", n}};
}

std::vector<json> Session::handle(const ClientMessage& message) {
  std::vector<json> out;
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, KeyAction>) {
          action_ = m.action;
        } else if constexpr (std::is_same_v<M, RecordToggle>) {
          out.push_back(m.on ? start_recording() : stop_recording());
        } else {
          ++episode_;
          reset_env(m.seed);
          out.push_back(current_frame_message());
        }
      },
      message);
  return out;
}

std::vector<json> Session::tick() {
  std::vector<json> out;
  const bool recorded = writer_ != nullptr;
  std::optional<data::Observation> obs;
  if (recorded) obs = data::preprocess(frame_);
  const int action = action_;
  env::StepResult r = env_.step(action);
  if (recorded) writer_->append({static_cast<std::uint8_t>(action), r.reward, r.done, data::quantize(*obs)});
  out.push_back(frame_message(r.frame, r.reward, r.done, action, recorded));
  frame_ = std::move(r.frame);
  if (r.done) {
    const double cr = env_.cumulative_reward();
    out.push_back({{"type", "metrics"},
                   {"episode", episode_},
                   {"steps", env_.step_index()},
                   {"cumulative_reward", cr},
                   {"mar", mar_.push(cr)}});
    ++episode_;
    reset_env(episode_seed(config_.seed, 3, static_cast<std::uint64_t>(episode_)));
  }
  if (writer_ && config_.record_limit > 0 && writer_->count() >= config_.record_limit) out.push_back(stop_recording());
  return out;
}

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(const SessionConfig& config, int id, tcp::socket::native_handle_type fd, tcp::endpoint local)
      : ws_(tcp::socket(ctx_)), timer_(ctx_), session_(config, id), id_(id) {
    beast::get_lowest_layer(ws_).socket().assign(local.protocol(), fd);
    period_ = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / config.tick_rate));
  }

  void run() {
    ws_.text(true);
    // handshake deadline only; an idle timer would keep the context alive after a client drops
    ws_.set_option(websocket::stream_base::timeout{std::chrono::seconds(30), websocket::stream_base::none(), false});
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    ctx_.run();
    spdlog::info("session {}: closed", id_);
  }

  // Any thread.
  void shutdown() {
    net::post(ctx_, [self = shared_from_this()] {
      self->closing_ = true;
      self->timer_.cancel();
      beast::error_code ignored;
      beast::get_lowest_layer(self->ws_).socket().close(ignored);
    });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) {
      spdlog::warn("session {}: handshake failed: {}", id_, ec.message());
      return;
    }
    spdlog::info("session {}: connected", id_);
    send(session_.init_message().dump());
    send(session_.current_frame_message().dump());
    read();
    next_tick_ = std::chrono::steady_clock::now() + period_;
    schedule_tick();
  }

  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      closing_ = true;
      timer_.cancel();
      beast::error_code ignored;
      beast::get_lowest_layer(ws_).socket().close(ignored);
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      for (const json& m : session_.handle(parse_client_message(text))) send(m.dump());
    } catch (const ProtocolError& e) {
      spdlog::warn("session {}: malformed message ({}); closing", id_, e.what());
      close(websocket::close_code::policy_error, e.what());
      return;
    }
    read();
  }

  void schedule_tick() {
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closing_) return;
      self->next_tick_ += self->period_;
      for (const json& m : self->session_.tick()) {
        // a client that cannot keep up misses frames, never acks or metrics
        if (m["type"] == "frame" && self->outbox_.size() > 64) continue;
        self->send(m.dump());
      }
      self->schedule_tick();
    });
  }

  void send(std::string text) {
    if (closing_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) write();
  }

  void write() {
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->outbox_.pop_front();
      if (ec) {
        self->closing_ = true;
        self->timer_.cancel();
        return;
      }
      if (self->pending_close_) {
        self->outbox_.clear();
        self->do_close();
      } else if (!self->outbox_.empty()) {
        self->write();
      }
    });
  }

  void close(websocket::close_code code, std::string reason) {
    closing_ = true;
    timer_.cancel();
    close_reason_ = websocket::close_reason(code, reason.substr(0, 120));
    if (outbox_.empty()) {
      do_close();
    } else {
      pending_close_ = true;
    }
  }

  void do_close() {
    ws_.async_close(close_reason_, [self = shared_from_this()](beast::error_code) {});
  }

  net::io_context ctx_;
  websocket::stream<beast::tcp_stream> ws_;
  net::steady_timer timer_;
  Session session_;
  int id_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::chrono::steady_clock::duration period_{};
  std::chrono::steady_clock::time_point next_tick_;
  bool closing_ = false;
  bool pending_close_ = false;
  websocket::close_reason close_reason_;
};

}  // namespace

struct SessionServer::Impl {
  SessionConfig config;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::mutex mu;
  std::vector<std::weak_ptr<Connection>> connections;
  std::vector<std::thread> threads;
  int next_id = 0;
  bool stopped = false;

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      const tcp::endpoint local = socket.local_endpoint();
      std::lock_guard lock(mu);
      if (stopped) return;
      auto conn = std::make_shared<Connection>(config, next_id++, socket.release(), local);
      connections.push_back(conn);
      threads.emplace_back([conn] { conn->run(); });
      accept();
    });
  }
};

SessionServer::SessionServer(SessionConfig config, std::uint16_t port, const std::string& address)
    : impl_(std::make_unique<Impl>()) {
  if (!(config.tick_rate > 0)) throw ConfigError("tick_rate must be positive");
  env::validate(config.env);
  impl_->config = std::move(config);
  const tcp::endpoint endpoint(net::ip::make_address(address), port);
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen();
  impl_->accept();
}

SessionServer::~SessionServer() { stop(); }

std::uint16_t SessionServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void SessionServer::run() { impl_->ioc.run(); }

void SessionServer::stop() {
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(impl_->mu);
    if (impl_->stopped) return;
    impl_->stopped = true;
    for (auto& weak : impl_->connections) {
      if (auto c = weak.lock()) c->shutdown();
    }
    threads.swap(impl_->threads);
  }
  net::post(impl_->ioc, [this] {
    beast::error_code ignored;
    impl_->acceptor.close(ignored);
  });
  impl_->ioc.stop();
  for (auto& t : threads) t.join();
}

}  // namespace fepr::train
