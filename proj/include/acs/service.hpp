#pragma once

#include "acs/config.hpp"
#include "acs/edit.hpp"

#include <json.hpp>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace acs::service {

/// Bounded multi-producer queue that drops its oldest entry when full.
class FrameQueue {
 public:
  explicit FrameQueue(std::size_t capacity = 8);

  /// Never blocks. Returns true when an older entry was dropped.
  bool push(std::string msg);
  std::optional<std::string> pop();
  std::size_t size() const;
  std::size_t dropped() const;
  std::size_t capacity() const { return capacity_; }

 private:
  mutable std::mutex mu_;
  std::deque<std::string> items_;
  std::size_t capacity_;
  std::size_t dropped_ = 0;
};

/// Fixed-size ring holding the most recent entries.
template <class T>
class Ring {
 public:
  explicit Ring(std::size_t capacity) : capacity_(capacity) {}
  void push(T v) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(v));
  }
  const std::deque<T>& items() const { return items_; }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
};

enum class Control { pause, resume, reset, recompute_selection };
std::optional<Control> control_from_string(const std::string& s);

struct AlphaCheck {
  bool ok = false;
  std::string error;
};

/// Finite and within [-max_alpha, max_alpha].
AlphaCheck check_alpha(const nlohmann::json& value, double max_alpha);

/// Rejection payload with the accepted bounds.
nlohmann::json alpha_rejection(const std::string& error, double max_alpha);

/// Streaming subscriber: the worker pushes, the connection drains.
struct Subscriber {
  FrameQueue queue{8};
  std::function<void()> notify;
};

/// One live edit. The worker thread is the only writer of the scene; API calls
/// enqueue commands that run at the next step boundary.
class EditSession {
 public:
  EditSession(std::string id, config::RunConfig cfg, config::Artifacts art, splat::SplatScene scene);
  ~EditSession();
  EditSession(const EditSession&) = delete;
  EditSession& operator=(const EditSession&) = delete;

  const std::string& id() const { return id_; }
  double max_alpha() const { return cfg_.max_alpha; }

  using Reply = std::function<void(nlohmann::json)>;
  /// Validated by the caller. The reply runs on the worker after the change applies.
  void set_alpha(double alpha, Reply reply = {});
  void control(Control cmd, Reply reply = {});

  /// Step-atomic snapshot of the session state.
  nlohmann::json state() const;
  /// Recent trace entries, oldest first.
  std::vector<edit::TraceEntry> trace() const;

  void subscribe(const std::shared_ptr<Subscriber>& sub);
  void unsubscribe(const std::shared_ptr<Subscriber>& sub);

  void stop();

 private:
  struct Command {
    enum class Kind { alpha, control } kind;
    double alpha = 0.0;
    Control cmd = Control::pause;
    Reply reply;
  };

  void run();
  void apply(Command& c);
  void publish(const std::string& msg);
  void publish_events();
  void refresh_state();
  nlohmann::json state_locked() const;

  std::string id_;
  config::RunConfig cfg_;
  config::Artifacts art_;
  splat::SplatScene snapshot_;
  std::unique_ptr<edit::EditRunner> runner_;
  splat::View front_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> mailbox_;
  bool stop_ = false;

  // Worker-owned.
  double alpha_ = 0.0;
  bool paused_ = false;
  std::size_t events_sent_ = 0;
  std::size_t recomputes_ = 0;

  // Guarded by state_mu_.
  mutable std::mutex state_mu_;
  nlohmann::json state_;
  Ring<edit::TraceEntry> trace_{2000};
  std::vector<std::shared_ptr<Subscriber>> subs_;

  std::thread worker_;
};

/// 64-bit FNV-1a over the scene's serialized form.
std::string scene_digest(const splat::SplatScene& scene);

struct ServerOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 0;
  std::filesystem::path out = ".";
};

/// REST + WebSocket server on a background thread.
class Server {
 public:
  /// Loads the configured artifacts; a missing file raises IoError naming it.
  Server(config::RunConfig cfg, ServerOptions opts);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  unsigned short port() const;
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
};

}  // namespace acs::service
