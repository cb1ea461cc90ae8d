#include "acs/service.hpp"

#include "acs/base64.hpp"
#include "acs/error.hpp"
#include "acs/image_io.hpp"
#include "acs/json_util.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace acs::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

FrameQueue::FrameQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("frame queue capacity must be >= 1");
}

bool FrameQueue::push(std::string msg) {
  std::lock_guard lock(mu_);
  bool dropped = false;
  if (items_.size() == capacity_) {
    items_.pop_front();
    ++dropped_;
    dropped = true;
  }
  items_.push_back(std::move(msg));
  return dropped;
}

std::optional<std::string> FrameQueue::pop() {
  std::lock_guard lock(mu_);
  if (items_.empty()) return std::nullopt;
  std::string s = std::move(items_.front());
  items_.pop_front();
  return s;
}

std::size_t FrameQueue::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::size_t FrameQueue::dropped() const {
  std::lock_guard lock(mu_);
  return dropped_;
}

std::optional<Control> control_from_string(const std::string& s) {
  if (s == "pause") return Control::pause;
  if (s == "resume") return Control::resume;
  if (s == "reset") return Control::reset;
  if (s == "recompute_selection") return Control::recompute_selection;
  return std::nullopt;
}

AlphaCheck check_alpha(const json& value, double max_alpha) {
  if (!value.is_number()) return {false, "alpha must be a number"};
  const double a = value.get<double>();
  if (!std::isfinite(a)) return {false, "alpha must be finite"};
  if (std::abs(a) > max_alpha) return {false, "alpha out of range"};
  return {true, {}};
}

json alpha_rejection(const std::string& error, double max_alpha) {
  return {{"type", "error"}, {"error", error}, {"bounds", {-max_alpha, max_alpha}}};
}

std::string scene_digest(const splat::SplatScene& scene) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const auto params = splat::to_params(scene.primitives[i]);
    feed(params.data(), sizeof(double) * params.size());
    const unsigned char sel = scene.selection[i] ? 1 : 0;
    feed(&sel, 1);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

EditSession::EditSession(std::string id, config::RunConfig cfg, config::Artifacts art, splat::SplatScene scene)
    : id_(std::move(id)), cfg_(std::move(cfg)), art_(std::move(art)) {
  runner_ = std::make_unique<edit::EditRunner>(std::move(scene), config::make_encoder(cfg_),
                                               art_.model.reference_axis(),
                                               config::targets(cfg_, art_.model, art_.gen, art_.adapter, 0.0), cfg_.edit);
  snapshot_ = runner_->scene();
  front_ = splat::front_view(cfg_.edit.views.height, cfg_.edit.views.width);
  refresh_state();
  worker_ = std::thread([this] { run(); });
}

EditSession::~EditSession() { stop(); }

void EditSession::stop() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable() && worker_.get_id() != std::this_thread::get_id()) worker_.join();
}

void EditSession::set_alpha(double alpha, Reply reply) {
  {
    std::lock_guard lock(mu_);
    mailbox_.push_back(Command{Command::Kind::alpha, alpha, Control::pause, std::move(reply)});
  }
  cv_.notify_all();
}

void EditSession::control(Control cmd, Reply reply) {
  {
    std::lock_guard lock(mu_);
    mailbox_.push_back(Command{Command::Kind::control, 0.0, cmd, std::move(reply)});
  }
  cv_.notify_all();
}

json EditSession::state() const {
  std::lock_guard lock(state_mu_);
  return state_;
}

std::vector<edit::TraceEntry> EditSession::trace() const {
  std::lock_guard lock(state_mu_);
  return {trace_.items().begin(), trace_.items().end()};
}

void EditSession::subscribe(const std::shared_ptr<Subscriber>& sub) {
  std::lock_guard lock(state_mu_);
  subs_.push_back(sub);
}

void EditSession::unsubscribe(const std::shared_ptr<Subscriber>& sub) {
  std::lock_guard lock(state_mu_);
  std::erase(subs_, sub);
}

void EditSession::publish(const std::string& msg) {
  std::vector<std::shared_ptr<Subscriber>> subs;
  {
    std::lock_guard lock(state_mu_);
    subs = subs_;
  }
  for (const auto& s : subs) {
    s->queue.push(msg);
    if (s->notify) s->notify();
  }
}

void EditSession::publish_events() {
  const auto& events = runner_->events();
  for (; events_sent_ < events.size(); ++events_sent_) publish(edit::to_json(events[events_sent_]).dump());
}

json EditSession::state_locked() const {
  const splat::SplatScene& scene = runner_->scene();
  const auto& trace = runner_->trace();
  json j = {{"id", id_},
            {"alpha", alpha_},
            {"bounds", {-cfg_.max_alpha, cfg_.max_alpha}},
            {"step", runner_->steps_done()},
            {"paused", paused_},
            {"selected", scene.selected_count()},
            {"primitives", scene.size()},
            {"gamma", cfg_.edit.gamma},
            {"target_recomputes", recomputes_},
            {"scene_digest", scene_digest(scene)},
            {"snapshot_digest", scene_digest(snapshot_)}};
  if (!trace.empty()) {
    j["coord"] = trace.back().coord;
    j["losses"] = {{"sds", trace.back().loss_sds}};
  } else {
    j["coord"] = nullptr;
    j["losses"] = {{"sds", nullptr}};
  }
  return j;
}

void EditSession::refresh_state() {
  json s = state_locked();
  std::lock_guard lock(state_mu_);
  state_ = std::move(s);
}

void EditSession::apply(Command& c) {
  json reply;
  if (c.kind == Command::Kind::alpha) {
    const bool changed = c.alpha != alpha_;
    if (changed) {
      runner_->set_targets(config::targets(cfg_, art_.model, art_.gen, art_.adapter, c.alpha));
      alpha_ = c.alpha;
      ++recomputes_;
    }
    json ev = {{"type", "event"}, {"kind", "alpha"}, {"step", runner_->steps_done()}, {"alpha", alpha_},
               {"recomputed", changed}};
    publish(ev.dump());
    reply = {{"alpha", alpha_}, {"recomputed", changed}, {"step", runner_->steps_done()},
             {"bounds", {-cfg_.max_alpha, cfg_.max_alpha}}};
  } else {
    switch (c.cmd) {
      case Control::pause: paused_ = true; break;
      case Control::resume: paused_ = false; break;
      case Control::reset: runner_->reset(snapshot_); break;
      case Control::recompute_selection: runner_->recompute_selection(); break;
    }
    publish_events();
  }
  refresh_state();
  if (c.kind == Command::Kind::control) reply = state();
  if (c.reply) c.reply(std::move(reply));
}

void EditSession::run() {
  publish_events();
  while (true) {
    std::deque<Command> batch;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return stop_ || !mailbox_.empty() || !paused_; });
      if (stop_) break;
      batch.swap(mailbox_);
    }
    for (auto& c : batch) apply(c);
    if (paused_) continue;

    try {
      const edit::TraceEntry& e = runner_->step();
      {
        std::lock_guard lock(state_mu_);
        trace_.push(e);
      }
      if (e.step % cfg_.frame_every == 0) {
        const splat::Image frame = image::flatten_on_white(splat::render(runner_->scene(), front_));
        const std::vector<std::uint8_t> png = image::encode_png(frame);
        nlohmann::ordered_json msg;
        msg["type"] = "frame";
        msg["step"] = e.step;
        msg["png"] = base64_encode(png);
        msg["coord"] = e.coord;
        msg["alpha"] = alpha_;
        msg["selected"] = e.selected;
        msg["losses"] = {{"sds", e.loss_sds}};
        publish(msg.dump());
      }
      publish_events();
    } catch (const Error& err) {
      paused_ = true;
      publish(json{{"type", "error"}, {"error", err.what()}, {"kind", err.kind()}}.dump());
    }
    refresh_state();
  }
}

// ---------------------------------------------------------------------------

struct Server::Impl {
  config::RunConfig cfg;
  ServerOptions opts;
  config::Layout paths;
  config::Artifacts defaults;
  splat::SplatScene default_scene;

  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  std::thread io_thread;
  std::map<std::string, std::shared_ptr<EditSession>> sessions;
  std::uint64_t next_id = 1;
  unsigned short bound_port = 0;
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  Impl(config::RunConfig c, ServerOptions o)
      : cfg(std::move(c)),
        opts(std::move(o)),
        paths(config::layout(cfg, opts.out)),
        defaults(config::load_artifacts(cfg, paths)),
        default_scene(config::source_scene(cfg)) {}

  void accept();
  void shutdown();
  std::shared_ptr<EditSession> find(const std::string& id) {
    auto it = sessions.find(id);
    return it == sessions.end() ? nullptr : it->second;
  }
};

namespace {

using Request = http::request<http::string_body>;
using Response = http::response<http::string_body>;

Response json_response(const Request& req, http::status status, const json& body) {
  Response res{status, req.version()};
  res.set(http::field::content_type, "application/json");
  res.keep_alive(req.keep_alive());
  res.body() = body.dump();
  res.prepare_payload();
  return res;
}

Response error_response(const Request& req, http::status status, const std::string& msg) {
  return json_response(req, status, {{"type", "error"}, {"error", msg}});
}

std::vector<std::string> split_path(std::string_view target) {
  const auto q = target.find('?');
  if (q != std::string_view::npos) target = target.substr(0, q);
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < target.size()) {
    while (i < target.size() && target[i] == '/') ++i;
    const std::size_t j = target.find('/', i);
    const std::size_t end = j == std::string_view::npos ? target.size() : j;
    if (end > i) parts.emplace_back(target.substr(i, end - i));
    i = end;
  }
  return parts;
}

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html") return "text/html";
  if (ext == ".js") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

class WsConn : public std::enable_shared_from_this<WsConn> {
 public:
  WsConn(tcp::socket socket, std::shared_ptr<EditSession> session)
      : ws_(std::move(socket)), session_(std::move(session)) {}

  void start(Request req) {
    sub_ = std::make_shared<Subscriber>();
    std::weak_ptr<WsConn> weak = shared_from_this();
    auto exec = ws_.get_executor();
    sub_->notify = [weak, exec] {
      auto self = weak.lock();
      if (!self || self->kick_pending_.exchange(true)) return;
      net::post(exec, [self] {
        self->kick_pending_ = false;
        self->pump();
      });
    };
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->session_->subscribe(self->sub_);
      self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->close();
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->handle(text);
      self->read();
    });
  }

  void send_direct(const json& j) {
    direct_.push_back(j.dump());
    pump();
  }

  void handle(const std::string& text) {
    const json msg = json::parse(text, nullptr, false);
    if (msg.is_discarded() || !msg.is_object()) {
      send_direct({{"type", "error"}, {"error", "message is not a JSON object"}});
      return;
    }
    const std::string type = msg.contains("type") && msg["type"].is_string() ? msg["type"].get<std::string>() : "";
    if (type == "set_alpha") {
      const json value = msg.contains("alpha") ? msg["alpha"] : json();
      const AlphaCheck chk = check_alpha(value, session_->max_alpha());
      if (!chk.ok) {
        send_direct(alpha_rejection(chk.error, session_->max_alpha()));
        return;
      }
      session_->set_alpha(value.get<double>());
    } else if (type == "control") {
      const auto cmd = msg.contains("cmd") && msg["cmd"].is_string() ? control_from_string(msg["cmd"].get<std::string>())
                                                                     : std::nullopt;
      if (!cmd) {
        send_direct({{"type", "error"}, {"error", "unknown control command"}});
        return;
      }
      session_->control(*cmd);
    } else {
      send_direct({{"type", "error"}, {"error", "unknown message type '" + type + "'"}});
    }
  }

  void pump() {
    if (writing_ || closed_) return;
    std::optional<std::string> next;
    if (!direct_.empty()) {
      next = std::move(direct_.front());
      direct_.pop_front();
    } else {
      next = sub_->queue.pop();
    }
    if (!next) return;
    writing_ = true;
    out_ = std::move(*next);
    ws_.text(true);
    ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) {
        self->close();
        return;
      }
      self->pump();
    });
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    session_->unsubscribe(sub_);
  }

  websocket::stream<beast::tcp_stream> ws_;
  std::shared_ptr<EditSession> session_;
  std::shared_ptr<Subscriber> sub_;
  beast::flat_buffer buffer_;
  std::deque<std::string> direct_;
  std::string out_;
  bool writing_ = false;
  bool closed_ = false;
  std::atomic<bool> kick_pending_{false};
};

class HttpConn : public std::enable_shared_from_this<HttpConn> {
 public:
  HttpConn(tcp::socket socket, Server::Impl& server) : stream_(std::move(socket)), server_(server) {}

  void start() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(60));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->dispatch();
    });
  }

  void write(Response res) {
    auto sp = std::make_shared<Response>(std::move(res));
    http::async_write(stream_, *sp, [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (sp->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  /// Sends a reply produced on another thread.
  std::function<void(json)> deferred(http::status status) {
    auto self = shared_from_this();
    auto exec = stream_.get_executor();
    return [self, exec, status](json body) {
      net::post(exec, [self, status, body = std::move(body)] { self->write(json_response(self->req_, status, body)); });
    };
  }

  void dispatch() {
    try {
      route();
    } catch (const Error& e) {
      json body = {{"type", "error"}, {"error", e.what()}, {"kind", e.kind()}};
      write(json_response(req_, dynamic_cast<const IoError*>(&e) ? http::status::not_found : http::status::bad_request,
                          body));
    } catch (const std::exception& e) {
      write(error_response(req_, http::status::internal_server_error, e.what()));
    }
  }

  json body_json() {
    if (req_.body().empty()) return json::object();
    json j = json::parse(req_.body(), nullptr, false);
    if (j.is_discarded()) throw ConfigError("request body is not valid JSON");
    return j;
  }

  void route() {
    const auto parts = split_path(std::string_view(req_.target().data(), req_.target().size()));
    const auto method = req_.method();

    if (parts.size() == 2 && parts[0] == "api" && parts[1] == "health" && method == http::verb::get) {
      json session = nullptr;
      if (!server_.sessions.empty()) session = server_.sessions.begin()->first;
      write(json_response(req_, http::status::ok, {{"status", "ok"}, {"session", session}}));
      return;
    }
    if (parts.size() == 2 && parts[0] == "api" && parts[1] == "session" && method == http::verb::post) {
      create_session();
      return;
    }
    if (parts.size() >= 3 && parts[0] == "api" && parts[1] == "session") {
      auto session = server_.find(parts[2]);
      if (!session) {
        write(error_response(req_, http::status::not_found, "no session '" + parts[2] + "'"));
        return;
      }
      session_route(session, parts);
      return;
    }
    if (method == http::verb::get && parts.size() >= 1 && parts[0] == "api") {
      write(error_response(req_, http::status::not_found, "no such endpoint"));
      return;
    }
    if (method == http::verb::get) {
      static_file(parts);
      return;
    }
    write(error_response(req_, http::status::method_not_allowed, "method not allowed"));
  }

  void create_session() {
    const json body = body_json();
    if (!body.is_object()) throw ConfigError("session request must be a JSON object");
    if (!server_.sessions.empty() && !server_.cfg.multi_session) {
      write(json_response(req_, http::status::conflict,
                          {{"type", "error"},
                           {"error", "a session is already running"},
                           {"session", server_.sessions.begin()->first}}));
      return;
    }
    auto path_field = [&](const char* key) -> std::string {
      if (!body.contains(key) || body[key].is_null()) return {};
      if (!body[key].is_string()) throw ConfigError(std::string("field '") + key + "' must be a path string");
      return body[key].get<std::string>();
    };
    config::RunConfig cfg = server_.cfg;
    const std::string cfg_path = path_field("config");
    if (!cfg_path.empty()) cfg = config::load(std::filesystem::path(cfg_path), {}, nullptr);
    const std::string scene_path = path_field("scene"), axis_path = path_field("axis"),
                      adapter_path = path_field("adapter");
    if (!axis_path.empty()) cfg.axis_path = axis_path;
    if (!adapter_path.empty()) cfg.adapter_path = adapter_path;
    if (!scene_path.empty()) cfg.scene_path = scene_path;

    config::Artifacts art = (axis_path.empty() && adapter_path.empty() && cfg_path.empty())
                                ? server_.defaults
                                : config::load_artifacts(cfg, config::layout(cfg, server_.opts.out));
    if (!cfg.scene_path.empty() && !std::filesystem::exists(cfg.scene_path))
      throw IoError("missing scene file: " + cfg.scene_path);
    splat::SplatScene scene = (scene_path.empty() && cfg_path.empty()) ? server_.default_scene : config::source_scene(cfg);

    const std::string id = "s" + std::to_string(server_.next_id++);
    server_.sessions.emplace(id, std::make_shared<EditSession>(id, std::move(cfg), std::move(art), std::move(scene)));
    write(json_response(req_, http::status::created, {{"id", id}}));
  }

  void session_route(const std::shared_ptr<EditSession>& session, const std::vector<std::string>& parts) {
    const auto method = req_.method();
    if (parts.size() == 3 && method == http::verb::delete_) {
      session->stop();
      server_.sessions.erase(parts[2]);
      write(json_response(req_, http::status::ok, {{"id", parts[2]}, {"stopped", true}}));
      return;
    }
    if (parts.size() != 4) {
      write(error_response(req_, http::status::not_found, "no such endpoint"));
      return;
    }
    const std::string& what = parts[3];
    if (what == "state" && method == http::verb::get) {
      write(json_response(req_, http::status::ok, session->state()));
      return;
    }
    if (what == "trace" && method == http::verb::get) {
      json entries = json::array();
      for (const auto& e : session->trace()) entries.push_back(edit::to_json(e));
      write(json_response(req_, http::status::ok, {{"entries", entries}}));
      return;
    }
    if (what == "alpha" && method == http::verb::post) {
      const json body = json::parse(req_.body(), nullptr, false);
      const json value = body.is_object() && body.contains("alpha") ? body["alpha"] : json();
      const AlphaCheck chk = check_alpha(value, session->max_alpha());
      if (!chk.ok) {
        write(json_response(req_, http::status::bad_request, alpha_rejection(chk.error, session->max_alpha())));
        return;
      }
      session->set_alpha(value.get<double>(), deferred(http::status::ok));
      return;
    }
    if (what == "control" && method == http::verb::post) {
      const json body = body_json();
      const auto cmd = body.is_object() && body.contains("cmd") && body["cmd"].is_string()
                           ? control_from_string(body["cmd"].get<std::string>())
                           : std::nullopt;
      if (!cmd) {
        write(error_response(req_, http::status::bad_request,
                             "cmd must be one of pause, resume, reset, recompute_selection"));
        return;
      }
      session->control(*cmd, deferred(http::status::ok));
      return;
    }
    if (what == "stream" && websocket::is_upgrade(req_)) {
      auto ws = std::make_shared<WsConn>(stream_.release_socket(), session);
      ws->start(std::move(req_));
      return;
    }
    write(error_response(req_, http::status::not_found, "no such endpoint"));
  }

  void static_file(const std::vector<std::string>& parts) {
    if (server_.cfg.ui_dir.empty()) {
      write(error_response(req_, http::status::not_found, "no UI assets configured"));
      return;
    }
    std::filesystem::path rel;
    for (const auto& p : parts) {
      if (p == ".." || p == ".") {
        write(error_response(req_, http::status::bad_request, "bad path"));
        return;
      }
      rel /= p;
    }
    if (rel.empty()) rel = "index.html";
    const std::filesystem::path full = std::filesystem::path(server_.cfg.ui_dir) / rel;
    std::ifstream in(full, std::ios::binary);
    if (!in) {
      write(error_response(req_, http::status::not_found, "not found: " + rel.string()));
      return;
    }
    Response res{http::status::ok, req_.version()};
    res.set(http::field::content_type, mime_type(full));
    res.keep_alive(req_.keep_alive());
    res.body().assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    res.prepare_payload();
    write(std::move(res));
  }

  beast::tcp_stream stream_;
  Server::Impl& server_;
  beast::flat_buffer buffer_;
  Request req_;
};

}  // namespace

void Server::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (ec) return;
    std::make_shared<HttpConn>(std::move(socket), *this)->start();
    accept();
  });
}

void Server::Impl::shutdown() {
  net::post(ioc, [this] {
    beast::error_code ignored;
    acceptor.close(ignored);
    for (auto& [id, s] : sessions) s->stop();
    sessions.clear();
    ioc.stop();
  });
}

Server::Server(config::RunConfig cfg, ServerOptions opts) : impl_(std::make_unique<Impl>(std::move(cfg), std::move(opts))) {
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->opts.host, ec);
  if (ec) throw ConfigError("invalid host '" + impl_->opts.host + "'");
  const tcp::endpoint ep{address, impl_->opts.port};
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (ec) throw IoError("cannot bind " + impl_->opts.host + ":" + std::to_string(impl_->opts.port) + ": " + ec.message());
  impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw IoError("cannot listen: " + ec.message());
  impl_->bound_port = impl_->acceptor.local_endpoint().port();
  impl_->accept();
  impl_->io_thread = std::thread([this] { impl_->ioc.run(); });
}

Server::~Server() {
  stop();
  if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

unsigned short Server::port() const { return impl_->bound_port; }

void Server::stop() {
  {
    std::lock_guard lock(impl_->stop_mu);
    if (impl_->stopped) return;
    impl_->stopped = true;
  }
  impl_->shutdown();
  impl_->stop_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
  lock.unlock();
  if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

}  // namespace acs::service
