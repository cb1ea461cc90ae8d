#include "acs/config.hpp"
#include "acs/error.hpp"
#include "acs/image_io.hpp"
#include "acs/base64.hpp"
#include "acs/service.hpp"
#include "cli.hpp"

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

using namespace acs;
using nlohmann::json;
namespace fs = std::filesystem;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

const std::vector<std::string> kSmall = {"--set", "edit.views.height=16", "--set", "edit.views.width=16"};

// Builds the artifacts once through the CLI.
const fs::path& artifact_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "acs_tests" / "service";
    fs::remove_all(d);
    std::ostringstream out, err;
    for (const char* cmd : {"gen-data", "fit-axis", "train-adapter"}) {
      const int rc = cli::run({"--out", d.string(), cmd}, out, err);
      if (rc != 0) throw std::runtime_error("artifact build failed: " + err.str());
    }
    return d;
  }();
  return dir;
}

config::RunConfig small_config(json extra = json::object()) {
  std::vector<std::string> sets;
  for (std::size_t i = 1; i < kSmall.size(); i += 2) sets.push_back(kSmall[i]);
  auto cfg = config::load(std::nullopt, sets, nullptr);
  if (!extra.empty()) {
    json doc = cfg.doc;
    doc.merge_patch(extra);
    cfg = config::from_json(doc);
  }
  return cfg;
}

struct Reply {
  int status = 0;
  json body;
};

Reply call(unsigned short port, http::verb verb, const std::string& target, const std::string& body = "") {
  net::io_context ioc;
  tcp::socket sock(ioc);
  sock.connect({net::ip::make_address("127.0.0.1"), port});
  http::request<http::string_body> req{verb, target, 11};
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::content_type, "application/json");
  req.body() = body;
  req.prepare_payload();
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  beast::error_code ec;
  sock.shutdown(tcp::socket::shutdown_both, ec);
  return {static_cast<int>(res.result_int()), json::parse(res.body(), nullptr, false)};
}

class Stream {
 public:
  Stream(unsigned short port, const std::string& id) : ws_(ioc_) {
    ws_.next_layer().connect({net::ip::make_address("127.0.0.1"), port});
    ws_.handshake("127.0.0.1", "/api/session/" + id + "/stream");
  }

  void send(const json& j) { ws_.write(net::buffer(j.dump())); }

  // Next message, or a discarded value. A timeout closes the stream.
  json next(double seconds = 5.0) {
    if (closed_) return json(json::value_t::discarded);
    beast::flat_buffer buf;
    beast::error_code ec;
    bool done = false;
    ws_.async_read(buf, [&](beast::error_code e, std::size_t) {
      ec = e;
      done = true;
    });
    ioc_.restart();
    ioc_.run_for(std::chrono::milliseconds(static_cast<long>(seconds * 1000)));
    if (!done) {
      closed_ = true;
      beast::error_code ignored;
      ws_.next_layer().close(ignored);
      ioc_.restart();
      ioc_.run();
    }
    if (ec || !done) return json(json::value_t::discarded);
    return json::parse(beast::buffers_to_string(buf.data()), nullptr, false);
  }

  // Reads until `pred` holds or the deadline passes.
  template <class P>
  json until(P pred, double seconds = 20.0) {
    const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (std::chrono::steady_clock::now() < end) {
      const double left = std::chrono::duration<double>(end - std::chrono::steady_clock::now()).count();
      json m = next(std::max(left, 0.01));
      if (!m.is_discarded() && pred(m)) return m;
    }
    return json(json::value_t::discarded);
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
  bool closed_ = false;
};

struct Running {
  service::Server server;
  explicit Running(config::RunConfig cfg) : server(std::move(cfg), {"127.0.0.1", 0, artifact_dir()}) {}
  ~Running() {
    server.stop();
    server.wait();
  }
  unsigned short port() const { return server.port(); }
  std::string create() {
    const auto r = call(port(), http::verb::post, "/api/session", "{}");
    REQUIRE(r.status == 201);
    return r.body.at("id").get<std::string>();
  }
};

bool valid_frame(const json& m) {
  if (!m.is_object() || m.value("type", "") != "frame") return false;
  for (const char* k : {"step", "png", "coord", "alpha", "selected", "losses"})
    if (!m.contains(k)) return false;
  if (!m["step"].is_number_integer() || !m["coord"].is_number() || !m["alpha"].is_number()) return false;
  if (!m["losses"].contains("sds") || !m["losses"]["sds"].is_number()) return false;
  const auto png = base64_decode(m["png"].get<std::string>());
  const auto img = image::decode_png(png);
  return img.height == 16 && img.width == 16;
}

}  // namespace

TEST_CASE("frame queue drops the oldest entry when full") {
  service::FrameQueue q(3);
  CHECK_FALSE(q.push("a"));
  CHECK_FALSE(q.push("b"));
  CHECK_FALSE(q.push("c"));
  CHECK(q.push("d"));
  CHECK(q.size() == 3);
  CHECK(q.dropped() == 1);
  CHECK(q.pop() == "b");
  CHECK(q.pop() == "c");
  CHECK(q.pop() == "d");
  CHECK_FALSE(q.pop().has_value());

  service::Ring<int> ring(2);
  for (int i = 0; i < 5; ++i) ring.push(i);
  CHECK(ring.items() == std::deque<int>{3, 4});
}

TEST_CASE("alpha validation") {
  CHECK(service::check_alpha(0.5, 3.0).ok);
  CHECK(service::check_alpha(-3.0, 3.0).ok);
  CHECK_FALSE(service::check_alpha(3.5, 3.0).ok);
  CHECK_FALSE(service::check_alpha(std::nan(""), 3.0).ok);
  CHECK_FALSE(service::check_alpha(INFINITY, 3.0).ok);
  CHECK_FALSE(service::check_alpha("0.5", 3.0).ok);
  CHECK_FALSE(service::check_alpha(json(), 3.0).ok);
  const auto rej = service::alpha_rejection("alpha out of range", 3.0);
  CHECK(rej["type"] == "error");
  CHECK(rej["bounds"] == json::array({-3.0, 3.0}));
  CHECK(service::control_from_string("pause") == service::Control::pause);
  CHECK_FALSE(service::control_from_string("explode").has_value());
}

TEST_CASE("startup with a missing adapter names the path") {
  auto cfg = small_config({{"paths", {{"adapter", "/nonexistent/adapter.json"}}}});
  try {
    service::Server s(cfg, {"127.0.0.1", 0, artifact_dir()});
    FAIL("server started without an adapter");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/adapter.json") != std::string::npos);
  }
}

TEST_CASE("REST session lifecycle") {
  Running srv(small_config());
  auto health = call(srv.port(), http::verb::get, "/api/health");
  CHECK(health.status == 200);
  CHECK(health.body == json{{"status", "ok"}, {"session", nullptr}});

  const std::string id = srv.create();
  CHECK(call(srv.port(), http::verb::get, "/api/health").body["session"] == id);
  CHECK(call(srv.port(), http::verb::post, "/api/session", "{}").status == 409);
  CHECK(call(srv.port(), http::verb::get, "/api/session/nope/state").status == 404);

  const std::string base = "/api/session/" + id;
  for (const char* bad : {R"({"alpha":"nan"})", R"({"alpha":null})", R"({"alpha":7.5})", R"({"alpha":-3.01})", "{}"}) {
    const auto r = call(srv.port(), http::verb::post, base + "/alpha", bad);
    CHECK(r.status == 400);
    CHECK(r.body["type"] == "error");
    CHECK(r.body["bounds"] == json::array({-3.0, 3.0}));
  }

  const auto first = call(srv.port(), http::verb::post, base + "/alpha", R"({"alpha":0.5})");
  CHECK(first.status == 200);
  CHECK(first.body["recomputed"] == true);
  const auto second = call(srv.port(), http::verb::post, base + "/alpha", R"({"alpha":0.5})");
  CHECK(second.body["recomputed"] == false);
  auto state = call(srv.port(), http::verb::get, base + "/state").body;
  CHECK(state["target_recomputes"] == 1);
  CHECK(state["alpha"] == 0.5);
  CHECK(state["bounds"] == json::array({-3.0, 3.0}));

  const auto paused = call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"pause"})");
  CHECK(paused.status == 200);
  CHECK(paused.body["paused"] == true);
  const int step = call(srv.port(), http::verb::get, base + "/state").body["step"];
  std::this_thread::sleep_for(std::chrono::milliseconds(300));
  CHECK(call(srv.port(), http::verb::get, base + "/state").body["step"] == step);

  const auto reset = call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"reset"})");
  CHECK(reset.body["scene_digest"] == reset.body["snapshot_digest"]);

  const auto re = call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"recompute_selection"})");
  CHECK(re.body["selected"].get<std::size_t>() ==
        edit::selection_size(re.body["primitives"].get<std::size_t>(), re.body["gamma"].get<double>()));

  CHECK(call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"explode"})").status == 400);
  CHECK(call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"resume"})").body["paused"] == false);
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  CHECK(call(srv.port(), http::verb::get, base + "/state").body["step"].get<int>() > step);

  const auto trace = call(srv.port(), http::verb::get, base + "/trace").body;
  REQUIRE(trace["entries"].is_array());
  CHECK_FALSE(trace["entries"].empty());

  CHECK(call(srv.port(), http::verb::delete_, base).status == 200);
  CHECK(call(srv.port(), http::verb::get, "/api/health").body["session"].is_null());
}

TEST_CASE("reset restores the loaded snapshot after editing") {
  Running srv(small_config());
  const std::string base = "/api/session/" + srv.create();
  call(srv.port(), http::verb::post, base + "/alpha", R"({"alpha":1.0})");
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  const auto before = call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"pause"})").body;
  CHECK(before["scene_digest"] != before["snapshot_digest"]);
  const auto after = call(srv.port(), http::verb::post, base + "/control", R"({"cmd":"reset"})").body;
  CHECK(after["scene_digest"] == after["snapshot_digest"]);
  CHECK(after["step"] == before["step"]);
}

TEST_CASE("stream delivers schema-valid frames with increasing steps") {
  Running srv(small_config());
  const std::string id = srv.create();
  Stream ws(srv.port(), id);

  int last = 0, frames = 0;
  bool valid = true, increasing = true;
  const auto end = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (frames < 30 && std::chrono::steady_clock::now() < end) {
    const json m = ws.next();
    if (m.is_discarded()) continue;
    REQUIRE(m.contains("type"));
    if (m["type"] == "event") {
      CHECK(m.contains("kind"));
      CHECK(m["step"].is_number_integer());
      continue;
    }
    if (m["type"] != "frame") continue;
    valid = valid && valid_frame(m);
    increasing = increasing && m["step"].get<int>() > last;
    last = m["step"];
    ++frames;
  }
  CHECK(frames == 30);
  CHECK(valid);
  CHECK(increasing);

  ws.send({{"type", "bogus"}});
  CHECK_FALSE(ws.until([](const json& m) { return m["type"] == "error"; }).is_discarded());

  ws.send({{"type", "set_alpha"}, {"alpha", 9.0}});
  const json rej = ws.until([](const json& m) { return m["type"] == "error" && m.contains("bounds"); });
  REQUIRE_FALSE(rej.is_discarded());
  CHECK(rej["bounds"] == json::array({-3.0, 3.0}));

  ws.send({{"type", "set_alpha"}, {"alpha", -0.5}, {"extra", "ignored"}});
  const json ack = ws.until([](const json& m) { return m["type"] == "event" && m["kind"] == "alpha"; });
  REQUIRE_FALSE(ack.is_discarded());
  CHECK(ack["alpha"] == -0.5);
  CHECK_FALSE(ws.until([](const json& m) { return m["type"] == "frame" && m["alpha"] == -0.5; }).is_discarded());

  ws.send({{"type", "control"}, {"cmd", "pause"}});
  const auto state = [&] { return call(srv.port(), http::verb::get, "/api/session/" + id + "/state").body; };
  for (int i = 0; i < 200 && state()["paused"] != true; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(25));
  REQUIRE(state()["paused"] == true);
  const int step = call(srv.port(), http::verb::get, "/api/session/" + id + "/state").body["step"];
  const json late = ws.until([&](const json& m) { return m["type"] == "frame" && m["step"].get<int>() > step; }, 1.0);
  CHECK(late.is_discarded());
}
