#include "thermosynth/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <nlohmann/json.hpp>

namespace thermosynth {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

std::pair<int, std::string> error_reply(int status, const std::string& what) {
  return {status, nlohmann::json{{"error", what}}.dump()};
}

nlohmann::json codes_json(const Session& s) {
  nlohmann::json list = nlohmann::json::array();
  const auto& codes = s.codes();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    list.push_back({{"index", i}, {"id", codes.entries[i].sample_id}, {"meta", codes.entries[i].meta}});
  }
  const std::size_t active = s.active_code();
  return {{"active_index", active}, {"active_code_id", codes.entries[active].sample_id}, {"codes", list}};
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, Session& session) : ws_(std::move(socket)), session_(session) {}
  ~WsSession() {
    if (sub_) session_.unsubscribe(sub_);
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.binary(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    std::weak_ptr<WsSession> weak = shared_from_this();
    auto executor = ws_.get_executor();
    // Runs on the synthesis thread: only hop onto the I/O thread.
    sub_ = session_.subscribe([weak, executor] {
      net::post(executor, [weak] {
        if (auto self = weak.lock()) self->pump();
      });
    });
    do_read();
  }

  void do_read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->drop();
      self->in_.consume(self->in_.size());
      self->do_read();
    });
  }

  void pump() {
    if (writing_ || !sub_) return;
    FramePtr f = sub_->take();
    if (!f) return;
    writing_ = true;
    out_ = f->message();
    ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->writing_ = false;
      if (ec) return self->drop();
      self->pump();
    });
  }

  void drop() {
    if (sub_) session_.unsubscribe(sub_);
    sub_.reset();
  }

  websocket::stream<beast::tcp_stream> ws_;
  Session& session_;
  std::shared_ptr<Subscriber> sub_;
  beast::flat_buffer in_;
  std::vector<std::uint8_t> out_;
  bool writing_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, Session& session) : stream_(std::move(socket)), session_(session) {}

  void run() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
  }

  void on_read(beast::error_code ec) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_) && target == "/stream") {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), session_)->run(std::move(req_));
      return;
    }
    const auto [status, body] = handle_control(session_, std::string(req_.method_string()), target, req_.body());
    auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(status), req_.version());
    res->set(http::field::content_type, "application/json");
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(req_.keep_alive());
    res->body() = body;
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code wec, std::size_t) {
      if (wec) return;
      if (!res->keep_alive()) {
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, wec);
        return;
      }
      self->do_read();
    });
  }

  beast::tcp_stream stream_;
  Session& session_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

std::pair<int, std::string> handle_control(Session& session, const std::string& method, const std::string& target,
                                           const std::string& body) {
  const std::string path = target.substr(0, target.find('?'));
  if (path == "/codes" && method == "GET") return {200, codes_json(session).dump()};
  if (path == "/stats" && method == "GET") {
    const SessionStats s = session.stats();
    return {200, nlohmann::json{{"frames_out", s.frames_out},
                                {"current_fps", s.current_fps},
                                {"last_latency_ms", s.last_latency_ms},
                                {"pacing_fps", session.pacing_fps()},
                                {"active_code_id", s.active_code_id},
                                {"subscribers", s.subscribers},
                                {"running", s.running}}
                     .dump()};
  }
  if (path == "/session/code" && method == "POST") {
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) return error_reply(400, "body must be a JSON object");
    bool changed = false;
    try {
      if (j.contains("code_id") && j["code_id"].is_string()) {
        changed = session.select_code(j["code_id"].get<std::string>());
      } else if (j.contains("code_index") && j["code_index"].is_number_unsigned()) {
        changed = session.select_code(j["code_index"].get<std::size_t>());
      } else {
        return error_reply(400, "expected \"code_id\" (string) or \"code_index\" (unsigned integer)");
      }
    } catch (const std::invalid_argument& e) {
      return error_reply(404, e.what());
    }
    const std::size_t active = session.active_code();
    return {200, nlohmann::json{{"ok", true},
                                {"active_index", active},
                                {"active_code_id", session.codes().entries[active].sample_id},
                                {"changed", changed}}
                     .dump()};
  }
  if (path == "/codes" || path == "/stats" || path == "/session/code") return error_reply(405, "method not allowed");
  return error_reply(404, "no route for " + method + " " + path);
}

struct Server::Impl {
  Session& session;
  net::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  tcp::endpoint endpoint;
  std::thread thread;

  Impl(Session& s, const std::string& address, unsigned short port)
      : session(s), endpoint(net::ip::make_address(address), port) {}

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpSession>(std::move(socket), session)->run();
      accept();
    });
  }
};

Server::Server(Session& session, const std::string& address, unsigned short port)
    : impl_(std::make_unique<Impl>(session, address, port)) {}

Server::~Server() { stop(); }

void Server::start() {
  if (impl_->thread.joinable()) throw std::logic_error("server already started");
  auto& a = impl_->acceptor;
  a.open(impl_->endpoint.protocol());
  a.set_option(net::socket_base::reuse_address(true));
  a.bind(impl_->endpoint);
  a.listen(net::socket_base::max_listen_connections);
  impl_->accept();
  impl_->thread = std::thread([this] { impl_->ioc.run(); });
}

void Server::stop() {
  if (!impl_->thread.joinable()) return;
  net::post(impl_->ioc, [this] {
    beast::error_code ec;
    impl_->acceptor.close(ec);
  });
  impl_->ioc.stop();
  impl_->thread.join();
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

}  // namespace thermosynth
