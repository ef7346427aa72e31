#include <fstream>
#include <sstream>

// Eigen first: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include "polypbench/review.hpp"

#include <httplib.h>

namespace polypbench {

using nlohmann::json;

struct ReviewServer::Impl {
  ReviewStore& store;
  httplib::Server server;
  explicit Impl(ReviewStore& s) : store(s) {}
};

namespace {

void send(httplib::Response& res, const ReviewReply& reply) {
  res.status = reply.status;
  res.set_content(reply.body.dump(), "application/json");
}

}  // namespace

ReviewServer::ReviewServer(ReviewStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& svr = impl_->server;
  ReviewStore& st = impl_->store;
  // httplib's default adds SO_REUSEPORT, which lets a second service bind a taken port.
  svr.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
  });
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  svr.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  svr.Get("/session/next", [&st](const httplib::Request& req, httplib::Response& res) {
    send(res, st.next(req.get_param_value("mode"), req.get_param_value("reviewer")));
  });
  svr.Post("/verdict", [&st](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send(res, {400, json{{"error", "request body is not valid JSON"}}});
      return;
    }
    send(res, st.record_verdict(body));
  });
  svr.Get("/stats", [&st](const httplib::Request& req, httplib::Response& res) {
    send(res, st.stats(req.get_param_value("mode")));
  });
  svr.Get("/manifest", [&st](const httplib::Request&, httplib::Response& res) { send(res, st.manifest()); });
  svr.Get(R"(/image/([0-9a-f]+))", [&st](const httplib::Request& req, httplib::Response& res) {
    const auto path = st.image(req.matches[1]);
    std::ifstream in;
    if (path) in.open(*path, std::ios::binary);
    if (!in.is_open()) {
      send(res, {404, json{{"error", "unknown image"}}});
      return;
    }
    std::ostringstream bytes;
    bytes << in.rdbuf();
    res.set_content(bytes.str(), "image/png");
  });
  svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send(res, {500, json{{"error", message}}});
  });
  svr.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) res.set_content(json{{"error", "not found"}}.dump(), "application/json");
  });
}

ReviewServer::~ReviewServer() = default;

int ReviewServer::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  if (port == 0) {
    const int bound = svr.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!svr.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
  return port;
}

void ReviewServer::listen() {
  if (!impl_->server.listen_after_bind()) throw Error("review service stopped unexpectedly");
}

void ReviewServer::stop() { impl_->server.stop(); }

}  // namespace polypbench
