#pragma once

// HTTP control plane and WebSocket frame feed for a Session.
//
//   GET  /codes          {"active_index", "active_code_id", "codes": [{"index", "id", "meta"}]}
//   POST /session/code   body {"code_id": str} or {"code_index": int}
//                        -> {"ok": true, "active_index", "active_code_id", "changed"}
//   GET  /stats          {"frames_out", "current_fps", "last_latency_ms", "pacing_fps",
//                         "active_code_id", "subscribers", "running"}
//   GET  /stream         WebSocket upgrade; one binary message per frame,
//                        FrameHeader (16 bytes) followed by the encoded image.
// Errors are {"error": str} with status 400 (malformed) or 404 (unknown code / path).

#include "thermosynth/service.hpp"

#include <memory>
#include <string>

namespace thermosynth {

class Server {
 public:
  /// Port 0 picks a free port; see port().
  Server(Session& session, const std::string& address = "127.0.0.1", unsigned short port = 0);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  [[nodiscard]] unsigned short port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Handles one control request; exposed for testing without sockets.
/// Returns (HTTP status, JSON body).
std::pair<int, std::string> handle_control(Session& session, const std::string& method, const std::string& target,
                                           const std::string& body);

}  // namespace thermosynth
