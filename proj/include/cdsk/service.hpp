#pragma once

#include "cdsk/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <variant>

namespace cdsk {

// Server -> client messages are binary websocket frames:
//   u32 LE header length | JSON header | array payloads back to back.
// The header carries "type", "version" and "arrays": [{name, count, dtype}],
// dtype one of f32, f64, u32, in payload order. Client -> server messages are
// JSON text: set_params {p}, set_force {f}, reset {}.

inline constexpr int kProtocolVersion = 1;

struct WireArray {
  std::string name;
  std::string dtype;  // f32 | f64 | u32
  std::vector<double> values;
};

struct WireMessage {
  nlohmann::json header;
  std::vector<WireArray> arrays;

  const WireArray& array(const std::string& name) const;
};

std::string encode_message(const WireMessage& msg);
WireMessage decode_message(const std::string& bytes);

struct SetParams { VectorXd p; };
struct SetForce { VectorXd f; };
struct Reset {};
using ClientCommand = std::variant<SetParams, SetForce, Reset>;

/// Throws Error on malformed JSON, unknown types or wrong array lengths.
ClientCommand parse_client_message(const std::string& text, Index p_dim, Index z_dim);

WireMessage make_setup_message(const Model& model, const std::string& dtype = "f32");
WireMessage make_frame_message(std::uint64_t step, const VectorXd& z, const VectorXd& p,
                               const std::string& dtype = "f32");
WireMessage make_notice_message(const std::string& type, const std::string& text);

struct ServeOptions {
  unsigned short port = 8765;      // 0 picks a free port
  std::string address = "127.0.0.1";
  bool lockstep = false;           // one step per set_params, queued in order
  std::string dtype = "f32";       // payload precision for frames and setup
};

/// Runs the simulation loop on its own thread and the websocket server on
/// another. Frames are broadcast to every connected client.
class SessionServer {
 public:
  SessionServer(Model model, SolverConfig config, ServeOptions options);
  ~SessionServer();

  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds and starts both threads; returns the bound port.
  unsigned short start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  std::uint64_t steps_taken() const;
  std::uint64_t overruns() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cdsk
