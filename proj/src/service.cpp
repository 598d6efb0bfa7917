#include "cdsk/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <bit>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

namespace cdsk {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "u32") return 4;
  if (dtype == "f64") return 8;
  throw Error("wire: unknown dtype '" + dtype + "'");
}

void put_le(std::string& out, std::uint64_t v, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, std::size_t len) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < len; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

VectorXd json_vector(const json& j, const char* key, Index expected) {
  if (!j.contains(key) || !j.at(key).is_array()) throw Error(std::string("'") + key + "' must be an array");
  const json& a = j.at(key);
  if (static_cast<Index>(a.size()) != expected)
    throw Error(std::string("'") + key + "' has " + std::to_string(a.size()) + " entries, expected " +
                std::to_string(expected));
  VectorXd v(expected);
  for (Index i = 0; i < expected; ++i) {
    const json& e = a[static_cast<std::size_t>(i)];
    if (!e.is_number()) throw Error(std::string("'") + key + "' must contain numbers");
    v(i) = e.get<double>();
  }
  if (!v.allFinite()) throw Error(std::string("'") + key + "' must be finite");
  return v;
}

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

const WireArray& WireMessage::array(const std::string& name) const {
  for (const WireArray& a : arrays)
    if (a.name == name) return a;
  throw Error("wire: message has no array '" + name + "'");
}

std::string encode_message(const WireMessage& msg) {
  json header = msg.header;
  header["arrays"] = json::array();
  for (const WireArray& a : msg.arrays)
    header["arrays"].push_back({{"name", a.name}, {"count", a.values.size()}, {"dtype", a.dtype}});
  const std::string text = header.dump();
  std::string out;
  put_le(out, text.size(), 4);
  out += text;
  for (const WireArray& a : msg.arrays) {
    const std::size_t size = dtype_size(a.dtype);
    out.reserve(out.size() + size * a.values.size());
    for (double v : a.values) {
      if (a.dtype == "f32")
        put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
      else if (a.dtype == "f64")
        put_le(out, std::bit_cast<std::uint64_t>(v), 8);
      else
        put_le(out, static_cast<std::uint32_t>(v), 4);
    }
  }
  return out;
}

WireMessage decode_message(const std::string& bytes) {
  if (bytes.size() < 4) throw Error("wire: message too short");
  const std::size_t len = get_le(bytes, 0, 4);
  if (4 + len > bytes.size()) throw Error("wire: header length exceeds message");
  WireMessage msg;
  try {
    msg.header = json::parse(bytes.substr(4, len));
  } catch (const json::exception& e) {
    throw Error(std::string("wire: bad header: ") + e.what());
  }
  std::size_t pos = 4 + len;
  for (const json& d : msg.header.value("arrays", json::array())) {
    WireArray a{d.at("name").get<std::string>(), d.at("dtype").get<std::string>(), {}};
    const auto count = d.at("count").get<std::size_t>();
    const std::size_t size = dtype_size(a.dtype);
    if (pos + size * count > bytes.size()) throw Error("wire: payload shorter than declared arrays");
    a.values.resize(count);
    for (std::size_t i = 0; i < count; ++i, pos += size) {
      const std::uint64_t raw = get_le(bytes, pos, size);
      if (a.dtype == "f32")
        a.values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(raw));
      else if (a.dtype == "f64")
        a.values[i] = std::bit_cast<double>(raw);
      else
        a.values[i] = static_cast<double>(raw);
    }
    msg.arrays.push_back(std::move(a));
  }
  if (pos != bytes.size()) throw Error("wire: trailing payload bytes");
  return msg;
}

ClientCommand parse_client_message(const std::string& text, Index p_dim, Index z_dim) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    throw Error("message must be an object with a string 'type'");
  const std::string type = j.at("type").get<std::string>();
  if (type == "set_params") return SetParams{json_vector(j, "p", p_dim)};
  if (type == "set_force") return SetForce{json_vector(j, "f", z_dim)};
  if (type == "reset") return Reset{};
  throw Error("unknown message type '" + type + "'");
}

WireMessage make_setup_message(const Model& model, const std::string& dtype) {
  const TetMesh& mesh = model.mesh;
  const std::vector<Index> surf = surface_vertices(mesh);
  std::vector<Index> local(static_cast<std::size_t>(mesh.num_vertices()), -1);
  for (std::size_t i = 0; i < surf.size(); ++i) local[static_cast<std::size_t>(surf[i])] = static_cast<Index>(i);

  const Index m = model.subspace.num_modes(), b = model.rig.num_bones();
  WireArray ids{"surface_vertices", "u32", {}}, tris{"surface_triangles", "u32", {}};
  WireArray rest{"rest_positions", dtype, {}}, w{"secondary_weights", dtype, {}}, rw{"rig_weights", dtype, {}};
  for (Index v : surf) {
    ids.values.push_back(static_cast<double>(v));
    for (int a = 0; a < 3; ++a) rest.values.push_back(mesh.vertices(v, a));
    for (Index k = 0; k < m; ++k) w.values.push_back(model.subspace.W(v, k));
    for (Index k = 0; k < b; ++k) rw.values.push_back(model.rig.weights(v, k));
  }
  for (Index f = 0; f < mesh.surface_tris.rows(); ++f)
    for (int c = 0; c < 3; ++c) tris.values.push_back(static_cast<double>(local[static_cast<std::size_t>(mesh.surface_tris(f, c))]));

  WireMessage msg;
  msg.header = {{"type", "setup"},
                {"version", kProtocolVersion},
                {"n", mesh.num_vertices()},
                {"m", m},
                {"p_dim", model.rig.p_dim()},
                {"z_dim", 12 * m},
                {"num_bones", b},
                {"num_surface_vertices", surf.size()}};
  msg.arrays = {ids, tris, rest, w, rw};
  return msg;
}

WireMessage make_frame_message(std::uint64_t step, const VectorXd& z, const VectorXd& p, const std::string& dtype) {
  WireMessage msg;
  msg.header = {{"type", "frame"}, {"version", kProtocolVersion}, {"t", step}};
  msg.arrays = {{"z", dtype, to_std(z)}, {"p", dtype, to_std(p)}};
  return msg;
}

WireMessage make_notice_message(const std::string& type, const std::string& text) {
  WireMessage msg;
  msg.header = {{"type", type}, {"version", kProtocolVersion}, {"message", text}};
  return msg;
}

namespace {

using Bytes = std::shared_ptr<const std::string>;

class Session;

struct Hub {
  virtual ~Hub() = default;
  virtual void join(const std::shared_ptr<Session>& s) = 0;
  virtual void leave(const std::shared_ptr<Session>& s) = 0;
  virtual void on_text(const std::shared_ptr<Session>& s, const std::string& text) = 0;
  virtual Bytes setup() const = 0;
};

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->hub_.join(self);
      self->send(self->hub_.setup());
      self->read();
    });
  }

  // Safe to call from any thread.
  void send(Bytes msg) {
    net::post(ws_.get_executor(), [self = shared_from_this(), msg = std::move(msg)] {
      self->queue_.push_back(msg);
      if (self->queue_.size() == 1) self->write();
    });
  }

  void close() {
    net::post(ws_.get_executor(), [self = shared_from_this()] {
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().close(ec);
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->hub_.leave(self);
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->hub_.on_text(self, text);
      self->read();
    });
  }

  void write() {
    ws_.binary(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->queue_.clear();
        self->hub_.leave(self);
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->write();
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  std::deque<Bytes> queue_;
};

Bytes encode_shared(const WireMessage& msg) { return std::make_shared<const std::string>(encode_message(msg)); }

}  // namespace

struct SessionServer::Impl final : Hub {
  Model model;
  SolverConfig config;
  ServeOptions options;
  ReducedOperators red;
  Bytes setup_bytes;

  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::thread io_thread, sim_thread;

  std::mutex sessions_mu;
  std::set<std::shared_ptr<Session>> sessions;

  // Mailbox between network and simulation. Real-time mode keeps only the
  // newest p; lockstep mode keeps every command in order.
  std::mutex mail_mu;
  std::condition_variable mail_cv;
  std::optional<VectorXd> latest_p, latest_f;
  bool reset_pending = false;
  std::deque<ClientCommand> commands;
  bool stopping = false;

  std::atomic<std::uint64_t> steps{0}, overrun_count{0};
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  Impl(Model m, SolverConfig c, ServeOptions o) : model(std::move(m)), config(c), options(std::move(o)) {
    config.validate();
    dtype_size(options.dtype);
    red = reduce_model(model, config);
    setup_bytes = encode_shared(make_setup_message(model, options.dtype));
  }

  void join(const std::shared_ptr<Session>& s) override {
    std::lock_guard lk(sessions_mu);
    sessions.insert(s);
  }
  void leave(const std::shared_ptr<Session>& s) override {
    std::lock_guard lk(sessions_mu);
    sessions.erase(s);
  }
  Bytes setup() const override { return setup_bytes; }

  void on_text(const std::shared_ptr<Session>& s, const std::string& text) override {
    ClientCommand cmd;
    try {
      cmd = parse_client_message(text, red.p_dim(), red.dim());
    } catch (const Error& e) {
      s->send(encode_shared(make_notice_message("error", e.what())));
      return;
    }
    {
      std::lock_guard lk(mail_mu);
      if (options.lockstep) {
        commands.push_back(std::move(cmd));
      } else if (auto* sp = std::get_if<SetParams>(&cmd)) {
        latest_p = std::move(sp->p);
      } else if (auto* sf = std::get_if<SetForce>(&cmd)) {
        latest_f = std::move(sf->f);
      } else {
        reset_pending = true;
        latest_p.reset();
        latest_f.reset();
      }
    }
    mail_cv.notify_all();
  }

  void broadcast(const Bytes& msg) {
    std::vector<std::shared_ptr<Session>> targets;
    {
      std::lock_guard lk(sessions_mu);
      targets.assign(sessions.begin(), sessions.end());
    }
    for (auto& s : targets) s->send(msg);
  }

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<Session>(std::move(socket), *this)->run();
      accept();
    });
  }

  // One step to target p; resets on divergence.
  void step(SimState& state, const VectorXd& p) {
    bool diverged = false;
    try {
      simulation_step(state, p, red, config);
      diverged = !state.z.allFinite();
    } catch (const Error&) {
      diverged = true;
    }
    if (diverged) {
      state = SimState::rest(red);
      broadcast(encode_shared(make_notice_message("warning", "simulation diverged; state reset to rest")));
    }
    const std::uint64_t t = ++steps;
    broadcast(encode_shared(make_frame_message(t, state.z, state.p, options.dtype)));
  }

  void run_lockstep() {
    SimState state = SimState::rest(red);
    for (;;) {
      ClientCommand cmd;
      {
        std::unique_lock lk(mail_mu);
        mail_cv.wait(lk, [&] { return stopping || !commands.empty(); });
        if (stopping) return;
        cmd = std::move(commands.front());
        commands.pop_front();
      }
      if (auto* sp = std::get_if<SetParams>(&cmd))
        step(state, sp->p);
      else if (auto* sf = std::get_if<SetForce>(&cmd))
        state.f_ext = sf->f;
      else
        state = SimState::rest(red);
    }
  }

  void run_realtime() {
    using clock = std::chrono::steady_clock;
    SimState state = SimState::rest(red);
    VectorXd target = state.p;
    const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(config.h));
    auto deadline = clock::now();
    for (;;) {
      {
        std::lock_guard lk(mail_mu);
        if (stopping) return;
        if (reset_pending) {
          state = SimState::rest(red);
          target = state.p;
          reset_pending = false;
        }
        if (latest_p) target = *latest_p;
        if (latest_f) {
          state.f_ext = *latest_f;
          latest_f.reset();
        }
      }
      step(state, target);
      deadline += period;
      const auto now = clock::now();
      if (now > deadline) {
        ++overrun_count;
        std::clog << "serve: step " << steps.load() << " overran its deadline by "
                  << std::chrono::duration<double, std::milli>(now - deadline).count() << " ms\n";
        deadline = now;
      } else {
        std::unique_lock lk(mail_mu);
        mail_cv.wait_until(lk, deadline, [&] { return stopping; });
      }
    }
  }
};

SessionServer::SessionServer(Model model, SolverConfig config, ServeOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), config, std::move(options))) {}

SessionServer::~SessionServer() { stop(); }

unsigned short SessionServer::start() {
  Impl& s = *impl_;
  const tcp::endpoint ep(net::ip::make_address(s.options.address), s.options.port);
  s.acceptor.open(ep.protocol());
  s.acceptor.set_option(net::socket_base::reuse_address(true));
  s.acceptor.bind(ep);
  s.acceptor.listen();
  const unsigned short port = s.acceptor.local_endpoint().port();
  s.accept();
  s.io_thread = std::thread([&s] { s.ioc.run(); });
  s.sim_thread = std::thread([&s] { s.options.lockstep ? s.run_lockstep() : s.run_realtime(); });
  return port;
}

void SessionServer::stop() {
  if (!impl_) return;
  Impl& s = *impl_;
  {
    std::lock_guard lk(s.mail_mu);
    s.stopping = true;
  }
  s.mail_cv.notify_all();
  if (s.sim_thread.joinable()) s.sim_thread.join();
  {
    std::lock_guard lk(s.sessions_mu);
    for (auto& session : s.sessions) session->close();
    s.sessions.clear();
  }
  net::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
  });
  s.ioc.stop();
  if (s.io_thread.joinable()) s.io_thread.join();
  {
    std::lock_guard lk(s.stop_mu);
    s.stopped = true;
  }
  s.stop_cv.notify_all();
}

void SessionServer::wait() {
  std::unique_lock lk(impl_->stop_mu);
  impl_->stop_cv.wait(lk, [&] { return impl_->stopped; });
}

std::uint64_t SessionServer::steps_taken() const { return impl_->steps.load(); }
std::uint64_t SessionServer::overruns() const { return impl_->overrun_count.load(); }

}  // namespace cdsk
