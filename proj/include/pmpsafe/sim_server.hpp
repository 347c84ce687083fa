#pragma once

/**
 * @file
 * @brief WebSocket and line-delimited TCP front end for a Session.
 *
 * Both protocols share one port. A connection whose first line starts with
 * "GET " is upgraded to a WebSocket; anything else is treated as newline
 * separated JSON. All socket work runs on a single io thread; a pump thread
 * moves telemetry from the session's bounded queue onto that thread, where each
 * connection keeps its own bounded outbox (oldest pending message dropped first).
 */

#include <atomic>
#include <cstring>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "sim_session.hpp"

namespace pmpsafe {

class SimServer
{
  using tcp = boost::asio::ip::tcp;

public:
  struct Options
  {
    std::string address{"127.0.0.1"};
    /// 0 picks a free port
    unsigned short port{0};
    std::size_t outbox_capacity{64};
    /// sent to every client right after it connects
    std::optional<nlohmann::json> level_set;
  };

  SimServer(Session & session, Options opts) : session_(session), opts_(std::move(opts)), acceptor_(ioc_)
  {
    const tcp::endpoint ep(boost::asio::ip::make_address(opts_.address), opts_.port);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
  }

  ~SimServer() { stop(); }

  SimServer(const SimServer &) = delete;
  SimServer & operator=(const SimServer &) = delete;

  unsigned short port() const { return port_; }

  void start()
  {
    if (running_.exchange(true)) return;
    feed_ = session_.subscribe();
    accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    pump_ = std::thread([this] {
      while (running_) {
        auto msg = feed_->pop(std::chrono::milliseconds(20));
        if (!msg) continue;
        boost::asio::post(ioc_, [this, m = std::move(*msg)] { fan_out(m); });
      }
    });
  }

  void stop()
  {
    if (!running_.exchange(false)) return;
    if (feed_) feed_->close();
    if (pump_.joinable()) pump_.join();
    boost::asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      for (auto & w : conns_) {
        if (auto c = w.lock()) c->shutdown();
      }
    });
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

  std::size_t connections() const { return live_.load(); }

private:
  struct Conn : std::enable_shared_from_this<Conn>
  {
    virtual ~Conn() = default;
    virtual void deliver(const std::string & msg) = 0;
    virtual void shutdown() = 0;
  };

  // Outbox shared by both protocols: at most one write in flight.
  template<class Derived>
  struct Outbox : Conn
  {
    std::deque<std::string> out;
    bool writing{false};
    std::size_t cap{64};

    void deliver(const std::string & msg) override
    {
      if (out.size() >= cap) {
        // keep the message currently being written
        out.erase(out.begin() + (writing ? 1 : 0));
      }
      out.push_back(msg);
      if (!writing) static_cast<Derived *>(this)->write_next();
    }
  };

  struct LineConn : Outbox<LineConn>
  {
    tcp::socket sock;
    std::string inbuf;
    SimServer & srv;

    LineConn(tcp::socket s, std::string pre, SimServer & server) : sock(std::move(s)), inbuf(std::move(pre)), srv(server) {}

    void start() { read(); }

    void read()
    {
      auto self = std::static_pointer_cast<LineConn>(shared_from_this());
      boost::asio::async_read_until(sock, boost::asio::dynamic_buffer(inbuf), '\n',
                                    [self](boost::system::error_code ec, std::size_t n) {
                                      if (ec) return self->shutdown();
                                      std::string line = self->inbuf.substr(0, n);
                                      self->inbuf.erase(0, n);
                                      while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
                                      if (!line.empty()) {
                                        if (auto err = self->srv.session_.handle_message(line)) self->deliver(err->dump());
                                      }
                                      self->read();
                                    });
    }

    void write_next()
    {
      if (out.empty()) {
        writing = false;
        return;
      }
      writing = true;
      out.front().push_back('\n');
      auto self = std::static_pointer_cast<LineConn>(shared_from_this());
      boost::asio::async_write(sock, boost::asio::buffer(out.front()), [self](boost::system::error_code ec, std::size_t) {
        if (ec) return self->shutdown();
        self->out.pop_front();
        self->write_next();
      });
    }

    void shutdown() override
    {
      boost::system::error_code ec;
      sock.shutdown(tcp::socket::shutdown_both, ec);
      sock.close(ec);
    }
  };

  struct WsConn : Outbox<WsConn>
  {
    boost::beast::websocket::stream<boost::beast::tcp_stream> ws;
    boost::beast::flat_buffer buf;
    boost::beast::http::request<boost::beast::http::string_body> req;
    SimServer & srv;
    bool open{false};

    WsConn(tcp::socket s, const std::string & pre, SimServer & server) : ws(std::move(s)), srv(server)
    {
      auto mb = buf.prepare(pre.size());
      std::memcpy(mb.data(), pre.data(), pre.size());
      buf.commit(pre.size());
    }

    void start()
    {
      auto self = std::static_pointer_cast<WsConn>(shared_from_this());
      boost::beast::http::async_read(ws.next_layer(), buf, req, [self](boost::system::error_code ec, std::size_t) {
        if (ec) return self->shutdown();
        self->ws.async_accept(self->req, [self](boost::system::error_code ec2) {
          if (ec2) return self->shutdown();
          self->open = true;
          self->buf.consume(self->buf.size());
          if (!self->out.empty() && !self->writing) self->write_next();
          self->read();
        });
      });
    }

    void read()
    {
      auto self = std::static_pointer_cast<WsConn>(shared_from_this());
      ws.async_read(buf, [self](boost::system::error_code ec, std::size_t) {
        if (ec) return self->shutdown();
        const std::string text = boost::beast::buffers_to_string(self->buf.data());
        self->buf.consume(self->buf.size());
        if (auto err = self->srv.session_.handle_message(text)) self->deliver(err->dump());
        self->read();
      });
    }

    void write_next()
    {
      if (!open) return;  // flushed once the handshake completes
      if (out.empty()) {
        writing = false;
        return;
      }
      writing = true;
      ws.text(true);
      auto self = std::static_pointer_cast<WsConn>(shared_from_this());
      ws.async_write(boost::asio::buffer(out.front()), [self](boost::system::error_code ec, std::size_t) {
        if (ec) return self->shutdown();
        self->out.pop_front();
        self->write_next();
      });
    }

    void shutdown() override
    {
      open = false;
      boost::system::error_code ec;
      boost::beast::get_lowest_layer(ws).socket().shutdown(tcp::socket::shutdown_both, ec);
      boost::beast::get_lowest_layer(ws).socket().close(ec);
    }
  };

  void accept()
  {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket sock) {
      if (ec) return;
      detect(std::move(sock));
      accept();
    });
  }

  // A WebSocket client speaks first ("GET ..."); a line client may wait for the
  // greeting. Whatever has not identified itself after a short grace period is
  // treated as a line client.
  void detect(tcp::socket sock)
  {
    auto s = std::make_shared<tcp::socket>(std::move(sock));
    auto pre = std::make_shared<std::string>();
    auto timer = std::make_shared<boost::asio::steady_timer>(ioc_, std::chrono::milliseconds(100));
    auto decided = std::make_shared<bool>(false);
    timer->async_wait([s, decided](boost::system::error_code ec) {
      if (!ec && !*decided) s->cancel();
    });
    boost::asio::async_read_until(
        *s, boost::asio::dynamic_buffer(*pre), '\n', [this, s, pre, timer, decided](boost::system::error_code ec, std::size_t) {
          *decided = true;
          timer->cancel();
          if (ec && ec != boost::asio::error::operation_aborted) return;
          std::shared_ptr<Conn> c;
          if (pre->rfind("GET ", 0) == 0) {
            auto w = std::make_shared<WsConn>(std::move(*s), *pre, *this);
            w->cap = opts_.outbox_capacity;
            if (opts_.level_set) w->out.push_back(opts_.level_set->dump());
            w->start();
            c = w;
          } else {
            auto l = std::make_shared<LineConn>(std::move(*s), std::move(*pre), *this);
            l->cap = opts_.outbox_capacity;
            if (opts_.level_set) l->deliver(opts_.level_set->dump());
            l->start();
            c = l;
          }
          register_conn(c);
        });
  }

  void register_conn(const std::shared_ptr<Conn> & c)
  {
    std::erase_if(conns_, [](const std::weak_ptr<Conn> & w) { return w.expired(); });
    conns_.push_back(c);
    live_.store(conns_.size());
  }

  void fan_out(const std::string & msg)
  {
    std::erase_if(conns_, [](const std::weak_ptr<Conn> & w) { return w.expired(); });
    live_.store(conns_.size());
    for (auto & w : conns_) {
      if (auto c = w.lock()) c->deliver(msg);
    }
  }

  Session & session_;
  Options opts_;
  boost::asio::io_context ioc_;
  tcp::acceptor acceptor_;
  unsigned short port_{0};
  std::vector<std::weak_ptr<Conn>> conns_;
  std::atomic<std::size_t> live_{0};
  std::shared_ptr<TelemetryQueue> feed_;
  std::atomic<bool> running_{false};
  std::thread io_thread_;
  std::thread pump_;
};

}  // namespace pmpsafe
