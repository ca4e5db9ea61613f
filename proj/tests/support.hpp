#pragma once

// Test plumbing: scripted TCP peers and child processes.

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>

#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "esdrl/worker.hpp"

extern char** environ;

namespace support {

using esdrl::json;
using esdrl::net::Channel;

// Connects to a coordinator, performs the hello/welcome exchange, then hands
// the channel to `script`.
inline std::jthread fake_worker(std::uint16_t port, std::function<void(Channel&, const json&)> script) {
  return std::jthread([port, script = std::move(script)] {
    try {
      Channel ch(esdrl::net::connect_with_retry("127.0.0.1", port, std::chrono::milliseconds(5000)));
      ch.send_line(esdrl::encode_line({{"type", "hello"}, {"protocol", esdrl::kProtocolVersion}, {"spec", nullptr}}));
      const json welcome = json::parse(ch.read_line(std::chrono::milliseconds(5000)));
      script(ch, welcome);
    } catch (const std::exception&) {
    }
  });
}

// Runs serve_worker on a background thread.
inline std::jthread tcp_worker(std::uint16_t port, esdrl::WorkerClientOptions options = {}) {
  return std::jthread([port, options] {
    try {
      esdrl::serve_worker("127.0.0.1", port, options);
    } catch (const std::exception&) {
    }
  });
}

class ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv) {
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    if (posix_spawn(&pid_, args[0], nullptr, nullptr, args.data(), environ) != 0) pid_ = -1;
  }
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  ~ChildProcess() {
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      wait();
    }
  }

  bool started() const { return pid_ > 0; }

  int wait() {
    if (pid_ <= 0) return -1;
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

 private:
  pid_t pid_ = -1;
};

}  // namespace support
