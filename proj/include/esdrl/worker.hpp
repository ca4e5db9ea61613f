#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "esdrl/checkpoint.hpp"
#include "esdrl/es.hpp"
#include "esdrl/net.hpp"
#include "esdrl/protocol.hpp"

namespace esdrl {

using Millis = std::chrono::milliseconds;

// Coordinator-side handle to one worker. Each handle is driven by one thread
// at a time.
class WorkerEndpoint {
 public:
  virtual ~WorkerEndpoint() = default;
  virtual std::string name() const = 0;
  virtual ParamsAck load_params(const Mlp& theta, std::uint64_t version, Millis timeout) = 0;
  virtual std::vector<ResultMessage> run(const TaskMessage& task, Millis timeout) = 0;
  // Checksum of derive_noise(seed, dim) computed on the worker.
  virtual std::uint64_t noise_checksum(std::uint64_t seed, std::size_t dim, Millis timeout) = 0;
  virtual void close() {}
};

// Worker living in the coordinator's process: same messages, no serialization.
// Timeouts cannot preempt local work and are ignored.
class InProcessEndpoint : public WorkerEndpoint {
 public:
  InProcessEndpoint(std::string name, MlpSpec spec, EnvConfig env)
      : name_(std::move(name)), worker_(std::move(spec), env) {}

  std::string name() const override { return name_; }

  ParamsAck load_params(const Mlp& theta, std::uint64_t version, Millis) override {
    return worker_.load(theta, version);
  }

  std::vector<ResultMessage> run(const TaskMessage& task, Millis) override { return worker_.evaluate(task); }

  std::uint64_t noise_checksum(std::uint64_t seed, std::size_t dim, Millis) override {
    return checksum(derive_noise(seed, dim));
  }

 private:
  std::string name_;
  RolloutWorker worker_;
};

// Worker on the other end of a TCP connection.
class RemoteEndpoint : public WorkerEndpoint {
 public:
  RemoteEndpoint(std::string name, net::Channel channel) : name_(std::move(name)), channel_(std::move(channel)) {}

  std::string name() const override { return name_; }

  ParamsAck load_params(const Mlp& theta, std::uint64_t version, Millis timeout) override {
    payload_ = encode_checkpoint(theta);
    version_ = version;
    expected_checksum_ = checksum(theta.parameters());
    return send_params(timeout);
  }

  std::vector<ResultMessage> run(const TaskMessage& task, Millis timeout) override {
    for (int attempt = 0;; ++attempt) {
      channel_.send_line(encode_line(to_json(task)));
      std::vector<ResultMessage> results;
      bool stale = false;
      while (results.size() < task.perturbations.size()) {
        const json msg = json::parse(channel_.read_line(timeout));
        const std::string type = msg.at("type").get<std::string>();
        if (type == "result") {
          results.push_back(result_from_json(msg));
        } else if (type == "error" && msg.value("code", "") == "stale_parameters") {
          stale = true;
          break;
        } else if (type == "error") {
          throw ProtocolError(name_ + ": " + msg.value("message", "worker error"));
        }
      }
      if (!stale) return results;
      if (attempt > 0 || payload_.empty()) throw ProtocolError(name_ + ": worker keeps reporting stale parameters");
      send_params(timeout);
    }
  }

  std::uint64_t noise_checksum(std::uint64_t seed, std::size_t dim, Millis timeout) override {
    channel_.send_line(encode_line({{"type", "noise_probe"}, {"seed", seed}, {"dim", dim}}));
    const json msg = expect(channel_.read_line(timeout), "noise_digest");
    return msg.at("checksum").get<std::uint64_t>();
  }

  void close() override {
    try {
      channel_.send_line(encode_line({{"type", "shutdown"}}));
    } catch (const std::exception&) {
    }
    channel_.close();
  }

 private:
  ParamsAck send_params(Millis timeout) {
    channel_.send_line(encode_line({{"type", "params"}, {"version", version_}, {"bytes", payload_.size()}}));
    channel_.send_bytes(payload_);
    const json msg = expect(channel_.read_line(timeout), "params_ack");
    ParamsAck ack{msg.at("version").get<std::uint64_t>(), msg.at("checksum").get<std::uint64_t>()};
    if (ack.version != version_ || ack.checksum != expected_checksum_)
      throw ProtocolError(name_ + ": parameter acknowledgement does not match the broadcast");
    return ack;
  }

  json expect(const std::string& line, const std::string& type) const {
    json msg = json::parse(line);
    const std::string got = msg.at("type").get<std::string>();
    if (got == "error") throw ProtocolError(name_ + ": " + msg.value("message", "worker error"));
    if (got != type) throw ProtocolError(name_ + ": expected '" + type + "', got '" + got + "'");
    return msg;
  }

  std::string name_;
  net::Channel channel_;
  std::vector<std::uint8_t> payload_;
  std::uint64_t version_ = 0;
  std::uint64_t expected_checksum_ = 0;
};

// Accepts remote workers and performs the handshake:
//   worker -> {"type":"hello","protocol":1,"spec":<spec or null>}
//   coordinator -> {"type":"welcome","protocol":1,"spec":...,"env":...}
class WorkerListener {
 public:
  WorkerListener(const std::string& host, std::uint16_t port, MlpSpec spec, EnvConfig env)
      : listener_(host, port), spec_(std::move(spec)), env_(env) {}

  std::uint16_t port() const { return listener_.port(); }

  // Returns nullopt if nobody connected in time. Handshake failures throw.
  std::unique_ptr<RemoteEndpoint> accept(Millis timeout) {
    auto sock = listener_.accept(timeout);
    if (!sock) return nullptr;
    net::Channel channel(std::move(*sock));
    const json hello = json::parse(channel.read_line(timeout));
    if (hello.value("type", "") != "hello") throw ProtocolError("expected hello from worker");
    const int protocol = hello.value("protocol", -1);
    auto reject = [&](const std::string& why) {
      channel.send_line(encode_line({{"type", "error"}, {"code", "handshake"}, {"message", why}}));
      throw ProtocolError("rejected worker: " + why);
    };
    if (protocol != kProtocolVersion)
      reject("protocol version " + std::to_string(protocol) + " != " + std::to_string(kProtocolVersion));
    if (hello.contains("spec") && !hello.at("spec").is_null() && !(spec_from_json(hello.at("spec")) == spec_))
      reject("worker policy shape " + describe(spec_from_json(hello.at("spec"))) + " != " + describe(spec_));
    channel.send_line(encode_line(
        {{"type", "welcome"}, {"protocol", kProtocolVersion}, {"spec", to_json(spec_)}, {"env", to_json(env_)}}));
    return std::make_unique<RemoteEndpoint>("remote-" + std::to_string(++accepted_), std::move(channel));
  }

 private:
  net::Listener listener_;
  MlpSpec spec_;
  EnvConfig env_;
  int accepted_ = 0;
};

struct WorkerClientOptions {
  // Optional shape the worker insists on; the handshake fails on mismatch.
  std::optional<MlpSpec> expected_spec;
  Millis connect_deadline{10'000};
  // Drop the connection after this many tasks (0 = serve until shutdown).
  std::size_t max_tasks = 0;
};

// Remote worker main loop. Returns the number of tasks served.
inline std::size_t serve_worker(const std::string& host, std::uint16_t port, const WorkerClientOptions& options = {}) {
  net::Channel channel(net::connect_with_retry(host, port, options.connect_deadline));
  channel.send_line(encode_line({{"type", "hello"},
                                 {"protocol", kProtocolVersion},
                                 {"spec", options.expected_spec ? to_json(*options.expected_spec) : json(nullptr)}}));
  const json welcome = json::parse(channel.read_line(Millis(-1)));
  if (welcome.value("type", "") != "welcome")
    throw ProtocolError("handshake refused: " + welcome.value("message", std::string("no welcome")));
  if (welcome.value("protocol", -1) != kProtocolVersion) throw ProtocolError("coordinator speaks another protocol");
  const MlpSpec spec = spec_from_json(welcome.at("spec"));
  if (options.expected_spec && !(*options.expected_spec == spec))
    throw ProtocolError("coordinator policy shape " + describe(spec) + " != expected " +
                        describe(*options.expected_spec));
  RolloutWorker worker(spec, env_from_json(welcome.at("env")));

  std::size_t served = 0;
  for (;;) {
    std::string line;
    try {
      line = channel.read_line(Millis(-1));
    } catch (const net::Closed&) {
      return served;
    }
    const json msg = json::parse(line);
    const std::string type = msg.at("type").get<std::string>();
    if (type == "shutdown") return served;
    if (type == "params") {
      const auto bytes = channel.read_bytes(msg.at("bytes").get<std::size_t>(), Millis(-1));
      const ParamsAck ack = worker.load(decode_checkpoint(bytes), msg.at("version").get<std::uint64_t>());
      channel.send_line(encode_line({{"type", "params_ack"}, {"version", ack.version}, {"checksum", ack.checksum}}));
    } else if (type == "task") {
      if (options.max_tasks > 0 && served >= options.max_tasks) {
        channel.close();
        return served;
      }
      try {
        for (const auto& r : worker.evaluate(task_from_json(msg))) channel.send_line(encode_result(r));
      } catch (const StaleParameters& e) {
        channel.send_line(encode_line(stale_error_json(e)));
      }
      ++served;
    } else if (type == "noise_probe") {
      const auto seed = msg.at("seed").get<std::uint64_t>();
      const auto dim = msg.at("dim").get<std::size_t>();
      channel.send_line(encode_line(
          {{"type", "noise_digest"}, {"seed", seed}, {"dim", dim}, {"checksum", checksum(derive_noise(seed, dim))}}));
    }
  }
}

class GenerationAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CoordinatorOptions {
  Millis min_task_timeout{5'000};
  double straggler_factor = 10.0;
  Millis broadcast_timeout{30'000};
};

struct BroadcastReport {
  std::size_t acknowledged = 0;
  std::vector<std::string> dropped;
};

// Fans one generation's perturbations out over the worker pool and joins the
// results by population index.
class Coordinator {
 public:
  explicit Coordinator(CoordinatorOptions options = {}) : options_(options) {}

  void add_worker(std::unique_ptr<WorkerEndpoint> worker) {
    std::lock_guard lk(mutex_);
    workers_.push_back({std::move(worker), true});
  }

  std::size_t live_workers() const {
    std::lock_guard lk(mutex_);
    return static_cast<std::size_t>(
        std::count_if(workers_.begin(), workers_.end(), [](const Slot& s) { return s.alive; }));
  }

  std::uint64_t version() const { return version_; }
  const std::vector<std::string>& events() const { return events_; }

  // Send theta to every live worker; workers that fail are dropped.
  BroadcastReport broadcast(const Mlp& theta, std::uint64_t version) {
    BroadcastReport report;
    version_ = version;
    const std::uint64_t expected = checksum(theta.parameters());
    for (auto& slot : workers_) {
      if (!slot.alive) continue;
      try {
        const ParamsAck ack = slot.endpoint->load_params(theta, version, options_.broadcast_timeout);
        if (ack.version != version || ack.checksum != expected) throw ProtocolError("acknowledgement mismatch");
        ++report.acknowledged;
      } catch (const std::exception& e) {
        mark_dead(slot, std::string("broadcast failed: ") + e.what());
        report.dropped.push_back(slot.endpoint->name());
      }
    }
    return report;
  }

  // Raw rewards (and env steps) in population order.
  std::vector<EvalOutcome> run_generation(std::uint64_t generation, std::span<const Perturbation> population,
                                          double sigma,
                                          const std::function<std::vector<std::uint64_t>(std::size_t)>& seeds_for) {
    const std::size_t n = population.size();
    std::vector<std::optional<ResultMessage>> results(n);
    std::deque<std::size_t> pending;
    for (std::size_t i = 0; i < n; ++i) pending.push_back(i);
    std::size_t done = 0;
    std::vector<double> durations;
    const Millis timeout = task_timeout();

    std::mutex m;
    std::condition_variable cv;
    auto drive = [&](Slot& slot) {
      std::unique_lock lk(m);
      for (;;) {
        cv.wait(lk, [&] { return done == n || !pending.empty(); });
        if (done == n) return;
        const std::size_t idx = pending.front();
        pending.pop_front();
        lk.unlock();

        TaskMessage task{generation, {population[idx]}, sigma, seeds_for(idx), version_};
        const auto start = std::chrono::steady_clock::now();
        std::optional<ResultMessage> got;
        std::string failure;
        try {
          auto rs = slot.endpoint->run(task, timeout);
          if (rs.size() != 1 || rs[0].seed != population[idx].seed || rs[0].sign != population[idx].sign ||
              rs[0].generation != generation)
            throw ProtocolError("result does not match the task");
          got = rs[0];
        } catch (const std::exception& e) {
          failure = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        lk.lock();
        if (got) {
          if (!results[idx]) {
            results[idx] = got;
            ++done;
            durations.push_back(secs);
          }
          cv.notify_all();
        } else {
          pending.push_front(idx);
          slot.endpoint->close();
          {
            std::lock_guard g(mutex_);
            slot.alive = false;
            events_.push_back(slot.endpoint->name() + " dropped at generation " + std::to_string(generation) +
                              ": " + failure);
          }
          cv.notify_all();
          return;
        }
      }
    };

    std::vector<std::thread> threads;
    std::vector<Slot*> live;
    for (auto& slot : workers_)
      if (slot.alive) live.push_back(&slot);
    if (live.empty()) throw GenerationAborted("generation " + std::to_string(generation) + ": no live workers");
    if (live.size() == 1) {
      drive(*live.front());
    } else {
      for (Slot* s : live) threads.emplace_back(drive, std::ref(*s));
      for (auto& t : threads) t.join();
    }

    if (done != n)
      throw GenerationAborted("generation " + std::to_string(generation) + ": all workers failed with " +
                              std::to_string(n - done) + " results outstanding");
    if (!durations.empty()) {
      std::nth_element(durations.begin(), durations.begin() + static_cast<std::ptrdiff_t>(durations.size() / 2),
                       durations.end());
      last_median_s_ = durations[durations.size() / 2];
    }

    std::vector<EvalOutcome> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {results[i]->reward, results[i]->env_steps};
    return out;
  }

  Millis task_timeout() const {
    const auto straggler = Millis(static_cast<std::int64_t>(options_.straggler_factor * last_median_s_ * 1000.0));
    return std::max(options_.min_task_timeout, straggler);
  }

  void shutdown() {
    for (auto& slot : workers_) slot.endpoint->close();
  }

 private:
  struct Slot {
    std::unique_ptr<WorkerEndpoint> endpoint;
    bool alive = true;
  };

  void mark_dead(Slot& slot, const std::string& why) {
    std::lock_guard lk(mutex_);
    slot.alive = false;
    events_.push_back(slot.endpoint->name() + ": " + why);
  }

  CoordinatorOptions options_;
  mutable std::mutex mutex_;
  std::vector<Slot> workers_;
  std::vector<std::string> events_;
  std::uint64_t version_ = 0;
  double last_median_s_ = 0.0;
};

}  // namespace esdrl
