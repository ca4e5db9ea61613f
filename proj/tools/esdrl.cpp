// Command-line front end: training, evaluation, reports and remote workers.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "esdrl.hpp"

namespace {

using namespace esdrl;

struct RunFlags {
  std::string config_path;
  std::string env;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out;
  std::size_t remote_workers = 0;
  std::string listen = "0.0.0.0";
};

std::optional<std::string> getenv_str(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::uint16_t worker_port_from_env(std::uint16_t fallback) {
  if (auto p = getenv_str("ESDRL_WORKER_PORT")) return static_cast<std::uint16_t>(std::stoul(*p));
  return fallback;
}

ExperimentConfig resolve_config(const RunFlags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) c = load_config(f.config_path);
  if (!f.env.empty()) c.env.kind = parse_env_kind(f.env);
  if (f.seed) c.seeds = {*f.seed};
  if (f.workers) c.workers = *f.workers;
  if (auto dir = getenv_str("ESDRL_OUT_DIR")) c.output_dir = *dir;
  if (!f.out.empty()) c.output_dir = f.out;
  return c;
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config_path, "Experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--env", f.env, "Environment (flappy, lineworld); overrides the config");
  cmd->add_option("--seed", f.seed, "Run a single seed instead of the config's seed list");
  cmd->add_option("--workers", f.workers, "In-process rollout workers");
  cmd->add_option("--out", f.out, "Output directory (default: $ESDRL_OUT_DIR or the config's output_dir)");
  cmd->add_option("--remote-workers", f.remote_workers, "Remote workers to wait for before training");
  cmd->add_option("--listen", f.listen, "Address remote workers connect to (port from $ESDRL_WORKER_PORT)");
}

int run_training(const RunFlags& f, Algo algo) {
  ExperimentConfig c = resolve_config(f);
  c.algo = algo;
  EsRunOptions options;
  options.log = &std::cerr;
  options.remote_workers = f.remote_workers;
  options.listen_host = f.listen;
  options.listen_port = worker_port_from_env(0);
  for (const auto& run : run_experiment(c, options)) {
    const auto& last = run.curve.rows.back();
    std::cout << to_string(run.algo) << " seed " << run.seed << ": final mean reward " << last.mean_reward
              << " after " << last.env_steps_cum << " env steps, " << last.wall_clock_s << " s\n";
    for (const auto& p : run.files) std::cout << "  wrote " << p.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolution strategies and DQN experiments"};
  app.require_subcommand(1);

  RunFlags es_flags, dqn_flags, pre_flags;
  auto* train_es = app.add_subcommand("train-es", "Train a policy with evolution strategies");
  add_run_flags(train_es, es_flags);
  auto* train_dqn = app.add_subcommand("train-dqn", "Train a DQN agent from scratch");
  add_run_flags(train_dqn, dqn_flags);
  auto* pretrain = app.add_subcommand("pretrain", "ES phase, then DQN warm-started from the ES policy");
  add_run_flags(pretrain, pre_flags);

  RunFlags eval_flags;
  std::string eval_ckpt;
  std::size_t eval_episodes = 10;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint greedily");
  eval->add_option("checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--config", eval_flags.config_path, "Experiment config file")->check(CLI::ExistingFile);
  eval->add_option("--env", eval_flags.env, "Environment (flappy, lineworld)");
  eval->add_option("--seed", eval_flags.seed, "Seed for the evaluation episodes");
  eval->add_option("--episodes", eval_episodes, "Number of episodes");

  std::string report_dir;
  std::optional<std::size_t> report_window;
  auto* report = app.add_subcommand("report", "Compare every *_curve.csv in a directory");
  report->add_option("dir", report_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--window", report_window, "Smoothing window (default 20)");

  std::string connect;
  std::size_t max_tasks = 0;
  auto* serve = app.add_subcommand("serve-worker", "Connect to a coordinator and evaluate perturbations");
  serve->add_option("--connect", connect, "Coordinator host:port (default 127.0.0.1:$ESDRL_WORKER_PORT)");
  serve->add_option("--max-tasks", max_tasks, "Disconnect after this many tasks (0 = never)");

  std::string warm_src, warm_out;
  std::string warm_mode = "hidden_only";
  std::uint64_t warm_seed = 0;
  auto* warm = app.add_subcommand("warm-start", "Build DQN online/target checkpoints from an ES checkpoint");
  warm->add_option("checkpoint", warm_src, "ES policy checkpoint")->required()->check(CLI::ExistingFile);
  warm->add_option("--mode", warm_mode, "full or hidden_only");
  warm->add_option("--seed", warm_seed, "Seed for freshly initialised layers");
  warm->add_option("--out", warm_out, "Output prefix (writes <prefix>_online.ckpt and <prefix>_target.ckpt)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_es) return run_training(es_flags, Algo::Es);
    if (*train_dqn) return run_training(dqn_flags, Algo::Dqn);
    if (*pretrain) return run_training(pre_flags, Algo::EsThenDqn);

    if (*eval) {
      ExperimentConfig c = resolve_config(eval_flags);
      const Mlp policy = load_checkpoint(eval_ckpt);
      auto env = make_env(c.env);
      const auto seeds = evaluation_seeds(eval_flags.seed.value_or(c.seeds.front()), eval_episodes);
      const auto summary = evaluate_greedy(policy, *env, seeds);
      std::cout << describe(policy.spec()) << " on " << to_string(c.env.kind) << ": mean reward "
                << summary.mean_reward << " +- " << summary.std_reward << " over " << seeds.size() << " episodes ("
                << summary.env_steps << " steps)\n";
      return 0;
    }

    if (*report) {
      const std::size_t window = report_window.value_or(ExperimentConfig{}.smoothing_window);
      const Report r = write_report(report_dir, window);
      write_report_csv(std::cout, r);
      std::cout << "wrote " << (fs::path(report_dir) / "report.csv").string() << " and "
                << (fs::path(report_dir) / "report.svg").string() << "\n";
      return 0;
    }

    if (*serve) {
      std::string host = "127.0.0.1";
      std::uint16_t port = worker_port_from_env(0);
      if (!connect.empty()) std::tie(host, port) = net::split_host_port(connect);
      if (port == 0) throw std::invalid_argument("no coordinator port: pass --connect host:port or set ESDRL_WORKER_PORT");
      WorkerClientOptions options;
      options.max_tasks = max_tasks;
      const std::size_t served = serve_worker(host, port, options);
      std::cerr << "worker served " << served << " task(s)\n";
      return 0;
    }

    if (*warm) {
      const Mlp es_policy = load_checkpoint(warm_src);
      const WarmStart w = warm_start_dqn(es_policy, es_policy.spec(), parse_transfer_mode(warm_mode), warm_seed);
      save_checkpoint(w.online, warm_out + "_online.ckpt");
      save_checkpoint(w.target, warm_out + "_target.ckpt");
      std::cout << "wrote " << warm_out << "_online.ckpt and " << warm_out << "_target.ckpt\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
