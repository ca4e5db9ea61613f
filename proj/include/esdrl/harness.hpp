#pragma once

// Experiment driver: trains ES, DQN and ES-pretrained DQN under one config,
// records learning curves against cumulative training time, and builds the
// comparison report.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdrl/checkpoint.hpp"
#include "esdrl/config.hpp"
#include "esdrl/dqn.hpp"
#include "esdrl/envs.hpp"
#include "esdrl/es.hpp"
#include "esdrl/transfer.hpp"
#include "esdrl/worker.hpp"

namespace esdrl {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kEvalSeedTag = 0xE7A1'5EED'0000'0001ULL;
inline constexpr std::uint64_t kInitSeedTag = 0x1417'5EED'0000'0002ULL;
inline constexpr std::uint64_t kWarmStartTag = 0x3A93'5EED'0000'0003ULL;

struct CurveRow {
  std::uint64_t iteration = 0;
  std::uint64_t env_steps_cum = 0;
  double wall_clock_s = 0.0;
  double mean_reward = 0.0;
  double std_reward = 0.0;

  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

struct LearningCurve {
  std::string env;
  std::string algo;
  std::uint64_t seed = 0;
  std::vector<CurveRow> rows;

  friend bool operator==(const LearningCurve&, const LearningCurve&) = default;
};

// Held-out evaluation episodes, shared by every algorithm run with this seed.
inline std::vector<std::uint64_t> evaluation_seeds(std::uint64_t run_seed, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = derive_seed(run_seed, kEvalSeedTag, k);
  return out;
}

// --- curve files ------------------------------------------------------------

inline void write_curve_csv(std::ostream& os, const LearningCurve& curve) {
  os << "# env=" << curve.env << " algo=" << curve.algo << " seed=" << curve.seed << "\n";
  os << "iteration,env_steps_cum,wall_clock_s,mean_reward,std_reward\n";
  for (const auto& r : curve.rows)
    os << r.iteration << ',' << r.env_steps_cum << ',' << format_double(r.wall_clock_s) << ','
       << format_double(r.mean_reward) << ',' << format_double(r.std_reward) << '\n';
}

inline LearningCurve read_curve_csv(std::istream& is, const std::string& origin = "<curve>") {
  LearningCurve curve;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::runtime_error(origin + ": missing # header");
  std::istringstream header(line.substr(2));
  std::string item;
  while (header >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "env") curve.env = value;
    else if (key == "algo") curve.algo = value;
    else if (key == "seed") curve.seed = detail::parse_number<std::uint64_t>(value);
  }
  if (!std::getline(is, line) || line.rfind("iteration,", 0) != 0)
    throw std::runtime_error(origin + ": missing column header");
  for (std::size_t line_no = 3; std::getline(is, line); ++line_no) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    while (std::getline(ss, item, ',')) cells.push_back(item);
    if (cells.size() != 5) throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": expected 5 columns");
    try {
      curve.rows.push_back({detail::parse_number<std::uint64_t>(cells[0]),
                            detail::parse_number<std::uint64_t>(cells[1]), detail::parse_number<double>(cells[2]),
                            detail::parse_number<double>(cells[3]), detail::parse_number<double>(cells[4])});
    } catch (const std::exception& e) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return curve;
}

inline void save_curve(const LearningCurve& curve, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_curve_csv(out, curve);
}

inline LearningCurve load_curve(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return read_curve_csv(in, path.string());
}

// All "*_curve.csv" files in a directory, sorted by file name.
inline std::vector<LearningCurve> load_curves(const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 10 && name.ends_with("_curve.csv")) paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<LearningCurve> out;
  for (const auto& p : paths) out.push_back(load_curve(p));
  return out;
}

// --- curve analysis ---------------------------------------------------------

// Trailing moving average of mean_reward; the first rows average what is available.
inline LearningCurve smooth(const LearningCurve& curve, std::size_t window) {
  if (window < 1) throw std::invalid_argument("smoothing window must be >= 1");
  LearningCurve out = curve;
  for (std::size_t i = 0; i < curve.rows.size(); ++i) {
    const std::size_t first = i + 1 - std::min(window, i + 1);
    double sum = 0.0;
    double lo = curve.rows[first].mean_reward;
    double hi = lo;
    for (std::size_t j = first; j <= i; ++j) {
      sum += curve.rows[j].mean_reward;
      lo = std::min(lo, curve.rows[j].mean_reward);
      hi = std::max(hi, curve.rows[j].mean_reward);
    }
    // Rounding can push an average one ulp outside its inputs.
    out.rows[i].mean_reward = std::clamp(sum / static_cast<double>(i + 1 - first), lo, hi);
  }
  return out;
}

// First wall-clock time at which the (already smoothed) curve reaches
// fraction * reference.
inline std::optional<double> time_to_threshold(const LearningCurve& smoothed, double fraction, double reference) {
  if (!std::isfinite(reference)) throw std::invalid_argument("reference reward must be finite");
  const double threshold = fraction * reference;
  for (const auto& r : smoothed.rows)
    if (r.mean_reward >= threshold) return r.wall_clock_s;
  return std::nullopt;
}

inline double best_reward(const LearningCurve& curve) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& r : curve.rows) best = std::max(best, r.mean_reward);
  return best;
}

// --- comparison report ------------------------------------------------------

inline constexpr double kReportFractions[3] = {0.25, 0.50, 1.00};

struct ReportRow {
  std::string algo;
  std::uint64_t seed = 0;
  double final_smoothed = 0.0;
  double best_smoothed = 0.0;
  std::uint64_t final_env_steps = 0;
  double final_wall_clock_s = 0.0;
  std::optional<double> time_to[3];
};

struct Report {
  std::string env;
  std::size_t window = 1;
  // Best smoothed reward over every compared run; thresholds are fractions of it.
  double reference = 0.0;
  std::vector<ReportRow> rows;
  std::vector<LearningCurve> smoothed;
};

inline Report compare_report(const std::vector<LearningCurve>& curves, std::size_t window) {
  if (curves.empty()) throw std::invalid_argument("report needs at least one curve");
  for (const auto& c : curves) {
    if (c.env != curves.front().env)
      throw std::invalid_argument("cannot compare curves from different environments ('" + curves.front().env +
                                  "' and '" + c.env + "')");
    if (c.rows.empty()) throw std::invalid_argument("curve " + c.algo + " seed " + std::to_string(c.seed) + " is empty");
  }
  Report report;
  report.env = curves.front().env;
  report.window = window;
  report.reference = -std::numeric_limits<double>::infinity();
  for (const auto& c : curves) {
    report.smoothed.push_back(smooth(c, window));
    report.reference = std::max(report.reference, best_reward(report.smoothed.back()));
  }
  for (const auto& s : report.smoothed) {
    ReportRow row;
    row.algo = s.algo;
    row.seed = s.seed;
    row.final_smoothed = s.rows.back().mean_reward;
    row.best_smoothed = best_reward(s);
    row.final_env_steps = s.rows.back().env_steps_cum;
    row.final_wall_clock_s = s.rows.back().wall_clock_s;
    for (int k = 0; k < 3; ++k) row.time_to[k] = time_to_threshold(s, kReportFractions[k], report.reference);
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline void write_report_csv(std::ostream& os, const Report& report) {
  os << "# env=" << report.env << " window=" << report.window << " reference=" << format_double(report.reference)
     << "\n";
  os << "algo,seed,final_smoothed_reward,best_smoothed_reward,final_env_steps,final_wall_clock_s,"
        "time_to_25pct_s,time_to_50pct_s,time_to_100pct_s\n";
  for (const auto& r : report.rows) {
    os << r.algo << ',' << r.seed << ',' << format_double(r.final_smoothed) << ',' << format_double(r.best_smoothed)
       << ',' << r.final_env_steps << ',' << format_double(r.final_wall_clock_s);
    for (const auto& t : r.time_to) os << ',' << (t ? format_double(*t) : std::string("not_reached"));
    os << '\n';
  }
}

struct Band {
  std::string algo;
  std::vector<double> x;  // mean wall clock at each aligned row
  std::vector<double> mean;
  std::vector<double> std;
};

// Per-algorithm mean and population std of the smoothed reward, aligned by
// row index over the rows every run of that algorithm has.
inline std::vector<Band> reward_bands(const Report& report) {
  std::map<std::string, std::vector<const LearningCurve*>> by_algo;
  for (const auto& s : report.smoothed) by_algo[s.algo].push_back(&s);
  std::vector<Band> bands;
  for (const auto& [algo, runs] : by_algo) {
    std::size_t len = runs.front()->rows.size();
    for (const auto* r : runs) len = std::min(len, r->rows.size());
    Band b;
    b.algo = algo;
    for (std::size_t i = 0; i < len; ++i) {
      double x = 0.0;
      double m = 0.0;
      for (const auto* r : runs) {
        x += r->rows[i].wall_clock_s;
        m += r->rows[i].mean_reward;
      }
      const double n = static_cast<double>(runs.size());
      x /= n;
      m /= n;
      double var = 0.0;
      for (const auto* r : runs) var += (r->rows[i].mean_reward - m) * (r->rows[i].mean_reward - m);
      b.x.push_back(x);
      b.mean.push_back(m);
      b.std.push_back(std::sqrt(var / n));
    }
    bands.push_back(std::move(b));
  }
  return bands;
}

inline std::string render_svg(const Report& report) {
  const auto bands = reward_bands(report);
  const double width = 720, height = 440, left = 70, right = 160, top = 30, bottom = 50;
  double xmax = 0.0, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& b : bands)
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      xmax = std::max(xmax, b.x[i]);
      ymin = std::min(ymin, b.mean[i] - b.std[i]);
      ymax = std::max(ymax, b.mean[i] + b.std[i]);
    }
  if (!(xmax > 0.0)) xmax = 1.0;
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 1.0;
  if (ymax - ymin < 1e-9) ymin -= 0.5, ymax += 0.5;
  const double pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double x) { return left + pw * x / xmax; };
  auto py = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return std::string(buf);
  };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"18\">" << report.env << ": smoothed reward (window " << report.window
    << ") vs cumulative training time</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = xmax * t / 5.0, yv = ymin + (ymax - ymin) * t / 5.0;
    s << "<text x=\"" << px(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">wall clock (s)</text>\n";
  s << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">mean reward</text>\n";

  for (std::size_t k = 0; k < bands.size(); ++k) {
    const auto& b = bands[k];
    const char* color = palette[k % 6];
    std::ostringstream area, line;
    for (std::size_t i = 0; i < b.x.size(); ++i) area << px(b.x[i]) << ',' << py(b.mean[i] + b.std[i]) << ' ';
    for (std::size_t i = b.x.size(); i-- > 0;) area << px(b.x[i]) << ',' << py(b.mean[i] - b.std[i]) << ' ';
    for (std::size_t i = 0; i < b.x.size(); ++i) line << px(b.x[i]) << ',' << py(b.mean[i]) << ' ';
    s << "<polygon points=\"" << area.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    s << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    const double ly = top + 20.0 * static_cast<double>(k + 1);
    s << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
    s << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\">" << b.algo << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// --- training runs ----------------------------------------------------------

struct EsRunOptions {
  // Extra remote workers accepted on this address before training starts.
  std::string listen_host = "127.0.0.1";
  std::uint16_t listen_port = 0;
  std::size_t remote_workers = 0;
  Millis accept_timeout{60'000};
  CoordinatorOptions coordinator;
  std::ostream* log = nullptr;
};

struct EsRun {
  Mlp policy;
  LearningCurve curve;
  std::vector<GenerationLog> generations;
  EsProgress progress;
};

inline Mlp initial_policy(const ExperimentConfig& config, std::uint64_t run_seed) {
  return Mlp::glorot(config.policy_spec(), derive_seed(run_seed, kInitSeedTag));
}

// ES through the worker pool for `generations` generations. The curve gets a
// row before training, every eval_every generations, and after the last one.
// Evaluation time is not counted as training time.
inline EsRun train_es(const ExperimentConfig& config, std::uint64_t run_seed, std::size_t generations,
                      const EsRunOptions& options = {}) {
  const MlpSpec spec = config.policy_spec();
  EsConfig es = config.es;
  es.master_seed = run_seed;
  es.validate();

  Coordinator coordinator(options.coordinator);
  for (std::size_t w = 0; w < config.workers; ++w)
    coordinator.add_worker(std::make_unique<InProcessEndpoint>("local-" + std::to_string(w), spec, config.env));
  if (options.remote_workers > 0) {
    WorkerListener listener(options.listen_host, options.listen_port, spec, config.env);
    if (options.log) *options.log << "waiting for " << options.remote_workers << " worker(s) on port " << listener.port() << "\n";
    for (std::size_t w = 0; w < options.remote_workers; ++w) {
      auto endpoint = listener.accept(options.accept_timeout);
      if (!endpoint) throw std::runtime_error("timed out waiting for remote workers");
      coordinator.add_worker(std::move(endpoint));
    }
  }

  const auto seeds = evaluation_seeds(run_seed, config.eval_episodes);
  auto eval_env = make_env(config.env);
  EsRun run{initial_policy(config, run_seed), {to_string(config.env.kind), to_string(Algo::Es), run_seed, {}}, {}, {}};
  ParameterVector theta = run.policy.parameters();

  auto record = [&](std::uint64_t iteration) {
    const auto eval = evaluate_greedy(Mlp(spec, theta), *eval_env, seeds);
    run.curve.rows.push_back(
        {iteration, run.progress.env_steps_cum, run.progress.wall_clock_s, eval.mean_reward, eval.std_reward});
  };

  record(0);
  try {
    for (std::size_t g = 0; g < generations; ++g) {
      const auto start = std::chrono::steady_clock::now();
      coordinator.broadcast(Mlp(spec, theta), g + 1);
      const auto population = make_population(es, g);
      const auto outcomes = coordinator.run_generation(
          g, population, es.sigma, [&](std::size_t i) { return episode_seeds(es, g, i); });
      std::vector<double> rewards(outcomes.size());
      std::uint64_t steps = 0;
      for (std::size_t i = 0; i < outcomes.size(); ++i) {
        rewards[i] = outcomes[i].reward;
        steps += outcomes[i].env_steps;
      }
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      auto step = es_apply(theta, es, g, population, rewards, steps, elapsed, run.progress);
      theta = std::move(step.theta);
      run.progress = {step.log.env_steps_cum, step.log.wall_clock_s};
      run.generations.push_back(std::move(step.log));
      if ((g + 1) % config.eval_every == 0 || g + 1 == generations) record(g + 1);
    }
  } catch (...) {
    coordinator.shutdown();
    throw;
  }
  if (options.log)
    for (const auto& e : coordinator.events()) *options.log << "worker event: " << e << "\n";
  coordinator.shutdown();
  run.policy.load(theta);
  return run;
}

struct DqnRun {
  DqnResult result;
  LearningCurve curve;
};

inline DqnRun train_dqn(const ExperimentConfig& config, std::uint64_t run_seed, const std::optional<Mlp>& initial = {},
                        const CurveOffset& offset = {}, Algo label = Algo::Dqn) {
  DqnConfig dqn = config.dqn;
  dqn.seed = run_seed;
  const auto seeds = evaluation_seeds(run_seed, config.eval_episodes);
  const EnvConfig env = config.env;
  DqnRun run{run_dqn([env] { return make_env(env); }, dqn, config.policy_spec(), initial, seeds, offset),
             {to_string(config.env.kind), to_string(label), run_seed, {}}};
  for (const auto& r : run.result.curve)
    run.curve.rows.push_back({r.step, r.env_steps_cum, r.wall_clock_s, r.mean_eval_reward, r.std_eval_reward});
  return run;
}

// --- experiment driver ------------------------------------------------------

struct RunOutputs {
  Algo algo = Algo::Es;
  std::uint64_t seed = 0;
  LearningCurve curve;
  std::vector<fs::path> files;
};

inline std::string run_stem(Algo algo, std::uint64_t seed) {
  return std::string(to_string(algo)) + "_seed" + std::to_string(seed);
}

inline void write_generations_file(const std::vector<GenerationLog>& logs, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_generation_csv_header(out);
  for (const auto& l : logs) write_generation_csv_row(out, l);
}

inline void write_dqn_file(const std::vector<DqnCurveRow>& rows, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dqn_csv_header(out);
  for (const auto& r : rows) write_dqn_csv_row(out, r);
}

// One (algo, seed) cell. Files land in config.output_dir.
inline RunOutputs run_single(const ExperimentConfig& config, std::uint64_t seed, const EsRunOptions& options = {}) {
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  const std::string stem = run_stem(config.algo, seed);
  RunOutputs out{config.algo, seed, {}, {}};
  auto emit = [&](const fs::path& p) { out.files.push_back(p); };

  if (config.algo == Algo::Es) {
    EsRun es = train_es(config, seed, config.es.max_generations, options);
    save_curve(es.curve, dir / (stem + "_curve.csv"));
    emit(dir / (stem + "_curve.csv"));
    write_generations_file(es.generations, dir / (stem + "_generations.csv"));
    emit(dir / (stem + "_generations.csv"));
    save_checkpoint(es.policy, (dir / (stem + ".ckpt")).string());
    emit(dir / (stem + ".ckpt"));
    out.curve = std::move(es.curve);
    return out;
  }

  std::optional<Mlp> initial;
  CurveOffset offset;
  if (config.algo == Algo::EsThenDqn) {
    EsRun es = train_es(config, seed, config.es_phase_generations(), options);
    es.curve.algo = "es_phase";
    save_curve(es.curve, dir / (stem + "_es_phase.csv"));
    emit(dir / (stem + "_es_phase.csv"));
    write_generations_file(es.generations, dir / (stem + "_generations.csv"));
    emit(dir / (stem + "_generations.csv"));
    save_checkpoint(es.policy, (dir / (stem + "_es.ckpt")).string());
    emit(dir / (stem + "_es.ckpt"));
    WarmStart warm = warm_start_dqn(es.policy, config.policy_spec(), config.transfer_mode,
                                    derive_seed(seed, kWarmStartTag));
    initial = std::move(warm.online);
    offset = {es.progress.env_steps_cum, es.progress.wall_clock_s};
  }

  DqnRun dqn = train_dqn(config, seed, initial, offset, config.algo);
  save_curve(dqn.curve, dir / (stem + "_curve.csv"));
  emit(dir / (stem + "_curve.csv"));
  write_dqn_file(dqn.result.curve, dir / (stem + "_dqn.csv"));
  emit(dir / (stem + "_dqn.csv"));
  save_checkpoint(dqn.result.online, (dir / (stem + ".ckpt")).string());
  emit(dir / (stem + ".ckpt"));
  out.curve = std::move(dqn.curve);
  return out;
}

// Every seed of the configured algorithm. The config is validated before any
// training starts.
inline std::vector<RunOutputs> run_experiment(const ExperimentConfig& config, const EsRunOptions& options = {}) {
  validate(config);
  std::vector<RunOutputs> out;
  for (auto seed : config.seeds) {
    if (options.log) *options.log << "running " << to_string(config.algo) << " seed " << seed << "\n";
    out.push_back(run_single(config, seed, options));
  }
  return out;
}

// Writes report.csv and report.svg for every curve in `dir`.
inline Report write_report(const fs::path& dir, std::size_t window) {
  const Report report = compare_report(load_curves(dir), window);
  {
    std::ofstream csv(dir / "report.csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + (dir / "report.csv").string());
    write_report_csv(csv, report);
  }
  std::ofstream svg(dir / "report.svg", std::ios::binary);
  if (!svg) throw std::runtime_error("cannot write " + (dir / "report.svg").string());
  svg << render_svg(report);
  return report;
}

}  // namespace esdrl
