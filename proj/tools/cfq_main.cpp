// cfq — single command-line entry point for the offline-RL desk stack:
//   gen-data  simulate a multi-policy logged dataset
//   train     run the full training loop (checkpoint + metrics log)
//   eval      held-out evaluation summary from a checkpoint
//   diag      analysis reports (<name>.tsv + <name>.svg)
//   ablate    paired full-vs-ablated training, relative final-Q drop
//
// Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical abort.
// Errors print a single-line machine-parsable reason to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfq/cfq.hpp"

namespace {

constexpr std::uint64_t kDefaultSeed = 12345;

namespace fs = std::filesystem;

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  if (dir.empty() || dir == ".") return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

std::string fmt(double v) { return cfq::detail::fmt_double(v); }

// Small writer for the long-format report TSVs; every report documents its
// own three-column header.
class TsvWriter {
 public:
  TsvWriter(const std::string& path, const std::string& header) : out_(path), path_(path) {
    if (!out_) throw std::runtime_error("cannot open " + path);
    out_ << header << '\n';
  }
  void row(const std::string& a, const std::string& b, const std::string& c) {
    out_ << a << '\t' << b << '\t' << c << '\n';
  }
  void row(const std::string& a, const std::string& b, double c) { row(a, b, fmt(c)); }
  ~TsvWriter() {
    out_.flush();
    if (!out_) std::cerr << "cfq: warning: short write on " << path_ << '\n';
  }

 private:
  std::ofstream out_;
  std::string path_;
};

// Evenly strided subsample, deterministic: element 0, then every ceil(n/k)-th.
std::vector<cfq::WindowRef> stride_sample(const std::vector<cfq::WindowRef>& ws, std::size_t k) {
  if (k == 0 || ws.size() <= k) return ws;
  std::vector<cfq::WindowRef> out;
  out.reserve(k);
  const std::size_t stride = (ws.size() + k - 1) / k;
  for (std::size_t i = 0; i < ws.size(); i += stride) out.push_back(ws[i]);
  return out;
}

struct LoadedModel {
  cfq::Config cfg;
  cfq::Buffer buffer;
  std::unique_ptr<cfq::Trainer> trainer;
  std::vector<cfq::WindowRef> windows;
};

// Restores a trainer from a checkpoint against an arbitrary evaluation buffer
// (the buffer-identity check is relaxed; the config hash is not).
LoadedModel load_model(const std::string& ckpt_path, const std::string& buffer_path,
                       std::uint64_t seed) {
  LoadedModel m;
  cfq::Checkpoint ck = cfq::Checkpoint::load(ckpt_path);
  m.cfg = cfq::parse_config_text(ck.config_text);
  m.buffer = cfq::read_buffer(buffer_path);
  m.trainer = std::make_unique<cfq::Trainer>(m.cfg, m.buffer, seed);
  m.trainer->load_state(ck, /*require_same_buffer=*/false);
  m.windows = cfq::all_windows(m.trainer->buffer());
  return m;
}

// --- subcommands ---

int cmd_gen_data(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
  const cfq::Config cfg = cfq::load_config(config_path);
  const cfq::Buffer buf = cfq::simulate(cfg.sim, seed);
  ensure_dir(out_dir);
  const std::string path = join(out_dir, "buffer.tsv");
  cfq::write_buffer(buf, path);
  std::cout << "wrote " << path << " (" << buf.episodes.size() << " episodes, "
            << buf.transition_count() << " transitions, " << buf.n_policies << " policies)\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& buffer_path, std::uint64_t seed,
              const std::string& out_dir, long long stop_after, const std::string& resume_path) {
  const cfq::Config cfg = cfq::load_config(config_path);
  cfq::Buffer buf = cfq::read_buffer(buffer_path);
  ensure_dir(out_dir);
  cfq::Trainer tr(cfg, std::move(buf), seed);
  tr.set_dump_path(join(out_dir, "nan_batch_dump.tsv"));
  if (!resume_path.empty()) {
    const cfq::Checkpoint ck = cfq::Checkpoint::load(resume_path);
    tr.load_state(ck);  // strict: resume demands the original buffer and config
  }
  const long long done = tr.run(stop_after);
  const std::string metrics_path = join(out_dir, "metrics.tsv");
  const std::string ckpt_path = join(out_dir, "checkpoint.bin");
  tr.write_metrics(metrics_path);
  tr.checkpoint().save(ckpt_path);
  std::cout << "ran " << done << " steps (total " << tr.metrics().size() << "); "
            << (tr.finished() ? "training complete" : "stopped early") << "; wrote " << ckpt_path
            << " and " << metrics_path << '\n';
  return 0;
}

void print_and_write_eval(const cfq::EvalSummary& es, const std::string& out_dir) {
  std::vector<std::pair<std::string, double>> rows = {
      {"mean_q", es.mean_q},
      {"decomp_dwell", es.mean_decomp[0]},
      {"decomp_engagement", es.mean_decomp[1]},
      {"decomp_return_time", es.mean_decomp[2]},
      {"decomp_overflow", es.mean_decomp[3]},
  };
  for (std::size_t p = 0; p < es.preference.size(); ++p)
    rows.push_back({"preference_" + std::to_string(p), es.preference[p]});
  ensure_dir(out_dir);
  std::ofstream out(join(out_dir, "eval_summary.tsv"));
  if (!out) throw std::runtime_error("cannot open " + join(out_dir, "eval_summary.tsv"));
  out << "key\tvalue\n";
  for (const auto& [k, v] : rows) {
    out << k << '\t' << fmt(v) << '\n';
    std::cout << k << '\t' << fmt(v) << '\n';
  }
  std::vector<std::pair<std::string, double>> bars;
  for (std::size_t p = 0; p < es.preference.size(); ++p)
    bars.push_back({"policy " + std::to_string(p), es.preference[p]});
  cfq::svg::write_bars(join(out_dir, "eval_summary.svg"), bars, "policy preference fractions",
                       "fraction of states won");
}

int cmd_eval(const std::string& ckpt_path, const std::string& buffer_path, std::uint64_t seed,
             const std::string& out_dir) {
  LoadedModel m = load_model(ckpt_path, buffer_path, seed);
  const cfq::EvalSummary es = cfq::eval_summary(*m.trainer, m.windows, seed);
  print_and_write_eval(es, out_dir);
  return 0;
}

// --- diag reports ---

void report_disparity(LoadedModel& m, std::uint64_t seed, const std::string& out_dir,
                      std::size_t max_states) {
  cfq::Trainer& tr = *m.trainer;
  const auto ws = stride_sample(m.windows, max_states);
  std::vector<int> labels;
  std::vector<cfq::FeatureVec> xs;
  for (const auto& w : ws) {
    labels.push_back(w.policy_id());
    xs.push_back(w.last().x);
  }
  const int n = tr.buffer().n_policies;

  cfq::Tensor x_states({ws.size(), cfq::kFeatureDim});
  for (std::size_t i = 0; i < ws.size(); ++i)
    for (std::size_t j = 0; j < cfq::kFeatureDim; ++j) x_states.at(i, j) = xs[i][j];
  const auto rep_x = cfq::state_disparity(x_states, labels, n);
  const auto rep_beta = cfq::state_disparity(tr.beta_values(ws), labels, n);
  const auto rep_br = cfq::state_disparity(tr.encode_values(ws), labels, n);

  cfq::EmbedResult emb = cfq::embed_2d(xs, seed);
  cfq::unit_scale_columns(emb.codes);
  std::vector<cfq::Point2> pts(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i) pts[i] = {emb.codes.at(i, 0), emb.codes.at(i, 1)};
  const std::vector<std::size_t> min_samples = {2, 3, 4, 5, 10, 20};
  const auto counts = cfq::cluster_sweep(pts, 0.3, min_samples);

  TsvWriter tsv(join(out_dir, "disparity.tsv"), "section\tkey\tvalue");
  auto w1_rows = [&](const char* sec, const cfq::DisparityReport& r) {
    for (std::size_t d = 0; d < r.per_dimension.size(); ++d)
      tsv.row(sec, "dim_" + std::to_string(d), r.per_dimension[d]);
    tsv.row(sec, "sum", r.sum);
  };
  w1_rows("wasserstein_x", rep_x);
  w1_rows("wasserstein_beta", rep_beta);
  w1_rows("wasserstein_br", rep_br);
  tsv.row("ratio", "br_over_beta", rep_br.sum / std::max(rep_beta.sum, 1e-12));
  tsv.row("classifier", "accuracy", tr.config().br_enabled ? tr.classifier_accuracy(ws) : 0.0);
  for (std::size_t i = 0; i < min_samples.size(); ++i)
    tsv.row("cluster_sweep", "min_samples_" + std::to_string(min_samples[i]),
            std::to_string(counts[i]));
  tsv.row("embed", "loss_first", emb.loss_history.front());
  tsv.row("embed", "loss_last", emb.loss_history.back());

  std::vector<cfq::svg::Series> series(static_cast<std::size_t>(n));
  for (int p = 0; p < n; ++p) series[static_cast<std::size_t>(p)].label = "policy " + std::to_string(p);
  for (std::size_t i = 0; i < ws.size(); ++i)
    series[static_cast<std::size_t>(labels[i])].points.push_back({pts[i][0], pts[i][1]});
  cfq::svg::write_scatter(join(out_dir, "disparity.svg"), series, "state embedding by policy",
                          "code 0", "code 1");
}

void report_q_spread(LoadedModel& m, const std::string& out_dir, std::size_t max_states) {
  cfq::Trainer& tr = *m.trainer;
  const auto ws = stride_sample(m.windows, max_states);
  const auto br = cfq::q_spread(tr, ws, /*use_br=*/true);
  const auto raw = cfq::q_spread(tr, ws, /*use_br=*/false);
  TsvWriter tsv(join(out_dir, "q_spread.tsv"), "representation\tstat\tvalue");
  auto rows = [&](const char* sec, const cfq::QSpreadReport& r) {
    tsv.row(sec, "count", std::to_string(r.spreads.size()));
    tsv.row(sec, "mean", r.mean);
    tsv.row(sec, "p10", r.p10);
    tsv.row(sec, "p50", r.p50);
    tsv.row(sec, "p90", r.p90);
  };
  rows("balanced", br);
  rows("raw_beta", raw);

  auto curve = [&](const char* label, const cfq::QSpreadReport& r) {
    std::vector<double> s = r.spreads;
    std::sort(s.begin(), s.end());
    cfq::svg::Series ser{label, {}};
    const std::size_t step = std::max<std::size_t>(1, s.size() / 200);
    for (std::size_t i = 0; i < s.size(); i += step)
      ser.points.push_back({static_cast<double>(i) / static_cast<double>(s.size()), s[i]});
    return ser;
  };
  cfq::svg::write_lines(join(out_dir, "q_spread.svg"),
                        {curve("balanced", br), curve("raw beta", raw)},
                        "sorted counterfactual Q-spread", "state quantile", "spread");
}

void report_uncertainty(LoadedModel& m, std::uint64_t seed, const std::string& out_dir,
                        std::size_t max_states, int passes) {
  cfq::Trainer& tr = *m.trainer;
  const auto ws = stride_sample(m.windows, std::min<std::size_t>(max_states, 64));
  const double rate = tr.config().dropout_rate;
  TsvWriter tsv(join(out_dir, "uncertainty.tsv"), "key\tsub\tvalue");
  double mean = 0.0;
  std::vector<std::pair<std::string, double>> bars;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    const double s = cfq::mc_uncertainty(tr, ws[i], ws[i].last().action, passes, rate, seed + i);
    tsv.row("state", std::to_string(i), s);
    if (i < 24) bars.push_back({std::to_string(i), s});
    mean += s;
  }
  mean /= static_cast<double>(ws.size());
  tsv.row("summary", "mean_std", mean);
  tsv.row("summary", "passes", std::to_string(passes));
  tsv.row("summary", "dropout_rate", rate);
  cfq::svg::write_bars(join(out_dir, "uncertainty.svg"), bars, "dropout Q std per state",
                       "std of Q");
}

void report_objectives(LoadedModel& m, const std::string& out_dir, std::size_t max_states) {
  cfq::Trainer& tr = *m.trainer;
  const auto ws = stride_sample(m.windows, max_states);
  const auto [low, high] = cfq::split_by_feature(ws, cfq::kIntent, 0.5);
  TsvWriter tsv(join(out_dir, "objectives.tsv"), "segment\tkey\tvalue");
  const char* names[4] = {"w_dwell", "w_engagement", "w_return_time", "w_overflow"};
  std::vector<std::pair<std::string, double>> bars;
  auto seg = [&](const char* label, const std::vector<cfq::WindowRef>& s) {
    if (s.empty()) {
      tsv.row(label, "count", "0");
      return;
    }
    const auto rep = cfq::objective_report(tr, s);
    tsv.row(label, "count", std::to_string(s.size()));
    for (std::size_t j = 0; j < 4; ++j) {
      tsv.row(label, names[j], rep.mean_weights[j]);
      bars.push_back({std::string(label) + ":" + (names[j] + 2), rep.mean_weights[j]});
    }
    tsv.row(label, "mean_q", rep.mean_q);
  };
  seg("all", ws);
  seg("low_intent", low);
  seg("high_intent", high);
  cfq::svg::write_bars(join(out_dir, "objectives.svg"), bars,
                       "mean decomposition weights per segment", "weight");
}

void report_exploration(LoadedModel& m, std::uint64_t seed, const std::string& out_dir,
                        const std::vector<double>& fractions) {
  // Trains paired runs per fraction from the checkpoint's own config: heavy.
  const auto [train, held] = cfq::split_buffer(m.buffer, m.cfg.holdout_frac);
  const auto eval_ws = cfq::all_windows(held);
  const auto pts = cfq::exploration_curve(m.cfg, train, eval_ws, fractions, seed);
  TsvWriter tsv(join(out_dir, "exploration.tsv"), "fraction\tq_on_norm\tq_off_norm");
  cfq::svg::Series on{"exploration on", {}}, off{"exploration off", {}};
  for (const auto& p : pts) {
    tsv.row(fmt(p.fraction), fmt(p.q_on), fmt(p.q_off));
    on.points.push_back({p.fraction, p.q_on});
    off.points.push_back({p.fraction, p.q_off});
  }
  cfq::svg::write_lines(join(out_dir, "exploration.svg"), {on, off},
                        "normalized final Q vs data fraction", "data fraction", "normalized Q");
}

int cmd_diag(const std::string& ckpt_path, const std::string& buffer_path,
             const std::string& report, std::uint64_t seed, const std::string& out_dir,
             std::size_t max_states, int passes, const std::vector<double>& fractions) {
  LoadedModel m = load_model(ckpt_path, buffer_path, seed);
  ensure_dir(out_dir);
  if (report == "disparity")
    report_disparity(m, seed, out_dir, max_states);
  else if (report == "q_spread")
    report_q_spread(m, out_dir, max_states);
  else if (report == "uncertainty")
    report_uncertainty(m, seed, out_dir, max_states, passes);
  else if (report == "objectives")
    report_objectives(m, out_dir, max_states);
  else if (report == "exploration")
    report_exploration(m, seed, out_dir, fractions);
  else if (report == "eval")
    print_and_write_eval(cfq::eval_summary(*m.trainer, m.windows, seed), out_dir);
  else
    throw std::runtime_error("unknown report: " + report);
  std::cout << "wrote " << join(out_dir, report == "eval" ? "eval_summary" : report)
            << ".tsv\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& which_str,
               const std::string& buffer_path, std::uint64_t seed, const std::string& out_dir) {
  const cfq::Config cfg = cfq::load_config(config_path);
  const cfq::AblationFlag which = cfq::parse_ablation(which_str);
  const cfq::Buffer full =
      buffer_path.empty() ? cfq::simulate(cfg.sim, seed) : cfq::read_buffer(buffer_path);
  const auto [train, held] = cfq::split_buffer(full, cfg.holdout_frac);
  const auto eval_ws = cfq::all_windows(held);
  const cfq::AblationResult res = cfq::ablation_drop(cfg, which, train, eval_ws, seed);
  ensure_dir(out_dir);
  TsvWriter tsv(join(out_dir, "ablation_" + which_str + ".tsv"), "key\tsub\tvalue");
  tsv.row("which", which_str, "");
  tsv.row("q", "full", res.q_full);
  tsv.row("q", "ablated", res.q_ablated);
  tsv.row("q", "relative_drop", res.drop);
  std::cout << "ablation " << which_str << ": q_full=" << fmt(res.q_full)
            << " q_ablated=" << fmt(res.q_ablated) << " drop=" << fmt(res.drop) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cfq: offline RL with policy experts, balanced state representations, "
               "decomposed twin critics, and counterfactual exploration"};
  app.require_subcommand(1);

  std::string config_path, buffer_path, ckpt_path, resume_path, out_dir = ".", report,
              which_str;
  std::uint64_t seed = kDefaultSeed;
  long long stop_after = -1;
  std::size_t max_states = 2000;
  int passes = 16;
  std::vector<double> fractions = {1.0 / 3.0, 2.0 / 3.0, 1.0};

  CLI::App* gen = app.add_subcommand("gen-data", "simulate a logged multi-policy dataset");
  gen->add_option("--config", config_path, "config file (sim_* keys)")->required();
  gen->add_option("--seed", seed, "rng seed (default 12345)");
  gen->add_option("--out", out_dir, "output directory (writes buffer.tsv)");

  CLI::App* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", config_path, "config file")->required();
  train->add_option("--buffer", buffer_path, "logged dataset (buffer.tsv)")->required();
  train->add_option("--seed", seed, "rng seed (default 12345)");
  train->add_option("--out", out_dir, "output directory (checkpoint.bin, metrics.tsv)");
  train->add_option("--stop-after", stop_after, "stop after N main steps (-1 = run to finish)");
  train->add_option("--resume", resume_path, "resume from an existing checkpoint");

  CLI::App* ev = app.add_subcommand("eval", "held-out evaluation summary");
  ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  ev->add_option("--buffer", buffer_path, "evaluation dataset")->required();
  ev->add_option("--seed", seed, "rng seed (default 12345)");
  ev->add_option("--out", out_dir, "output directory (eval_summary.tsv/.svg)");

  CLI::App* diag = app.add_subcommand("diag", "analysis reports (<name>.tsv + <name>.svg)");
  diag->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  diag->add_option("--buffer", buffer_path, "dataset to analyse")->required();
  diag->add_option("--report", report, "one of: disparity, q_spread, uncertainty, objectives, "
                                       "exploration, eval")
      ->required()
      ->check(CLI::IsMember(
          {"disparity", "q_spread", "uncertainty", "objectives", "exploration", "eval"}));
  diag->add_option("--seed", seed, "rng seed (default 12345)");
  diag->add_option("--out", out_dir, "output directory");
  diag->add_option("--max-states", max_states, "cap on evaluated states (strided subsample)");
  diag->add_option("--passes", passes, "dropout passes for the uncertainty report");
  diag->add_option("--fractions", fractions, "data fractions for the exploration report");

  CLI::App* abl = app.add_subcommand("ablate", "paired full-vs-ablated training run");
  abl->add_option("--config", config_path, "config file")->required();
  abl->add_option("--which", which_str, "one of: none, no_br, no_explore, no_decomp")->required();
  abl->add_option("--buffer", buffer_path, "dataset (default: simulate from config)");
  abl->add_option("--seed", seed, "rng seed (default 12345)");
  abl->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    std::cerr << "cfq: usage error: " << e.what() << '\n';
    std::cerr << app.help() << '\n';
    return 1;
  }

  try {
    if (app.got_subcommand(gen)) return cmd_gen_data(config_path, seed, out_dir);
    if (app.got_subcommand(train))
      return cmd_train(config_path, buffer_path, seed, out_dir, stop_after, resume_path);
    if (app.got_subcommand(ev)) return cmd_eval(ckpt_path, buffer_path, seed, out_dir);
    if (app.got_subcommand(diag))
      return cmd_diag(ckpt_path, buffer_path, report, seed, out_dir, max_states, passes,
                      fractions);
    if (app.got_subcommand(abl))
      return cmd_ablate(config_path, which_str, buffer_path, seed, out_dir);
    std::cerr << "cfq: usage error: no subcommand\n" << app.help() << '\n';
    return 1;
  } catch (const cfq::NanAbort& e) {
    std::cerr << "cfq: numerical abort: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "cfq: error: " << e.what() << '\n';
    return 2;
  }
}
