#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cfq/simulator.hpp"

namespace cfq {

// Everything tunable lives here, flat, so a single plain-text file drives
// data generation, training, and diagnostics alike.
struct Config {
  // simulator
  SimConfig sim;

  // network sizes
  std::size_t hidden = 32;         // recurrent state width
  std::size_t br_dim = 32;         // balanced representation width
  std::size_t critic_hidden = 64;  // critic / actor trunk width
  std::size_t cls_hidden = 32;     // policy classifier hidden width
  std::size_t window = 10;         // history window length

  // optimization
  double lr = 3e-4;
  std::size_t batch_size = 256;
  double tau = 0.005;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  long long policy_freq = 2;
  double bc_alpha = 2.5;
  double critic_mix_alpha = 0.75;
  double lambda_grl = 4.0;
  // per critic step: adversarial_steps - 1 discriminator-only updates, then
  // one combined update whose reversed gradient moves the encoder
  long long adversarial_steps = 3;

  // discount schedule (per-phase lists; scalars broadcast)
  std::vector<double> gammas = {0.1, 0.3, 0.5, 0.7};
  std::vector<long long> phase_max_steps = {500};
  std::vector<long long> plateau_window = {500};
  std::vector<double> plateau_threshold = {0.01};

  // exploration schedule
  double eps_start = 0.1;
  double eps_end = 0.5;
  bool eps_reset_per_phase = true;

  // component switches (ablations flip exactly one)
  bool br_enabled = true;       // adversarial classifier + reversal
  bool explore_enabled = true;  // counterfactual anchors
  bool pe_head_trainable = false;

  // pre-training and warm-up
  long long pe_pretrain_steps = 600;
  std::size_t pe_batch = 64;
  long long warmup_adversarial = 1000;
  double sampler_delta = 0.01;

  // evaluation
  double holdout_frac = 0.2;
  double dropout_rate = 0.1;

  struct Phase {
    double gamma;
    long long max_steps;
    long long window;
    double threshold;
  };

  std::vector<Phase> phases() const {
    std::vector<Phase> out;
    for (std::size_t i = 0; i < gammas.size(); ++i) {
      auto pick = [&](const auto& v) { return v.size() == 1 ? v[0] : v[i]; };
      out.push_back({gammas[i], pick(phase_max_steps), pick(plateau_window),
                     pick(plateau_threshold)});
    }
    return out;
  }

  void validate() const {
    sim.validate();
    if (hidden < 1 || br_dim < 1 || critic_hidden < 1 || cls_hidden < 1 || window < 1)
      throw std::domain_error("config: network sizes must be positive");
    if (lr <= 0.0) throw std::domain_error("config: lr must be positive");
    if (batch_size < 1) throw std::domain_error("config: batch_size must be positive");
    if (tau <= 0.0 || tau > 1.0) throw std::domain_error("config: tau outside (0,1]");
    if (policy_noise < 0.0 || noise_clip < 0.0)
      throw std::domain_error("config: noise settings must be >= 0");
    if (policy_freq < 1) throw std::domain_error("config: policy_freq must be >= 1");
    if (bc_alpha <= 0.0) throw std::domain_error("config: bc_alpha must be positive");
    if (critic_mix_alpha < 0.0 || critic_mix_alpha > 1.0)
      throw std::domain_error("config: critic_mix_alpha outside [0,1]");
    if (lambda_grl < 0.0) throw std::domain_error("config: lambda_grl must be >= 0");
    if (adversarial_steps < 1)
      throw std::domain_error("config: adversarial_steps must be >= 1");
    if (gammas.empty()) throw std::domain_error("config: empty gamma schedule");
    double prev = -1.0;
    for (double g : gammas) {
      if (g <= prev) throw std::domain_error("config: gammas must be strictly increasing");
      if (g < 0.0 || g >= 1.0) throw std::domain_error("config: gamma outside [0,1)");
      prev = g;
    }
    // the method is documented unstable past 0.7: refuse, do not warn
    if (gammas.back() > 0.7 + 1e-12)
      throw std::domain_error("config: discount above 0.7 is refused");
    for (const auto& v : {phase_max_steps, plateau_window})
      if (v.size() != 1 && v.size() != gammas.size())
        throw std::domain_error("config: per-phase list length mismatch");
    if (plateau_threshold.size() != 1 && plateau_threshold.size() != gammas.size())
      throw std::domain_error("config: per-phase list length mismatch");
    for (long long m : phase_max_steps)
      if (m < 1) throw std::domain_error("config: phase_max_steps must be >= 1");
    for (long long w : plateau_window)
      if (w < 2) throw std::domain_error("config: plateau_window must be >= 2");
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0)
      throw std::domain_error("config: epsilon endpoints outside [0,1]");
    if (pe_pretrain_steps < 0 || warmup_adversarial < 0)
      throw std::domain_error("config: negative step counts");
    if (pe_batch < 1) throw std::domain_error("config: pe_batch must be positive");
    if (sampler_delta < 0.0) throw std::domain_error("config: sampler_delta must be >= 0");
    if (holdout_frac <= 0.0 || holdout_frac >= 1.0)
      throw std::domain_error("config: holdout_frac outside (0,1)");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw std::domain_error("config: dropout_rate outside [0,1)");
  }
};

namespace detail {

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, double>)
      s += fmt_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

// Field registry: one place defines parse, serialize, and the legal key set.
struct FieldIo {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  long long v = std::stoll(s, &pos);
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true/false");
}

template <class T, class Parse>
std::vector<T> parse_list(const std::string& s, Parse p) {
  std::vector<T> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    const std::string item =
        s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    out.push_back(p(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline const std::map<std::string, FieldIo>& config_fields() {
  static const std::map<std::string, FieldIo> fields = [] {
    std::map<std::string, FieldIo> m;
    auto add_f64 = [&](const std::string& k, double Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) { c.*p = parse_double(s); },
              [p](const Config& c) { return fmt_double(c.*p); }};
    };
    auto add_sim_f64 = [&](const std::string& k, double SimConfig::* p) {
      m[k] = {[p](Config& c, const std::string& s) { c.sim.*p = parse_double(s); },
              [p](const Config& c) { return fmt_double(c.sim.*p); }};
    };
    auto add_sim_int = [&](const std::string& k, int SimConfig::* p) {
      m[k] = {[p](Config& c, const std::string& s) { c.sim.*p = static_cast<int>(parse_int(s)); },
              [p](const Config& c) { return std::to_string(c.sim.*p); }};
    };
    auto add_size = [&](const std::string& k, std::size_t Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) {
                long long v = parse_int(s);
                if (v < 0) throw std::invalid_argument("must be non-negative");
                c.*p = static_cast<std::size_t>(v);
              },
              [p](const Config& c) { return std::to_string(c.*p); }};
    };
    auto add_i64 = [&](const std::string& k, long long Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) { c.*p = parse_int(s); },
              [p](const Config& c) { return std::to_string(c.*p); }};
    };
    auto add_bool = [&](const std::string& k, bool Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) { c.*p = parse_bool(s); },
              [p](const Config& c) { return c.*p ? std::string("true") : std::string("false"); }};
    };
    auto add_f64_list = [&](const std::string& k, std::vector<double> Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) {
                c.*p = parse_list<double>(s, parse_double);
              },
              [p](const Config& c) { return join_list(c.*p); }};
    };
    auto add_i64_list = [&](const std::string& k, std::vector<long long> Config::* p) {
      m[k] = {[p](Config& c, const std::string& s) {
                c.*p = parse_list<long long>(s, parse_int);
              },
              [p](const Config& c) { return join_list(c.*p); }};
    };

    add_sim_int("sim_n_policies", &SimConfig::n_policies);
    add_sim_int("sim_episodes_per_policy", &SimConfig::episodes_per_policy);
    add_sim_int("sim_min_len", &SimConfig::min_len);
    add_sim_int("sim_max_len", &SimConfig::max_len);
    add_sim_f64("sim_overlap_frac", &SimConfig::overlap_frac);
    add_sim_f64("sim_shift_noise", &SimConfig::shift_noise);
    add_sim_f64("sim_action_noise", &SimConfig::action_noise);
    add_sim_f64("sim_reward_noise", &SimConfig::reward_noise);

    add_size("hidden", &Config::hidden);
    add_size("br_dim", &Config::br_dim);
    add_size("critic_hidden", &Config::critic_hidden);
    add_size("cls_hidden", &Config::cls_hidden);
    add_size("window", &Config::window);

    add_f64("lr", &Config::lr);
    add_size("batch_size", &Config::batch_size);
    add_f64("tau", &Config::tau);
    add_f64("policy_noise", &Config::policy_noise);
    add_f64("noise_clip", &Config::noise_clip);
    add_i64("policy_freq", &Config::policy_freq);
    add_f64("bc_alpha", &Config::bc_alpha);
    add_f64("critic_mix_alpha", &Config::critic_mix_alpha);
    add_f64("lambda_grl", &Config::lambda_grl);
    add_i64("adversarial_steps", &Config::adversarial_steps);

    add_f64_list("gammas", &Config::gammas);
    add_i64_list("phase_max_steps", &Config::phase_max_steps);
    add_i64_list("plateau_window", &Config::plateau_window);
    add_f64_list("plateau_threshold", &Config::plateau_threshold);

    add_f64("eps_start", &Config::eps_start);
    add_f64("eps_end", &Config::eps_end);
    add_bool("eps_reset_per_phase", &Config::eps_reset_per_phase);

    add_bool("br_enabled", &Config::br_enabled);
    add_bool("explore_enabled", &Config::explore_enabled);
    add_bool("pe_head_trainable", &Config::pe_head_trainable);

    add_i64("pe_pretrain_steps", &Config::pe_pretrain_steps);
    add_size("pe_batch", &Config::pe_batch);
    add_i64("warmup_adversarial", &Config::warmup_adversarial);
    add_f64("sampler_delta", &Config::sampler_delta);

    add_f64("holdout_frac", &Config::holdout_frac);
    add_f64("dropout_rate", &Config::dropout_rate);
    return m;
  }();
  return fields;
}

}  // namespace detail

inline void apply_config_line(Config& cfg, const std::string& key, const std::string& value,
                              std::size_t lineno) {
  const auto& fields = detail::config_fields();
  auto it = fields.find(key);
  if (it == fields.end())
    throw std::runtime_error("config: unknown key '" + key + "' at line " +
                             std::to_string(lineno));
  try {
    it->second.set(cfg, value);
  } catch (const std::exception& e) {
    throw std::runtime_error("config: bad value for '" + key + "' at line " +
                             std::to_string(lineno) + ": " + e.what());
  }
}

// key = value lines; '#' starts a comment; blank lines ignored; unknown keys
// are an error.
inline Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    apply_config_line(cfg, key, value, lineno);
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical serialization: sorted keys, one per line. Equal configs produce
// identical text, which is what the checkpoint hash covers.
inline std::string config_text(const Config& cfg) {
  std::string out;
  for (const auto& [key, io] : detail::config_fields()) {
    out += key;
    out += " = ";
    out += io.get(cfg);
    out += "\n";
  }
  return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t config_hash(const Config& cfg) { return fnv1a64(config_text(cfg)); }

}  // namespace cfq
