// End-to-end tests of the cfq binary: exit-code contract, idempotence of
// every artifact-producing subcommand, and the resume path. Each case builds
// its own scratch directory under the system temp dir.

#include <sys/wait.h>
#include <unistd.h>

#include <catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef CFQ_BIN
#error "CFQ_BIN must be defined as the path to the cfq binary"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(CFQ_BIN) + " " + args;
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc >= 0);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) {
    dir = fs::temp_directory_path() /
          ("cfq_cli_" + name + "_" + std::to_string(static_cast<long>(::getpid())));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string p(const std::string& rel) const { return (dir / rel).string(); }
};

void write_tiny_config(const std::string& path, const std::string& extra = "") {
  std::ofstream out(path);
  REQUIRE(out.good());
  out << "sim_episodes_per_policy = 12\n"
         "sim_min_len = 3\n"
         "sim_max_len = 6\n"
         "hidden = 8\n"
         "br_dim = 8\n"
         "critic_hidden = 16\n"
         "cls_hidden = 8\n"
         "window = 4\n"
         "batch_size = 16\n"
         "gammas = 0.1,0.3\n"
         "phase_max_steps = 6\n"
         "pe_pretrain_steps = 8\n"
         "pe_batch = 8\n"
         "warmup_adversarial = 4\n"
      << extra;
}

// Shared fixture: tiny config + generated buffer in one scratch dir.
struct DataFixture : Scratch {
  explicit DataFixture(const std::string& name) : Scratch(name) {
    write_tiny_config(p("tiny.cfg"));
    REQUIRE(run("gen-data --config " + p("tiny.cfg") + " --seed 7 --out " + p("data") +
                " > /dev/null") == 0);
  }
  std::string cfg() const { return p("tiny.cfg"); }
  std::string buffer() const { return p("data/buffer.tsv"); }
};

}  // namespace

TEST_CASE("gen-data writes identical bytes on rerun") {
  Scratch s("gen");
  write_tiny_config(s.p("tiny.cfg"));
  const std::string base = "gen-data --config " + s.p("tiny.cfg") + " --seed 7 --out ";
  REQUIRE(run(base + s.p("a") + " > /dev/null") == 0);
  REQUIRE(run(base + s.p("b") + " > /dev/null") == 0);
  const std::string a = slurp(s.p("a/buffer.tsv"));
  REQUIRE(!a.empty());
  REQUIRE(a == slurp(s.p("b/buffer.tsv")));
  // a different seed must change the data
  REQUIRE(run("gen-data --config " + s.p("tiny.cfg") + " --seed 8 --out " + s.p("c") +
              " > /dev/null") == 0);
  REQUIRE(a != slurp(s.p("c/buffer.tsv")));
}

TEST_CASE("usage errors exit 1 and print usage") {
  Scratch s("usage");
  REQUIRE(run("train --bogus > /dev/null 2> " + s.p("err.txt")) == 1);
  const std::string err = slurp(s.p("err.txt"));
  REQUIRE(err.find("cfq: usage error:") != std::string::npos);
  REQUIRE(err.find("Usage") != std::string::npos);
  REQUIRE(run("> /dev/null 2> /dev/null") == 1);                // no subcommand
  REQUIRE(run("frobnicate > /dev/null 2> /dev/null") == 1);     // unknown subcommand
  REQUIRE(run("train > /dev/null 2> /dev/null") == 1);          // missing required options
  REQUIRE(run("diag --checkpoint x --buffer y --report bogus > /dev/null 2> /dev/null") == 1);
  REQUIRE(run("--help > /dev/null 2> /dev/null") == 0);
}

TEST_CASE("data and config errors exit 2 with a one-line reason") {
  DataFixture s("err2");
  REQUIRE(run("train --config " + s.cfg() + " --buffer " + s.p("nope.tsv") +
              " > /dev/null 2> " + s.p("err.txt")) == 2);
  std::string err = slurp(s.p("err.txt"));
  REQUIRE(err.substr(0, 11) == "cfq: error:");
  REQUIRE(err.find('\n') == err.size() - 1);  // exactly one line

  // unknown config key
  write_tiny_config(s.p("bad.cfg"), "no_such_key = 1\n");
  REQUIRE(run("train --config " + s.p("bad.cfg") + " --buffer " + s.buffer() +
              " > /dev/null 2> " + s.p("err2.txt")) == 2);
  REQUIRE(slurp(s.p("err2.txt")).find("no_such_key") != std::string::npos);
}

TEST_CASE("buffer missing a policy partition exits 2 with the documented reason") {
  DataFixture s("missing");
  // drop every policy-1 row (third space-separated field), keeping 0 and 2
  std::ifstream in(s.buffer());
  std::ofstream out(s.p("missing.tsv"));
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string ep, t, pol;
    ls >> ep >> t >> pol;
    if (pol != "1") out << line << '\n';
  }
  out.close();
  REQUIRE(run("train --config " + s.cfg() + " --buffer " + s.p("missing.tsv") +
              " > /dev/null 2> " + s.p("err.txt")) == 2);
  REQUIRE(slurp(s.p("err.txt")).find("missing policy partition 1") != std::string::npos);
}

TEST_CASE("train is deterministic and eval writes a simplex preference") {
  DataFixture s("train");
  const std::string t = "train --config " + s.cfg() + " --buffer " + s.buffer() + " --seed 3 ";
  REQUIRE(run(t + "--out " + s.p("r1") + " > /dev/null") == 0);
  REQUIRE(run(t + "--out " + s.p("r2") + " > /dev/null") == 0);
  REQUIRE(slurp(s.p("r1/metrics.tsv")) == slurp(s.p("r2/metrics.tsv")));
  REQUIRE(slurp(s.p("r1/checkpoint.bin")) == slurp(s.p("r2/checkpoint.bin")));

  REQUIRE(run("eval --checkpoint " + s.p("r1/checkpoint.bin") + " --buffer " + s.buffer() +
              " --out " + s.p("ev") + " > /dev/null") == 0);
  std::istringstream tsv(slurp(s.p("ev/eval_summary.tsv")));
  std::string key;
  std::getline(tsv, key);  // header
  REQUIRE(key == "key\tvalue");
  double value = 0.0, pref_sum = 0.0;
  bool saw_mean_q = false;
  while (tsv >> key >> value) {
    if (key == "mean_q") saw_mean_q = true;
    if (key.rfind("preference_", 0) == 0) pref_sum += value;
  }
  REQUIRE(saw_mean_q);
  REQUIRE(pref_sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("stop-after plus resume reproduces the unbroken run byte for byte") {
  DataFixture s("resume");
  const std::string t = "train --config " + s.cfg() + " --buffer " + s.buffer() + " --seed 5 ";
  REQUIRE(run(t + "--out " + s.p("whole") + " > /dev/null") == 0);
  REQUIRE(run(t + "--stop-after 5 --out " + s.p("part") + " > /dev/null") == 0);
  REQUIRE(run(t + "--resume " + s.p("part/checkpoint.bin") + " --out " + s.p("rest") +
              " > /dev/null") == 0);
  REQUIRE(slurp(s.p("rest/metrics.tsv")) == slurp(s.p("whole/metrics.tsv")));
  REQUIRE(slurp(s.p("rest/checkpoint.bin")) == slurp(s.p("whole/checkpoint.bin")));
}

TEST_CASE("resume under a different config exits 2 on the hash check") {
  DataFixture s("hash");
  const std::string t = "train --buffer " + s.buffer() + " --seed 5 ";
  REQUIRE(run(t + "--config " + s.cfg() + " --stop-after 3 --out " + s.p("part") +
              " > /dev/null") == 0);
  write_tiny_config(s.p("other.cfg"), "eps_start = 0.2\n");
  REQUIRE(run(t + "--config " + s.p("other.cfg") + " --resume " + s.p("part/checkpoint.bin") +
              " --out " + s.p("bad") + " > /dev/null 2> " + s.p("err.txt")) == 2);
  REQUIRE(slurp(s.p("err.txt")).find("config hash mismatch") != std::string::npos);
}

TEST_CASE("diag reports are pure functions of checkpoint, buffer, and seed") {
  DataFixture s("diag");
  REQUIRE(run("train --config " + s.cfg() + " --buffer " + s.buffer() + " --seed 3 --out " +
              s.p("run") + " > /dev/null") == 0);
  const std::string d = "diag --checkpoint " + s.p("run/checkpoint.bin") + " --buffer " +
                        s.buffer() + " --seed 11 ";
  for (const std::string rep : {"disparity", "q_spread", "objectives"}) {
    REQUIRE(run(d + "--max-states 60 --report " + rep + " --out " + s.p("d1") +
                " > /dev/null") == 0);
    REQUIRE(run(d + "--max-states 60 --report " + rep + " --out " + s.p("d2") +
                " > /dev/null") == 0);
    const std::string tsv = slurp(s.p("d1/" + rep + ".tsv"));
    REQUIRE(!tsv.empty());
    REQUIRE(tsv == slurp(s.p("d2/" + rep + ".tsv")));
    REQUIRE(slurp(s.p("d1/" + rep + ".svg")) == slurp(s.p("d2/" + rep + ".svg")));
  }
  REQUIRE(run(d + "--report uncertainty --passes 4 --max-states 6 --out " + s.p("d1") +
              " > /dev/null") == 0);
  REQUIRE(slurp(s.p("d1/uncertainty.tsv")).find("mean_std") != std::string::npos);
}

TEST_CASE("ablate reports the relative drop and accepts every flag") {
  DataFixture s("ablate");
  const std::string a = "ablate --config " + s.cfg() + " --buffer " + s.buffer() + " --seed 3 ";
  REQUIRE(run(a + "--which none --out " + s.p("a1") + " > " + s.p("out.txt")) == 0);
  const std::string tsv = slurp(s.p("a1/ablation_none.tsv"));
  // ablating nothing must leave the paired runs identical: drop exactly 0
  REQUIRE(tsv.find("relative_drop\t0\n") != std::string::npos);
  REQUIRE(run(a + "--which no_decomp --out " + s.p("a2") + " > /dev/null") == 0);
  REQUIRE(run(a + "--which bogus --out " + s.p("a3") + " > /dev/null 2> /dev/null") == 2);
}
