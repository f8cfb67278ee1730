#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>

#include "doctest.h"
#include "xmodal/binary_io.hpp"
#include "xmodal/cli.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/trainer.hpp"

using namespace xmodal;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "xmodal");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

std::string hash_of(const std::string& path) { return io::hex64(io::fnv1a64(io::read_file(path))); }

}  // namespace

TEST_CASE("generate is deterministic and its file size follows the format") {
  TempDir dir("xmodal_cli_gen");
  REQUIRE(run({"generate", "--clips", "6", "--seed", "7", "-o", dir / "a.xmsd"}).code == 0);
  REQUIRE(run({"generate", "--clips", "6", "--seed", "7", "-o", dir / "b.xmsd"}).code == 0);
  CHECK(hash_of(dir / "a.xmsd") == hash_of(dir / "b.xmsd"));
  // Header: magic 4, version 2, count 4, five u16 fields. Record: id 4, two
  // u16 labels, then f32 values for 8 frames of 40x40x3.
  const std::size_t record = 4 + 2 + 2 + 4 * 8 * 40 * 40 * 3;
  CHECK(fs::file_size(dir / "a.xmsd") == 20 + 6 * record);

  const auto manifest = nlohmann::json::parse(io::read_file(dir / "a.xmsd.manifest.json"));
  CHECK(manifest["command"] == "generate");
  CHECK(manifest["outputs"][0]["fnv1a64"] == hash_of(dir / "a.xmsd"));
}

TEST_CASE("generate reports preconditions with exit 2") {
  TempDir dir("xmodal_cli_gen_err");
  const auto r = run({"generate", "--clips", "1", "-o", dir / "a.xmsd"});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("need >= 2 clips") != std::string::npos);
  CHECK(run({"generate", "--clips", "4", "--frames", "3", "-o", dir / "a.xmsd"}).code == cli::kExitUsage);
  CHECK(run({"generate", "--clips", "4", "-o", "/proc/no/such/dir/a.xmsd"}).code == cli::kExitUsage);
  CHECK(run({"nonsense"}).code == cli::kExitUsage);
  CHECK(run({}).code == cli::kExitUsage);
}

TEST_CASE("XMODAL_SEED supplies the default seed") {
  TempDir dir("xmodal_cli_env");
  ::setenv("XMODAL_SEED", "7", 1);
  REQUIRE(run({"generate", "--clips", "4", "-o", dir / "env.xmsd"}).code == 0);
  ::unsetenv("XMODAL_SEED");
  REQUIRE(run({"generate", "--clips", "4", "--seed", "7", "-o", dir / "flag.xmsd"}).code == 0);
  REQUIRE(run({"generate", "--clips", "4", "-o", dir / "zero.xmsd"}).code == 0);
  CHECK(hash_of(dir / "env.xmsd") == hash_of(dir / "flag.xmsd"));
  CHECK(hash_of(dir / "env.xmsd") != hash_of(dir / "zero.xmsd"));
}

TEST_CASE("train with zero iterations writes the initial model") {
  TempDir dir("xmodal_cli_train0");
  REQUIRE(run({"generate", "--clips", "30", "--seed", "1", "-o", dir / "d.xmsd"}).code == 0);
  const auto r = run({"train", "--data", dir / "d.xmsd", "-o", dir / "run", "--mode", "full", "--iters", "0",
                      "--seed", "4"});
  REQUIRE(r.code == 0);
  TrainingConfig cfg;
  cfg.seed = 4;
  CHECK(io::read_file(dir / "run/final.xmck") == init_model_for(cfg, 4).serialize());
}

TEST_CASE("train flags override the config file which overrides defaults") {
  TempDir dir("xmodal_cli_prec");
  REQUIRE(run({"generate", "--clips", "30", "--seed", "1", "-o", dir / "d.xmsd"}).code == 0);
  io::write_file(dir / "cfg.txt", "total_iterations=2\ntuples=4\nmomentum=0.5\nseed=3\n");
  const auto r = run({"train", "--data", dir / "d.xmsd", "-o", dir / "run", "--config", dir / "cfg.txt", "--seed", "9"});
  REQUIRE(r.code == 0);
  const auto cfg = TrainingConfig::from_text(io::read_file(dir / "run/config.txt"));
  CHECK(cfg.total_iterations == 2);
  CHECK(cfg.momentum == 0.5);
  CHECK(cfg.seed == 9);
  CHECK(cfg.weight_decay == TrainingConfig{}.weight_decay);

  const auto manifest = nlohmann::json::parse(io::read_file(dir / "run/manifest.json"));
  CHECK(manifest["config"] == io::read_file(dir / "run/config.txt"));
  CHECK(manifest["inputs"]["dataset"]["fnv1a64"] == hash_of(dir / "d.xmsd"));
  for (const auto& o : manifest["outputs"]) CHECK(o["fnv1a64"] == hash_of(o["path"].get<std::string>()));
  CHECK(parse_metrics_csv(io::read_file(dir / "run/metrics.csv")).size() == 2);
}

TEST_CASE("train is byte-identical across runs") {
  TempDir dir("xmodal_cli_det");
  REQUIRE(run({"generate", "--clips", "30", "--seed", "1", "-o", dir / "d.xmsd"}).code == 0);
  for (const char* sub : {"a", "b"})
    REQUIRE(run({"train", "--data", dir / "d.xmsd", "-o", dir / sub, "--iters", "3", "--tuples", "4",
                 "--checkpoint-every", "2"})
                .code == 0);
  for (const char* f : {"final.xmck", "ckpt_2.xmck", "metrics.csv", "config.txt"})
    CHECK(hash_of(dir / (std::string("a/") + f)) == hash_of(dir / (std::string("b/") + f)));
}

TEST_CASE("train exit codes for bad inputs and numerical aborts") {
  TempDir dir("xmodal_cli_train_err");
  REQUIRE(run({"generate", "--clips", "30", "--seed", "1", "-o", dir / "d.xmsd"}).code == 0);
  const auto bad_mode = run({"train", "--data", dir / "d.xmsd", "-o", dir / "r", "--mode", "both"});
  CHECK(bad_mode.code == cli::kExitUsage);
  CHECK(bad_mode.err.find(kLossModeList) != std::string::npos);

  std::string bytes = io::read_file(dir / "d.xmsd");
  bytes[4] = 9;  // version field
  io::write_file(dir / "bad.xmsd", bytes);
  const auto corrupt = run({"train", "--data", dir / "bad.xmsd", "-o", dir / "r"});
  CHECK(corrupt.code == cli::kExitUsage);
  CHECK(corrupt.err.find("version") != std::string::npos);
  CHECK(run({"train", "--data", dir / "missing.xmsd", "-o", dir / "r"}).code == cli::kExitUsage);

  const auto abort = run({"train", "--data", dir / "d.xmsd", "-o", dir / "r", "--iters", "10", "--tuples", "4",
                          "--lr", "1e300"});
  CHECK(abort.code == cli::kExitNumerical);
  CHECK(abort.err.find("iteration") != std::string::npos);
}

TEST_CASE("eval writes probe, retrieval and saliency records") {
  TempDir dir("xmodal_cli_eval");
  REQUIRE(run({"generate", "--clips", "60", "--seed", "2", "-o", dir / "d.xmsd"}).code == 0);
  REQUIRE(run({"train", "--data", dir / "d.xmsd", "-o", dir / "run", "--iters", "2", "--tuples", "4"}).code == 0);
  const auto r = run({"eval", "--checkpoint", dir / "run/final.xmck", "--data", dir / "d.xmsd", "--min-per-class", "2",
                      "--saliency-dir", dir / "sal", "--saliency-count", "2", "-o", dir / "eval.txt"});
  REQUIRE(r.code == 0);
  const std::string text = io::read_file(dir / "eval.txt");
  CHECK(text == r.out);
  std::istringstream lines(text);
  std::string probe_text, line;
  std::size_t retrieval = 0, saliency = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("arm=", 0) == 0) probe_text += line + "\n";
    retrieval += line.rfind("retrieval ", 0) == 0;
    saliency += line.rfind("saliency ", 0) == 0;
  }
  CHECK(eval::AblationReport::parse(probe_text).records.size() == 4);
  CHECK(retrieval == 1);
  CHECK(saliency == 2);
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(dir / "sal")) pgm += e.path().extension() == ".pgm";
  CHECK(pgm == 2);

  const auto again = run({"eval", "--checkpoint", dir / "run/final.xmck", "--data", dir / "d.xmsd", "--min-per-class",
                          "2", "--saliency-dir", dir / "sal2", "--saliency-count", "2"});
  CHECK(again.out == text);
}

TEST_CASE("eval rejects k at the eval-set size and missing checkpoints") {
  TempDir dir("xmodal_cli_eval_err");
  REQUIRE(run({"generate", "--clips", "30", "--seed", "2", "-o", dir / "d.xmsd"}).code == 0);
  REQUIRE(run({"train", "--data", dir / "d.xmsd", "-o", dir / "run", "--iters", "0"}).code == 0);
  // Every third clip is held out: 10 test clips.
  CHECK(run({"eval", "--checkpoint", dir / "run/final.xmck", "--data", dir / "d.xmsd", "-k", "10"}).code ==
        cli::kExitUsage);
  const auto missing = run({"eval", "--checkpoint", dir / "nope.xmck", "--data", dir / "d.xmsd"});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find("checkpoint") != std::string::npos);
}

TEST_CASE("report reproduces report values verbatim") {
  TempDir dir("xmodal_cli_report");
  std::string text;
  const char* arms[] = {"random_init", "div_only", "concat", "full"};
  const char* values[] = {"0.25", "0.2475", "0.3125", "0.61875"};
  for (int i = 0; i < 4; ++i)
    text += std::string("arm=") + arms[i] + " task=shape_class modality=rgb accuracy=" + values[i] +
            " n_train=400 n_test=200 seed=1 status=ok\n";
  io::write_file(dir / "r.txt", text);
  const auto r = run({"report", dir / "r.txt", "-o", dir / "t.txt"});
  REQUIRE(r.code == 0);
  for (const char* v : values) CHECK(r.out.find(v) != std::string::npos);
  CHECK(r.out.find("Random weights") < r.out.find("Only L_div"));
  CHECK(r.out.find("Concat") < r.out.find("Our"));
  CHECK(io::read_file(dir / "t.txt") == r.out);
  CHECK(run({"report", dir / "missing.txt"}).code == cli::kExitUsage);
}

TEST_CASE("ablate writes a report for the requested arms") {
  TempDir dir("xmodal_cli_ablate");
  REQUIRE(run({"generate", "--clips", "90", "--seed", "2", "-o", dir / "d.xmsd"}).code == 0);
  const auto r = run({"ablate", "--data", dir / "d.xmsd", "-o", dir / "ab", "--iters", "2", "--tuples", "4", "--arms",
                      "full", "random_init"});
  REQUIRE(r.code == 0);
  const auto rep = eval::AblationReport::parse(io::read_file(dir / "ab/report.txt"));
  CHECK(rep.records.size() == 2 * 2 * 2);
  CHECK(fs::exists(dir / "ab/full/final.xmck"));
  CHECK(fs::exists(dir / "ab/random_init/final.xmck"));
  CHECK(io::read_file(dir / "ab/table.txt") == eval::render_table(rep));
  CHECK(run({"ablate", "--data", dir / "d.xmsd", "-o", dir / "ab2", "--arms", "nope"}).code == cli::kExitUsage);
}

TEST_CASE("help lists every flag with the library defaults") {
  const auto t = run({"train", "--help"});
  CHECK(t.code == 0);
  const TrainingConfig d;
  for (const char* flag : {"--tuples", "--epsilon", "--lr-initial", "--momentum", "--weight-decay", "--loss-mode",
                           "--total-iterations", "--crop-size", "--channel-split", "--temporal-flip", "--seed"})
    CHECK(t.out.find(flag) != std::string::npos);
  CHECK(t.out.find("[0.01]") != std::string::npos);
  CHECK(t.out.find("[0.9]") != std::string::npos);
  CHECK(t.out.find("[" + std::to_string(d.total_iterations) + "]") != std::string::npos);
  CHECK(t.out.find("[32]") != std::string::npos);
  for (const char* sub : {"generate", "eval", "ablate", "report"}) CHECK(run({sub, "--help"}).code == 0);
  CHECK(run({"generate", "--help"}).out.find("[600]") != std::string::npos);
}
