#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bcp/cli.hpp>
#include <bcp/corpus.hpp>
#include <bcp/features.hpp>
#include <bcp/model.hpp>
#include <bcp/training.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace bcp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

void put_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI in-process with stdout and stderr captured.
struct CliRun {
  int exit_code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
  CliRun result;
  result.exit_code = run_cli(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  result.out = out.str();
  result.err = err.str();
  return result;
}

json error_json(const CliRun& r) {
  REQUIRE(r.exit_code == 1);
  return json::parse(r.err);
}

PcmAudio tone(double freq_step, std::size_t n_samples = 8000 * 6) {
  PcmAudio a;
  a.sample_rate = 8000;
  a.samples.resize(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i)
    a.samples[i] = static_cast<std::int16_t>(6000 * std::sin(freq_step * i));
  return a;
}

const char* kSwdaTsv =
    "dialog_id\tchannel\tspeaker_id\tstart_ms\tend_ms\ttext\tbc_marked\n"
    "d01\tA\tsp1\t100\t4200\tso I was telling her about the trip\t0\n"
    "d01\tB\tsp2\t4300\t4600\tyeah\t1\n"
    "d01\tA\tsp1\t4700\t5400\tand then we left\t0\n"
    "d01\tB\tsp2\t5450\t5700\tuh-huh\t1\n"
    "d02\tA\tsp3\t200\t4100\tthe meeting ran long again\t0\n"
    "d02\tB\tsp4\t4200\t4500\tright\t1\n"
    "d02\tB\tsp4\t5000\t5200\tyeah\t1\n";

}  // namespace

TEST_CASE("config files are key=value with comments") {
  TempDir dir("bcp_cli_cfg");
  put_file(dir.file("a.cfg"),
           "# leading comment\n"
           "\n"
           "  lr = 0.5  # trailing comment\n"
           "variant=ac_l\n");
  auto pairs = read_config_file(dir.file("a.cfg"));
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].first == "lr");
  CHECK(pairs[0].second == "0.5");
  CHECK(pairs[1].first == "variant");
  CHECK(pairs[1].second == "ac_l");

  put_file(dir.file("bad.cfg"), "lr=0.1\nnot a pair\n");
  CHECK_THROWS_WITH_AS(read_config_file(dir.file("bad.cfg")), doctest::Contains("line 2"),
                       Error);
  CHECK_THROWS_WITH_AS(read_config_file(dir.file("missing.cfg")),
                       doctest::Contains("IoFailure"), Error);
}

TEST_CASE("worker count comes from the environment") {
  unsetenv("BCPREDICT_THREADS");
  CHECK(threads_from_env() == 1);
  setenv("BCPREDICT_THREADS", "", 1);
  CHECK(threads_from_env() == 1);
  setenv("BCPREDICT_THREADS", "3", 1);
  CHECK(threads_from_env() == 3);
  setenv("BCPREDICT_THREADS", "abc", 1);
  CHECK_THROWS_WITH_AS(threads_from_env(), doctest::Contains("ConfigError"), Error);
  setenv("BCPREDICT_THREADS", "0", 1);
  CHECK_THROWS_WITH_AS(threads_from_env(), doctest::Contains("at least 1"), Error);
  unsetenv("BCPREDICT_THREADS");
}

TEST_CASE("bare invocation and help exit cleanly") {
  CHECK(run({}).exit_code == 0);
  CHECK(run({}).out.find("usage: bcpredict") != std::string::npos);
  CHECK(run({"--help"}).exit_code == 0);
  CHECK(run({"train", "--help"}).exit_code == 0);
  CHECK(run({"train", "--help"}).out.find("--manifest") != std::string::npos);
}

TEST_CASE("failures report one json line on stderr") {
  json unknown = error_json(run({"frobnicate"}));
  CHECK(unknown["code"] == "ConfigError");
  CHECK(std::string(unknown["message"]).find("frobnicate") != std::string::npos);

  json missing = error_json(run({"train", "--out-dir", "x"}));
  CHECK(missing["code"] == "ConfigError");
  CHECK(std::string(missing["message"]).find("--manifest") != std::string::npos);

  json flag = error_json(run({"synth", "--out-dir", "x", "--no-such-flag", "1"}));
  CHECK(flag["code"] == "ConfigError");

  json split = error_json(run({"eval", "--manifest", "m", "--checkpoint", "c", "--out-dir",
                               "x", "--split", "bogus"}));
  CHECK(std::string(split["message"]).find("bogus") != std::string::npos);
}

TEST_CASE("flags override config files which override defaults") {
  TempDir dir("bcp_cli_prec");
  put_file(dir.file("synth.cfg"), "n_instances=42\nrule=audio_only\nseed=9\n");
  fs::path out = dir.path / "corpus";
  CliRun r = run({"synth", "--config", dir.file("synth.cfg"), "--out-dir", out.string(),
                  "--n-instances", "35"});
  REQUIRE(r.exit_code == 0);

  json meta = json::parse(slurp((out / "run_meta.json").string()));
  CHECK(meta["command"] == "synth");
  CHECK(meta["tool"] == "bcpredict");
  CHECK(meta["config"]["n_instances"] == "35");  // flag beats file
  CHECK(meta["config"]["rule"] == "audio_only");  // file beats default
  CHECK(meta["config"]["seed"] == "9");
  CHECK(meta["config"]["n_frames"] == "48");  // untouched default
  CHECK(read_manifest((out / "manifest.jsonl").string()).size() == 35);

  put_file(dir.file("bad.cfg"), "no_such_key=1\n");
  json bad = error_json(run({"synth", "--config", dir.file("bad.cfg"), "--out-dir", "x"}));
  CHECK(std::string(bad["message"]).find("no_such_key") != std::string::npos);
}

TEST_CASE("synth, train, eval and embeddings chain together") {
  TempDir dir("bcp_cli_chain");
  fs::path corpus = dir.path / "corpus";
  CliRun s = run({"synth", "--out-dir", corpus.string(), "--rule", "audio_plus_listener",
                  "--n-frames", "12", "--n-instances", "60", "--n-speakers", "3"});
  REQUIRE(s.exit_code == 0);

  fs::path model = dir.path / "model";
  std::vector<std::string> train_args = {
      "train",          "--manifest",  (corpus / "manifest.jsonl").string(),
      "--out-dir",      model.string(), "--variant", "ac_l",
      "--filter-widths", "3",           "--n-filters", "8",
      "--pool-rows",    "2",            "--n-frames",  "12",
      "--embedding-len", "3",           "--head-hidden", "8",
      "--dropout-rate", "0.1",          "--max-epochs", "6",
      "--patience",     "6",            "--seed",       "7"};
  CliRun t = run(train_args);
  REQUIRE(t.exit_code == 0);
  CHECK(t.out.find("best epoch") != std::string::npos);
  CHECK(fs::exists(model / "model.ckpt"));
  CHECK(fs::exists(model / "history.csv"));
  CHECK(fs::exists(model / "dev_metrics.csv"));

  std::string history = slurp((model / "history.csv").string());
  CHECK(history.find("epoch,train_loss,dev_loss,dev_accuracy,dev_macro_f1") !=
        std::string::npos);
  TrainConfig expect;
  expect.model.variant = Variant::AC_L;
  expect.model.filter_widths = {3};
  expect.model.n_filters = 8;
  expect.model.pool_rows = 2;
  expect.model.n_frames = 12;
  expect.model.embedding_len = 3;
  expect.model.head_hidden = 8;
  expect.model.dropout_rate = 0.1;
  expect.max_epochs = 6;
  expect.patience = 6;
  expect.seed = 7;
  CHECK(history.find("config_hash=" + config_hash(expect)) != std::string::npos);
  CHECK(checkpoint_config_hash((model / "model.ckpt").string()) == config_hash(expect));

  // A second identical run reproduces every artifact byte for byte.
  fs::path model2 = dir.path / "model2";
  train_args[4] = model2.string();
  REQUIRE(run(train_args).exit_code == 0);
  CHECK(slurp((model / "model.ckpt").string()) == slurp((model2 / "model.ckpt").string()));
  CHECK(slurp((model / "history.csv").string()) == slurp((model2 / "history.csv").string()));
  CHECK(slurp((model / "run_meta.json").string()) !=
        slurp((model2 / "run_meta.json").string()));  // out_dir differs
  json meta = json::parse(slurp((model / "run_meta.json").string()));
  CHECK(meta["config"]["variant"] == "ac_l");
  CHECK(meta["artifacts"].size() == 3);

  fs::path ev = dir.path / "eval";
  CliRun e = run({"eval", "--manifest", (corpus / "manifest.jsonl").string(), "--checkpoint",
                  (model / "model.ckpt").string(), "--split", "dev", "--out-dir", ev.string(),
                  "--per-listener", "1"});
  REQUIRE(e.exit_code == 0);
  CHECK(e.out.find("macro_f1") != std::string::npos);
  CHECK(fs::exists(ev / "metrics_dev.csv"));
  std::string listener_csv = slurp((ev / "listener_f1.csv").string());
  CHECK(listener_csv.find("listener_id,macro_f1") != std::string::npos);
  CHECK(listener_csv.find("L000") != std::string::npos);
  std::string hist_svg = slurp((ev / "listener_f1_hist.svg").string());
  CHECK(hist_svg.find("<svg") != std::string::npos);
  std::string metrics = slurp((ev / "metrics_dev.csv").string());
  CHECK(metrics.find("split=dev") != std::string::npos);
  CHECK(metrics.find("config_hash=" + config_hash(expect)) != std::string::npos);

  fs::path emb = dir.path / "emb";
  CliRun g = run({"embeddings", "--checkpoint", (model / "model.ckpt").string(), "--out-dir",
                  emb.string()});
  REQUIRE(g.exit_code == 0);
  std::string emb_csv = slurp((emb / "embeddings_listener.csv").string());
  CHECK(emb_csv.find("id,pc1,pc2") != std::string::npos);
  CHECK(emb_csv.find("L000,") != std::string::npos);
  CHECK(slurp((emb / "embeddings_listener.svg").string()).find("class=\"centroid\"") !=
        std::string::npos);

  json spk = error_json(run({"embeddings", "--checkpoint", (model / "model.ckpt").string(),
                             "--which", "speaker", "--out-dir", emb.string()}));
  CHECK(spk["code"] == "InvalidConfig");  // ac_l has no speaker table
}

TEST_CASE("eval rejects a listener report for listener-free variants") {
  TempDir dir("bcp_cli_nolist");
  fs::path corpus = dir.path / "corpus";
  CliRun s = run({"synth", "--out-dir", corpus.string(), "--rule", "audio_only", "--n-frames",
                  "12", "--n-instances", "40", "--n-speakers", "3"});
  REQUIRE(s.exit_code == 0);
  fs::path model = dir.path / "model";
  CliRun t = run({"train", "--manifest", (corpus / "manifest.jsonl").string(), "--out-dir",
                  model.string(), "--variant", "ac", "--filter-widths", "3", "--n-filters",
                  "4", "--pool-rows", "2", "--n-frames", "12", "--head-hidden", "4",
                  "--dropout-rate", "0", "--max-epochs", "2", "--patience", "2"});
  REQUIRE(t.exit_code == 0);
  json err = error_json(run({"eval", "--manifest", (corpus / "manifest.jsonl").string(),
                             "--checkpoint", (model / "model.ckpt").string(), "--split", "dev",
                             "--out-dir", (dir.path / "ev").string(), "--per-listener", "1"}));
  CHECK(err["code"] == "VariantWithoutListener");
  json emb = error_json(run({"embeddings", "--checkpoint", (model / "model.ckpt").string(),
                             "--out-dir", (dir.path / "emb").string()}));
  CHECK(emb["code"] == "VariantWithoutListener");
}

TEST_CASE("features caches wav frames and rewrites the manifest") {
  TempDir dir("bcp_cli_feat");
  write_wav(dir.file("d01_A.wav"), tone(0.07));
  Matrix direct = mfcc(read_wav(dir.file("d01_A.wav")));

  // The cache quantizes to float32, so compare against a direct round trip.
  cache_write(dir.file("direct.bcmf"), direct);
  Matrix expected = cache_read(dir.file("direct.bcmf"));

  CliRun one = run({"features", "--wav", dir.file("d01_A.wav"), "--out", dir.file("one.bcmf")});
  REQUIRE(one.exit_code == 0);
  CHECK(cache_read(dir.file("one.bcmf")) == expected);

  std::vector<Instance> instances;
  for (int i = 0; i < 2; ++i) {
    Instance inst;
    inst.instance_id = "d01-A-" + std::to_string(4000 + i);
    inst.dialog_id = "d01";
    inst.channel = 'A';
    inst.speaker_id = "sp1";
    inst.listener_id = "sp2";
    inst.t_ms = 4000 + i;
    inst.label = i ? Label::Yeah : Label::NoBc;
    inst.split = i ? Split::Dev : Split::Train;
    inst.audio_path = "d01_A.wav";  // relative to the manifest
    instances.push_back(inst);
  }
  write_manifest(dir.file("manifest.jsonl"), instances);

  fs::path out = dir.path / "feat";
  CliRun r = run({"features", "--manifest", dir.file("manifest.jsonl"), "--out-dir",
                  out.string()});
  REQUIRE(r.exit_code == 0);
  CHECK(cache_read((out / "d01_A.bcmf").string()) == expected);

  std::vector<Instance> rewritten = read_manifest((out / "manifest.jsonl").string());
  REQUIRE(rewritten.size() == 2);
  for (const Instance& inst : rewritten) CHECK(inst.audio_path == "d01_A.bcmf");
  CHECK(rewritten[0].instance_id == instances[0].instance_id);

  // The rewritten manifest loads without touching the wav again.
  fs::remove(dir.file("d01_A.wav"));
  Dataset data = load_dataset((out / "manifest.jsonl").string(), 12);
  CHECK(data.instances.size() == 2);
  CHECK(data.windows[0].rows() == 12);

  json neither = error_json(run({"features"}));
  CHECK(std::string(neither["message"]).find("--wav or --manifest") != std::string::npos);
}

TEST_CASE("annotate labels marked rows and samples negatives") {
  TempDir dir("bcp_cli_annot");
  put_file(dir.file("trans.tsv"), kSwdaTsv);
  CliRun r = run({"annotate", "--transcript", dir.file("trans.tsv"), "--mode", "swda",
                  "--audio-dir", "audio", "--out", dir.file("out.jsonl"), "--train-frac",
                  "0.5", "--dev-frac", "0.5"});
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("1 rejected") != std::string::npos);  // "right" is not a known BC

  std::vector<Instance> instances = read_manifest(dir.file("out.jsonl"));
  REQUIRE(instances.size() == 5);

  const Instance& first = instances[0];
  CHECK(first.instance_id == "d01-A-4300");
  CHECK(first.label == Label::Yeah);
  CHECK(first.speaker_id == "sp1");   // channel A talks
  CHECK(first.listener_id == "sp2");  // channel B produced the BC
  CHECK(first.audio_path == "audio/d01_A.wav");
  CHECK(first.t_ms == 4300.0);
  CHECK(first.split == Split::Train);

  CHECK(instances[1].label == Label::UhHuh);
  int negatives = 0;
  for (const Instance& inst : instances)
    if (inst.label == Label::NoBc) {
      ++negatives;
      CHECK(inst.instance_id.find("-neg") != std::string::npos);
    }
  CHECK(negatives == 2);
  for (const Instance& inst : instances)
    if (inst.dialog_id == "d02") CHECK(inst.split == Split::Dev);
}

TEST_CASE("annotate geco mode keeps only overlapped short tokens") {
  TempDir dir("bcp_cli_geco");
  put_file(dir.file("trans.tsv"),
           "dialog_id\tchannel\tspeaker_id\tstart_ms\tend_ms\ttext\n"
           "g01\tA\tgA\t100\t6000\tdann sind wir nach hause gefahren\n"
           "g01\tB\t\t4200\t4500\tja\n"             // overlapped, short: BC
           "g01\tB\t\t6500\t6800\tja\n"              // no overlap: skipped
           "g01\tB\t\t4800\t5100\tvielleicht\n");    // overlapped, not in lexicon
  CliRun r = run({"annotate", "--transcript", dir.file("trans.tsv"), "--mode", "geco",
                  "--out", dir.file("out.jsonl"), "--train-frac", "1", "--dev-frac", "0"});
  REQUIRE(r.exit_code == 0);

  std::vector<Instance> instances = read_manifest(dir.file("out.jsonl"));
  std::size_t positives = 0;
  for (const Instance& inst : instances)
    if (inst.label != Label::NoBc) {
      ++positives;
      CHECK(inst.label == Label::Yeah);
      CHECK(inst.t_ms == 4200.0);
    }
  CHECK(positives == 1);

  // The unlabeled channel gets an id drawn from the known speakers.
  CHECK(instances[0].speaker_id == "gA");
  CHECK(instances[0].listener_id == "gA");
}

TEST_CASE("annotate rejects malformed transcripts") {
  TempDir dir("bcp_cli_badtsv");
  put_file(dir.file("nohdr.tsv"), "dialog_id\tchannel\tstart_ms\tend_ms\ttext\n");
  json hdr = error_json(run({"annotate", "--transcript", dir.file("nohdr.tsv"), "--mode",
                             "swda", "--out", "x"}));
  CHECK(std::string(hdr["message"]).find("speaker_id") != std::string::npos);

  put_file(dir.file("short.tsv"),
           "dialog_id\tchannel\tspeaker_id\tstart_ms\tend_ms\ttext\n"
           "d01\tA\tsp1\t100\t200\tok\n"
           "d01\tA\t100\t200\tmissing a cell\n");
  json row = error_json(run({"annotate", "--transcript", dir.file("short.tsv"), "--mode",
                             "swda", "--out", "x"}));
  CHECK(std::string(row["message"]).find("line 3") != std::string::npos);

  json mode = error_json(run({"annotate", "--transcript", dir.file("short.tsv"), "--mode",
                              "other", "--out", "x"}));
  CHECK(std::string(mode["message"]).find("swda or geco") != std::string::npos);
}

TEST_CASE("grid runs the whole search and writes ranked results") {
  TempDir dir("bcp_cli_grid");
  fs::path corpus = dir.path / "corpus";
  CliRun s = run({"synth", "--out-dir", corpus.string(), "--rule", "audio_only", "--n-frames",
                  "48", "--n-instances", "40", "--n-speakers", "3"});
  REQUIRE(s.exit_code == 0);

  fs::path out = dir.path / "grid";
  CliRun g = run({"grid", "--manifest", (corpus / "manifest.jsonl").string(), "--out-dir",
                  out.string(), "--widths", "10", "--filters", "16", "--dropouts", "0.1,0.3",
                  "--frames", "48", "--hiddens", "16", "--max-epochs", "1", "--patience",
                  "1"});
  REQUIRE(g.exit_code == 0);
  CHECK(g.out.find("2 runs") != std::string::npos);

  std::string csv = slurp((out / "grid_results.csv").string());
  CHECK(csv.find("rank,run,filter_width") != std::string::npos);
  CHECK(csv.find("run_000.ckpt") != std::string::npos);
  CHECK(csv.find("run_001.ckpt") != std::string::npos);
  ModelParams best = load_checkpoint((out / "run_000.ckpt").string());
  CHECK(best.cfg.n_frames == 48);

  json bad = error_json(run({"grid", "--manifest", (corpus / "manifest.jsonl").string(),
                             "--out-dir", out.string(), "--widths", "9", "--filters", "16",
                             "--dropouts", "0.1", "--frames", "48", "--hiddens", "16"}));
  CHECK(bad["code"] == "ConfigError");
  CHECK(std::string(bad["message"]).find("widths") != std::string::npos);
}
