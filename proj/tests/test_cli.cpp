#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmatch/cli.hpp"

using namespace xmatch;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("cli exit codes") {
  TempDir tmp("xmatch_cli_unit");
  CHECK(run_cli({"synth", "--out", tmp / "data", "--seed", "7", "--users", "30"}) == 0);
  CHECK(fs::exists(tmp / "data/events.tsv"));
  CHECK(fs::exists(tmp / "data/truth.tsv"));
  CHECK(fs::exists(tmp / "data/manifest.json"));

  CHECK(run_cli({"--bogus"}) == 2);
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"candidates", "--out", tmp / "c.tsv"}) == 2);
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"train", "joint", "--events", tmp / "missing.tsv", "--features", tmp / "f.tsv", "--pairs",
                 tmp / "data/truth.tsv", "--candidates", tmp / "c.tsv", "--out", tmp / "m.json"}) == 1);

  write(tmp / "bad.tsv", "c1\tten\thttp://a.com\n");
  CHECK(run_cli({"candidates", "--events", tmp / "bad.tsv", "--out", tmp / "c.tsv"}) == 1);
}

TEST_CASE("cli pipeline and manifest") {
  TempDir tmp("xmatch_cli_pipeline");
  REQUIRE(run_cli({"synth", "--out", tmp / "d", "--seed", "3", "--users", "60"}) == 0);
  REQUIRE(run_cli({"candidates", "--events", tmp / "d/events.tsv", "--pairs", tmp / "d/truth_train.tsv", "--out",
                   tmp / "cand.tsv", "--seq-len", "16"}) == 0);
  REQUIRE(run_cli({"features", "--events", tmp / "d/events.tsv", "--candidates", tmp / "cand.tsv", "--out",
                   tmp / "feat.tsv", "--seq-len", "16"}) == 0);
  REQUIRE(run_cli({"train", "logreg", "--features", tmp / "feat.tsv", "--pairs", tmp / "d/truth_train.tsv",
                   "--candidates", tmp / "cand.tsv", "--out", tmp / "lr.json"}) == 0);
  REQUIRE(run_cli({"predict", "--model", tmp / "lr.json", "--candidates", tmp / "cand.tsv", "--features",
                   tmp / "feat.tsv", "--out", tmp / "pred.tsv"}) == 0);
  REQUIRE(run_cli({"eval", "--predictions", tmp / "pred.tsv", "--pairs", tmp / "d/truth_train.tsv", "--out",
                   tmp / "report.txt"}) == 0);
  CHECK(fs::file_size(tmp / "report.txt") > 0);

  std::ifstream in(tmp / "lr.json.manifest.json");
  auto m = nlohmann::json::parse(in);
  CHECK(m["subcommand"] == "train logreg");
  CHECK(m["tool"] == "xmatch");
  CHECK(m["params"]["features"] == tmp / "feat.tsv");

  // Every candidate labeled positive: a single-class training set.
  {
    std::ifstream cands(tmp / "cand.tsv");
    std::ofstream all(tmp / "all_pairs.tsv");
    for (std::string line; std::getline(cands, line);) all << line.substr(0, line.rfind('\t')) << '\n';
  }
  CHECK(run_cli({"train", "logreg", "--features", tmp / "feat.tsv", "--pairs", tmp / "all_pairs.tsv", "--candidates",
                 tmp / "cand.tsv", "--out", tmp / "lr2.json"}) == 1);
  // Tuning flags must come together.
  CHECK(run_cli({"eval", "--predictions", tmp / "pred.tsv", "--pairs", tmp / "d/truth_train.tsv", "--out",
                 tmp / "r2.txt", "--valid-pairs", tmp / "d/truth_valid.tsv"}) == 2);
}
