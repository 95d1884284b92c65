#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "concept_lens/cli.hpp"
#include "concept_lens/evaluator.hpp"
#include "concept_lens/store.hpp"
#include "test_util.hpp"

using namespace concept_lens;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = CONCEPT_LENS_FIXTURES;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
  json summary() const { return json::parse(out); }
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small class-structured dataset written under dir.
void make_dataset(const fs::path& dir, const std::string& classes = "4") {
  const Run r = run({"synth", "--dim", "32", "--concepts", "40", "--samples", "40", "--sparsity", "3", "--classes",
                     classes, "--seed", "3", "--out", dir.string()});
  REQUIRE(r.code == 0);
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), root).string(), read_text_file(e.path()));
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

TEST_CASE("help and usage errors") {
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("decompose") != std::string::npos);
  CHECK(run({"decompose", "--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  const Run missing = run({"decompose", "--out", "x"});
  CHECK(missing.code == 2);
  CHECK(json::parse(missing.err)["error"]["type"] == "usage");
}

TEST_CASE("synth writes a complete dataset") {
  testutil::TempDir tmp;
  const Run r = run({"synth", "--dim", "8", "--concepts", "10", "--samples", "12", "--sparsity", "2", "--out",
                     (tmp / "ds").string()});
  REQUIRE(r.code == 0);
  CHECK(r.summary()["samples"] == 12);
  for (const char* name : {"vocab", "audio", "prompts", "captions", "manifest.jsonl", "truth.jsonl"}) {
    CHECK(fs::exists(tmp / "ds" / name));
  }
  const Run bad = run({"synth", "--concepts", "3", "--sparsity", "5", "--out", (tmp / "bad").string()});
  CHECK(bad.code == 2);
  CHECK(json::parse(bad.err)["error"]["type"] == "validation");
}

TEST_CASE("build-vocab from the tag fixture") {
  testutil::TempDir tmp;
  const Run base = run({"build-vocab", "--construction", "baseline", "--tags", (kFixtures / "tags_tiny.csv").string(),
                        "--vocab-size", "10", "--out", (tmp / "base").string()});
  REQUIRE(base.code == 0);
  CHECK(base.summary()["size"] == 10);
  CHECK(read_concept_list(tmp / "base" / "concepts.txt").front() == "music");

  const Run pruned =
      run({"build-vocab", "--construction", "pruned", "--tags", (kFixtures / "tags_tiny.csv").string(), "--vocab-size",
           "10", "--pool", "18", "--synonyms", (kFixtures / "synonyms_tiny.txt").string(), "--blocklist",
           (kFixtures / "blocklist_tiny.txt").string(), "--wordlist", (kFixtures / "wordlist_tiny.txt").string(),
           "--propose-synonyms", "--out", (tmp / "pruned").string()});
  REQUIRE(pruned.code == 0);
  CHECK(read_text_file(tmp / "pruned" / "concept_counts.csv").find("cough,100\n") != std::string::npos);
  CHECK(fs::exists(tmp / "pruned" / "synonyms.proposed.txt"));
}

TEST_CASE("clustered vocabulary larger than its pool is a validation error") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  const Run r = run({"build-vocab", "--construction", "clustered", "--embeddings", (tmp / "ds" / "vocab").string(),
                     "--vocab-size", "41", "--out", (tmp / "v").string()});
  CHECK(r.code == 2);
  CHECK(json::parse(r.err)["error"]["type"] == "validation");
  const Run ok = run({"build-vocab", "--construction", "clustered", "--embeddings", (tmp / "ds" / "vocab").string(),
                      "--vocab-size", "8", "--out", (tmp / "v").string()});
  REQUIRE(ok.code == 0);
  CHECK(read_vocabulary(tmp / "v").size() == 8);
}

TEST_CASE("decompose writes codes, reports and profiles") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  const Run r = run({"decompose", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                     (tmp / "ds" / "audio").string(), "--manifest", (tmp / "ds" / "manifest.jsonl").string(),
                     "--lambda", "0.01", "--out", (tmp / "dec").string()});
  REQUIRE(r.code == 0);
  const json s = r.summary();
  CHECK(s["count"] == 40);
  CHECK(s["mean_reconstruction_cosine"].get<double>() > 0.99);
  CHECK(read_sparse_codes(tmp / "dec" / "codes.jsonl").size() == 40);
  CHECK(fs::exists(tmp / "dec" / "reports.jsonl"));
  CHECK(fs::exists(tmp / "dec" / "profiles" / "class_0.csv"));
}

TEST_CASE("decompose at lambda zero reproduces an orthonormal basis exactly") {
  testutil::TempDir tmp;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(4, 4);
  const EmbeddingSet basis = testutil::set_from_columns(I, "e");
  write_vocabulary(ConceptVocabulary{"basis", basis.ids(), basis, Construction::baseline}, tmp / "voc");
  Rng rng(1);
  Eigen::MatrixXd pos(4, 6);
  for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = 0.1 + uniform_unit(rng);
  write_embedding_set(testutil::set_from_columns(pos, "z", false), tmp / "emb");
  const Run r = run({"decompose", "--vocab", (tmp / "voc").string(), "--embeddings", (tmp / "emb").string(),
                     "--lambda", "0", "--out", (tmp / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.summary()["mean_reconstruction_cosine"].get<double>() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sweep, report and determinism") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  const Run sw = run({"sweep", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                      (tmp / "ds" / "audio").string(), "--manifest", (tmp / "ds" / "manifest.jsonl").string(),
                      "--prompts", (tmp / "ds" / "prompts").string(), "--metric", "accuracy", "--out",
                      (tmp / "sw").string()});
  REQUIRE(sw.code == 0);
  const auto rows = parse_sweep_csv(read_text_file(tmp / "sw" / "sweep.csv"));
  REQUIRE(rows.size() == 8);
  CHECK(rows.back().mean_l0 <= rows.front().mean_l0);
  CHECK(rows.back().mean_reconstruction_cosine <= rows.front().mean_reconstruction_cosine);

  const Run again = run({"sweep", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                         (tmp / "ds" / "audio").string(), "--manifest", (tmp / "ds" / "manifest.jsonl").string(),
                         "--prompts", (tmp / "ds" / "prompts").string(), "--metric", "accuracy", "--threads", "3",
                         "--out", (tmp / "sw2").string()});
  REQUIRE(again.code == 0);
  CHECK(read_text_file(tmp / "sw" / "sweep.csv") == read_text_file(tmp / "sw2" / "sweep.csv"));

  const Run rep = run({"report", "--sweep", (tmp / "sw" / "sweep.csv").string(), "--out", (tmp / "rep").string()});
  REQUIRE(rep.code == 0);
  for (const char* f : {"metric_vs_lambda.svg", "l0_vs_lambda.svg", "cosine_vs_lambda.svg"}) {
    CHECK(read_text_file(tmp / "rep" / f).rfind("<svg", 0) == 0);
  }

  make_dataset(tmp / "ds2");
  CHECK(tree(tmp / "ds") == tree(tmp / "ds2"));

  write_text_file(tmp / "broken.csv", "lambda,oops\n1,2\n");
  const Run broken = run({"report", "--sweep", (tmp / "broken.csv").string(), "--out", (tmp / "rep2").string()});
  CHECK(broken.code == 1);
  CHECK(json::parse(broken.err)["error"]["type"] == "format");
}

TEST_CASE("classify reports dense and concept accuracy") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  const Run r = run({"classify", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                     (tmp / "ds" / "audio").string(), "--manifest", (tmp / "ds" / "manifest.jsonl").string(),
                     "--prompts", (tmp / "ds" / "prompts").string(), "--lambda", "0.01", "--bootstrap", "200",
                     "--out", (tmp / "cls").string()});
  REQUIRE(r.code == 0);
  const json s = r.summary();
  CHECK(s["dense"]["value"] == 1.0);
  CHECK(s["concept"]["value"] == 1.0);
  CHECK(s["dense"]["ci_low"] <= s["dense"]["value"]);
  CHECK(fs::exists(tmp / "cls" / "predictions.jsonl"));
  CHECK(fs::exists(tmp / "cls" / "report.json"));

  const Run missing = run({"classify", "--embeddings", (tmp / "nope").string(), "--manifest",
                           (tmp / "ds" / "manifest.jsonl").string(), "--prompts", (tmp / "ds" / "prompts").string(),
                           "--out", (tmp / "cls2").string()});
  CHECK(missing.code == 1);
}

TEST_CASE("retrieve in both directions") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  for (const char* dir : {"text-audio", "audio-text"}) {
    const Run r = run({"retrieve", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                       (tmp / "ds" / "audio").string(), "--manifest", (tmp / "ds" / "manifest.jsonl").string(),
                       "--captions", (tmp / "ds" / "captions").string(), "--direction", dir, "--bootstrap", "100",
                       "--out", (tmp / dir).string()});
    REQUIRE(r.code == 0);
    const json s = r.summary();
    CHECK(s["dense"]["recall_at_1"]["value"].get<double>() >= 0.0);
    CHECK(s["concept"]["map_at_10"]["value"].get<double>() <= 1.0);
  }
  CHECK(run({"retrieve", "--embeddings", (tmp / "ds" / "audio").string(), "--manifest",
             (tmp / "ds" / "manifest.jsonl").string(), "--captions", (tmp / "ds" / "captions").string(),
             "--direction", "sideways", "--out", (tmp / "x").string()})
            .code == 2);
}

TEST_CASE("finetune trains and stores a projection") {
  testutil::TempDir tmp;
  make_dataset(tmp / "ds");
  const Run r = run({"finetune", "--embeddings", (tmp / "ds" / "audio").string(), "--manifest",
                     (tmp / "ds" / "manifest.jsonl").string(), "--prompts", (tmp / "ds" / "prompts").string(),
                     "--vocab", (tmp / "ds" / "vocab").string(), "--epochs", "20", "--identity-init", "--out",
                     (tmp / "ft").string()});
  REQUIRE(r.code == 0);
  const json s = r.summary();
  CHECK(s["best_loss"].get<double>() <= s["initial_loss"].get<double>());
  CHECK(s.contains("finetuned_concept_accuracy"));
  CHECK(fs::exists(tmp / "ft" / "projection" / "meta.json"));
  CHECK(fs::exists(tmp / "ft" / "loss.csv"));

  const Run projected = run({"decompose", "--vocab", (tmp / "ds" / "vocab").string(), "--embeddings",
                             (tmp / "ds" / "audio").string(), "--projection", (tmp / "ft" / "projection").string(),
                             "--out", (tmp / "pd").string()});
  CHECK(projected.code == 0);
}
