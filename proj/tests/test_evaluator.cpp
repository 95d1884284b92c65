#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "concept_lens/errors.hpp"
#include "concept_lens/evaluator.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace concept_lens;

namespace {

PromptBank bank_from(const Eigen::MatrixXd& rows_as_columns, std::vector<std::string> labels) {
  EmbeddingSet set = testutil::set_from_columns(rows_as_columns, "p");
  return PromptBank{kDefaultPromptTemplate, std::move(labels), set};
}

std::vector<std::vector<double>> to_rows(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    out.push_back(r);
  }
  return out;
}

ConceptVocabulary vocab_from(const Eigen::MatrixXd& C, const std::string& id) {
  EmbeddingSet set = testutil::set_from_columns(C, id + "_c");
  return ConceptVocabulary{id, set.ids(), set, Construction::baseline};
}

}  // namespace

TEST_CASE("prompt templates") {
  CHECK(expand_template(kDefaultPromptTemplate, "dog barking") == "This is a sound of dog barking.");
  CHECK_THROWS_AS(expand_template("no placeholder", "x"), ValidationError);
  CHECK_THROWS_AS(expand_template("[class label] [class label]", "x"), ValidationError);

  const EmbeddingSet store({"This is a sound of dog.", "cat"}, 2, {3, 4, 1, 0}, false);
  const PromptBank bank = make_prompt_bank(kDefaultPromptTemplate, {"dog", "cat"}, store);
  CHECK(bank.prompt_embeddings.ids() == std::vector<std::string>{"This is a sound of dog.", "cat"});
  CHECK(bank.matrix()(0, 0) == doctest::Approx(0.6));
  CHECK_THROWS_WITH_AS(make_prompt_bank(kDefaultPromptTemplate, {"bird"}, store), doctest::Contains("bird"),
                       ValidationError);
  CHECK_THROWS_AS(make_prompt_bank(kDefaultPromptTemplate, {}, store), ValidationError);
}

TEST_CASE("classify worked examples") {
  const PromptBank bank = bank_from(Eigen::MatrixXd::Identity(3, 3), {"a", "b", "c"});
  Eigen::MatrixXd x(1, 3);
  x << 0, 0, 2.5;
  const auto p = classify(x, bank);
  CHECK(p[0].label_index == 2);
  CHECK(p[0].logits[0] == 0.0);
  CHECK(p[0].logits[2] == doctest::Approx(1.0));

  const PromptBank two = bank_from(Eigen::MatrixXd::Identity(2, 2), {"a", "b"});
  Eigen::MatrixXd orth(1, 2);
  orth << 0, 0;
  const auto tie = classify(orth, two);
  CHECK(tie[0].label_index == 0);
  CHECK(tie[0].probabilities[0] == doctest::Approx(0.5));
  CHECK(tie[0].probabilities[1] == doctest::Approx(0.5));

  Eigen::VectorXd logits(2);
  logits << 0.9, 0.1;
  const Eigen::VectorXd sm = softmax(logits);
  CHECK(std::abs(sm[0] - 0.6900) <= 1e-4);
  CHECK(std::abs(sm[1] - 0.3100) <= 1e-4);
}

TEST_CASE("softmax is positive and sums to one") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    Eigen::VectorXd l(static_cast<Eigen::Index>(1 + uniform_index(rng, 20)));
    for (Eigen::Index i = 0; i < l.size(); ++i) l[i] = standard_normal(rng) * 30;
    const Eigen::VectorXd p = softmax(l);
    CHECK(p.minCoeff() > 0.0);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-6);
  }
}

TEST_CASE("classification is invariant to positive rescaling") {
  Rng rng(2);
  const PromptBank bank = bank_from(testutil::random_dictionary(rng, 8, 5), {"a", "b", "c", "d", "e"});
  Eigen::MatrixXd x(30, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = standard_normal(rng);
  const auto base = classify(x, bank);
  for (double s : {1e-3, 0.5, 7.0, 1e4}) {
    const auto scaled = classify(s * x, bank);
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(scaled[i].label_index == base[i].label_index);
  }
}

TEST_CASE("accuracy and F1 worked examples") {
  using V = std::vector<std::size_t>;
  CHECK(accuracy(V{0, 1, 2}, V{0, 1, 2}) == 1.0);
  CHECK(accuracy(V{1, 0}, V{0, 1}) == 0.0);
  CHECK(accuracy(V{0, 1, 1, 1}, V{0, 1, 1, 0}) == 0.75);
  CHECK_THROWS_AS(accuracy(V{}, V{}), ValidationError);
  CHECK_THROWS_AS(accuracy(V{0}, V{0, 1}), ValidationError);

  CHECK(macro_f1(V{0, 1, 0}, V{0, 1, 0}, 2) == 1.0);
  CHECK(macro_f1(V{0, 1, 1, 1}, V{0, 0, 1, 1}, 2) == doctest::Approx(0.7333333333).epsilon(1e-9));
  CHECK(macro_f1(V{0, 0, 0, 0}, V{0, 0, 1, 1}, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(f1_score(V{0, 1, 1, 1}, V{0, 0, 1, 1}, 2, F1Average::micro) == doctest::Approx(0.75));
  CHECK_THROWS_AS(macro_f1(V{}, V{}, 2), ValidationError);
}

TEST_CASE("average precision worked examples") {
  CHECK(*average_precision(std::vector<double>{0.9, 0.8, 0.2, 0.1}, {true, true, false, false}) == 1.0);
  CHECK(*average_precision(std::vector<double>{0.9, 0.8, 0.7, 0.1}, {false, false, true, false}) ==
        doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(average_precision(std::vector<double>{0.1, 0.2}, {false, false}).has_value());

  Eigen::MatrixXd scores(4, 2);
  scores << 0.9, 0.9, 0.8, 0.8, 0.2, 0.7, 0.1, 0.1;
  const std::vector<std::vector<bool>> gold{{true, false}, {true, false}, {false, true}, {false, false}};
  CHECK(mean_average_precision(scores, gold) == doctest::Approx(2.0 / 3.0));
  CHECK_THROWS_AS(mean_average_precision(scores, std::vector<std::vector<bool>>(4, {false, false})), ValidationError);
}

TEST_CASE("classification metrics match brute-force oracles on 200 random instances") {
  Rng rng(4242);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 40);
    const std::size_t k = 1 + uniform_index(rng, 6);
    std::vector<std::size_t> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = uniform_index(rng, k);
      gold[i] = uniform_index(rng, k);
    }
    CHECK(std::abs(accuracy(pred, gold) - oracle::accuracy(pred, gold)) <= 1e-9);
    CHECK(std::abs(macro_f1(pred, gold, k) - oracle::macro_f1(pred, gold, k)) <= 1e-9);

    Eigen::MatrixXd scores(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    std::vector<std::vector<bool>> labels(n, std::vector<bool>(k));
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        // Coarse scores so ties occur.
        scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = static_cast<double>(uniform_index(rng, 5));
        labels[i][c] = uniform_unit(rng) < 0.3;
        any = any || labels[i][c];
      }
    }
    if (!any) labels[0][0] = true;
    CHECK(std::abs(mean_average_precision(scores, labels) - oracle::mean_average_precision(to_rows(scores), labels)) <=
          1e-9);
  }
}

TEST_CASE("retrieval worked examples") {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
  const std::vector<std::string> ids{"g0", "g1", "g2"};
  const auto perfect = retrieve(I, I, ids, {{"g0"}, {"g1"}, {"g2"}});
  CHECK(perfect.recall_at_1 == 1.0);
  CHECK(perfect.map_at_10 == 1.0);

  Eigen::MatrixXd q(1, 3);
  q << 0.9, 0.5, 0.1;
  const auto third = retrieve(q, I, ids, {{"g2"}});
  CHECK(third.recall_at_1 == 0.0);
  CHECK(third.map_at_10 == doctest::Approx(1.0 / 3.0));

  Eigen::MatrixXd g5 = Eigen::MatrixXd::Identity(5, 5);
  Eigen::MatrixXd q5(1, 5);
  q5 << 0.9, 0.8, 0.7, 0.6, 0.5;
  const auto two = retrieve(q5, g5, {"a", "b", "c", "d", "e"}, {{"b", "e"}});
  CHECK(two.map_at_10 == doctest::Approx(0.45));

  CHECK_THROWS_AS(retrieve(q, Eigen::MatrixXd(0, 3), {}, {{"x"}}), ValidationError);
  CHECK_THROWS_AS(retrieve(q, I, ids, {{}}), ValidationError);
}

TEST_CASE("retrieval metrics match the brute-force oracle on 200 random instances") {
  Rng rng(777);
  for (int t = 0; t < 200; ++t) {
    const auto d = static_cast<Eigen::Index>(2 + uniform_index(rng, 5));
    const auto ng = static_cast<Eigen::Index>(1 + uniform_index(rng, 25));
    const auto nq = static_cast<Eigen::Index>(1 + uniform_index(rng, 8));
    Eigen::MatrixXd g(ng, d), q(nq, d);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = standard_normal(rng);
    if (ng > 2) g.row(1) = g.row(0);  // exact score tie
    std::vector<std::string> ids;
    for (Eigen::Index i = 0; i < ng; ++i) ids.push_back("id" + std::to_string(uniform_index(rng, 1000000)) + "_" + std::to_string(i));
    std::vector<std::set<std::string>> rel(static_cast<std::size_t>(nq));
    for (auto& r : rel) {
      const std::size_t m = 1 + uniform_index(rng, static_cast<std::uint64_t>(std::min<Eigen::Index>(ng, 12)));
      while (r.size() < m) r.insert(ids[uniform_index(rng, static_cast<std::uint64_t>(ng))]);
    }
    const auto got = retrieve(q, g, ids, rel);
    const auto want = oracle::retrieval(to_rows(q), to_rows(g), ids, rel);
    CHECK(std::abs(got.recall_at_1 - want.recall_at_1) <= 1e-9);
    CHECK(std::abs(got.map_at_10 - want.map_at_10) <= 1e-9);
  }
}

TEST_CASE("retrieval is invariant to gallery permutation") {
  Rng rng(15);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index ng = 12;
    Eigen::MatrixXd g(ng, 4), q(5, 4);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = standard_normal(rng);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = standard_normal(rng);
    std::vector<std::string> ids;
    for (Eigen::Index i = 0; i < ng; ++i) ids.push_back("g" + std::to_string(i));
    std::vector<std::set<std::string>> rel(5);
    for (auto& r : rel) r = {ids[uniform_index(rng, 12)], ids[uniform_index(rng, 12)]};
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(ng));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    Eigen::MatrixXd gp(ng, 4);
    std::vector<std::string> idp;
    for (Eigen::Index i = 0; i < ng; ++i) {
      gp.row(i) = g.row(perm[static_cast<std::size_t>(i)]);
      idp.push_back(ids[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    const auto a = retrieve(q, g, ids, rel);
    const auto b = retrieve(q, gp, idp, rel);
    CHECK(a.recall_at_1 == b.recall_at_1);
    CHECK(a.map_at_10 == doctest::Approx(b.map_at_10).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap intervals") {
  auto mean = [](std::span<const double> v) {
    return std::optional<double>(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
  };
  const std::vector<double> same(50, 0.7);
  const Interval flat = bootstrap_ci(same, mean, 200, 1);
  CHECK(flat.low == doctest::Approx(0.7));
  CHECK(flat.high == doctest::Approx(0.7));

  Rng rng(8);
  std::vector<double> coin(1000);
  for (auto& c : coin) c = uniform_unit(rng) < 0.5 ? 1.0 : 0.0;
  const Interval a = bootstrap_ci(coin, mean, 1000, 99);
  const Interval b = bootstrap_ci(coin, mean, 1000, 99);
  CHECK(a.low == b.low);
  CHECK(a.high == b.high);
  const double half = (a.high - a.low) / 2.0;
  CHECK(half >= 0.02);
  CHECK(half <= 0.05);
  CHECK(half == doctest::Approx(oracle::binomial_half_width(0.5, 1000)).epsilon(0.15));
  const double point = *mean(coin);
  CHECK(a.low <= point);
  CHECK(point <= a.high);
}

TEST_CASE("bootstrap redraws undefined resamples and gives up eventually") {
  // Defined only when the resample contains a 1.
  std::vector<int> outcomes(10, 0);
  outcomes[0] = 1;
  auto needs_one = [](std::span<const int> v) -> std::optional<double> {
    if (std::find(v.begin(), v.end(), 1) == v.end()) return std::nullopt;
    return 1.0;
  };
  const Interval ci = bootstrap_ci(outcomes, needs_one, 100, 5);
  CHECK(ci.low == 1.0);
  CHECK(ci.high == 1.0);

  // Defined only when every draw is distinct, which almost never happens.
  std::vector<int> distinct(20);
  std::iota(distinct.begin(), distinct.end(), 0);
  auto all_distinct = [](std::span<const int> v) -> std::optional<double> {
    std::set<int> seen(v.begin(), v.end());
    if (seen.size() != v.size()) return std::nullopt;
    return 1.0;
  };
  CHECK_THROWS_AS(bootstrap_ci(distinct, all_distinct, 100, 5), Error);
  CHECK_THROWS_AS(bootstrap_ci(std::vector<int>{}, needs_one, 10, 5), ValidationError);
  CHECK_THROWS_AS(bootstrap_ci(outcomes, needs_one, 0, 5), ValidationError);
}

TEST_CASE("bootstrap interval contains the point estimate") {
  Rng rng(19);
  auto mean = [](std::span<const double> v) {
    return std::optional<double>(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
  };
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(2 + uniform_index(rng, 30));
    for (auto& x : v) x = std::exp(standard_normal(rng) * 2);
    const Interval ci = bootstrap_ci(v, mean, 50, t);
    const double p = *mean(v);
    CHECK(ci.low <= p);
    CHECK(p <= ci.high);
  }
}

TEST_CASE("quantile interpolation") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({5}, 0.9) == 5.0);
  CHECK(quantile({3, 1, 2}, 0.0) == 1.0);
  CHECK(quantile({3, 1, 2}, 1.0) == 3.0);
}

TEST_CASE("classification and retrieval task data from a manifest") {
  const EmbeddingSet audio({"a1", "a2", "a3"}, 2, {1, 0, 0, 1, 0.6f, 0.8f}, true);
  const EmbeddingSet prompts({"This is a sound of x.", "This is a sound of y."}, 2, {1, 0, 0, 1}, true);
  DatasetManifest m;
  m.entries.push_back({"a1", "dev", {"x"}, {"cap x", "shared"}});
  m.entries.push_back({"a2", "eval", {"y"}, {"cap y", "shared"}});
  m.entries.push_back({"a3", "eval", {"y"}, {"cap z"}});
  const auto cls = load_classification(audio, m, prompts, kDefaultPromptTemplate, "eval");
  CHECK(cls.rows == std::vector<std::size_t>{1, 2});
  CHECK(cls.gold[0] == std::vector<std::size_t>{1});
  const auto preds = classify(audio.select(cls.rows).matrix().cast<double>(), cls.prompts);
  const std::vector<std::size_t> all{0, 1};
  CHECK(*classification_metric("accuracy", preds, cls, all) == 1.0);
  CHECK(*classification_metric("map", preds, cls, all) == 1.0);
  CHECK_THROWS_AS(classification_metric("bogus", preds, cls, all), ValidationError);
  CHECK_THROWS_AS(load_classification(audio, m, prompts, kDefaultPromptTemplate, "fold-1"), ValidationError);

  const EmbeddingSet captions({"cap x", "cap y", "cap z", "shared"}, 2, {1, 0, 0, 1, 0.6f, 0.8f, 0.7071f, 0.7071f},
                              false);
  const auto rd = load_retrieval(audio, m, captions, "");
  CHECK(rd.caption_texts == std::vector<std::string>{"cap x", "cap y", "cap z", "shared"});
  CHECK(rd.text_query_caption.size() == 5);
  CHECK(rd.text_query_relevant_audio[1] == std::set<std::string>{"a1", "a2"});
  const auto t2a = evaluate_retrieval(rd, audio.matrix().cast<double>(), TaskKind::text_audio_retrieval);
  CHECK(t2a.query_hit_at_1.size() == 5);
  const auto a2t = evaluate_retrieval(rd, audio.matrix().cast<double>(), TaskKind::audio_text_retrieval);
  CHECK(a2t.query_hit_at_1.size() == 3);
  CHECK(a2t.recall_at_1 == 1.0);
}

TEST_CASE("sweep rows, ordering and degenerate lambda") {
  Rng rng(23);
  const ConceptVocabulary va = vocab_from(testutil::random_dictionary(rng, 12, 30), "alpha");
  const ConceptVocabulary vb = vocab_from(testutil::random_dictionary(rng, 12, 20), "beta");
  const EmbeddingSet set = testutil::set_from_columns(testutil::random_dictionary(rng, 12, 15), "z");

  const auto rows = sweep(set, {&vb, &va}, {0.5, 0.01, 0.1}, nullptr, SolverConfig{}, 2);
  REQUIRE(rows.size() == 6);
  CHECK(rows[0].vocabulary_id == "alpha");
  CHECK(rows[0].lambda == 0.01);
  CHECK(rows[2].lambda == 0.5);
  CHECK(rows[3].vocabulary_id == "beta");
  CHECK(rows[3].vocab_size == 20);
  CHECK(std::isnan(rows[0].metric));

  double lmax = 0.0;
  for (std::size_t i = 0; i < set.count(); ++i) lmax = std::max(lmax, lambda_max(va.matrix(), set.row_vector(i)));
  const auto degenerate = sweep(set, {&va}, {2.0 * lmax}, nullptr, SolverConfig{});
  CHECK(degenerate[0].mean_l0 == 0.0);
  CHECK(degenerate[0].mean_reconstruction_cosine == 0.0);

  // One-point grid equals a direct evaluation.
  CodeMetric mean_l0 = [](const std::vector<SparseCodeRecord>& codes, const ConceptVocabulary&) {
    double t = 0;
    for (const auto& c : codes) t += static_cast<double>(c.l0());
    return t / static_cast<double>(codes.size());
  };
  SolverConfig cfg;
  cfg.lambda = 0.05;
  const auto direct = Decomposer(va, cfg).decompose_all(set);
  const auto one = sweep(set, {&va}, {0.05}, mean_l0, SolverConfig{});
  CHECK(one[0].metric == mean_l0(direct, va));
  CHECK(one[0].mean_l0 == one[0].metric);

  CHECK_THROWS_AS(sweep(set, {&va}, {}, nullptr, SolverConfig{}), ValidationError);
  CHECK_THROWS_AS(sweep(set, {&va}, {-0.1}, nullptr, SolverConfig{}), ValidationError);
  CHECK_THROWS_AS(sweep(set, {}, {0.1}, nullptr, SolverConfig{}), ValidationError);
}

TEST_CASE("sweep is independent of thread count") {
  Rng rng(24);
  const ConceptVocabulary va = vocab_from(testutil::random_dictionary(rng, 10, 25), "v");
  const EmbeddingSet set = testutil::set_from_columns(testutil::random_dictionary(rng, 10, 20), "z");
  const std::vector<double> grid(std::begin(kDefaultLambdaGrid), std::end(kDefaultLambdaGrid));
  CHECK(sweep_csv(sweep(set, {&va}, grid, nullptr, SolverConfig{}, 1)) ==
        sweep_csv(sweep(set, {&va}, grid, nullptr, SolverConfig{}, 4)));
}

TEST_CASE("sweep CSV round-trip and malformed input") {
  const std::vector<SweepRow> rows{{0.01, "v1", 100, 12.5, 0.93, 0.88},
                                   {0.5, "v1", 100, 0.0, std::nan(""), 0.0}};
  const std::string csv = sweep_csv(rows);
  CHECK(csv.rfind("lambda,vocabulary_id,vocab_size,mean_l0,metric,mean_reconstruction_cosine\n", 0) == 0);
  const auto back = parse_sweep_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(back[0].vocab_size == 100);
  CHECK(back[0].metric == 0.93);
  CHECK(std::isnan(back[1].metric));
  CHECK_THROWS_WITH_AS(parse_sweep_csv("x,y\n1,2\n"), doctest::Contains("malformed CSV"), FormatError);
  CHECK_THROWS_AS(parse_sweep_csv(""), FormatError);
  CHECK_THROWS_AS(parse_sweep_csv("lambda,vocabulary_id,vocab_size,mean_l0,metric,mean_reconstruction_cosine\n"
                                  "0.1,v,abc,1,2,3\n"),
                  FormatError);
  CHECK_THROWS_AS(parse_sweep_csv("lambda,vocabulary_id,vocab_size,mean_l0,metric,mean_reconstruction_cosine\n"
                                  "0.1,v,1,2\n"),
                  FormatError);
}

TEST_CASE("task spec parsing") {
  const nlohmann::json j = {{"task", "classification"}, {"manifest", "m.jsonl"}, {"prompts", "/abs/prompts"},
                            {"metric", "macro_f1"},     {"split", "eval"}};
  const TaskSpec spec = TaskSpec::from_json(j, "/base");
  CHECK(spec.task == TaskKind::classification);
  CHECK(spec.manifest == std::filesystem::path("/base/m.jsonl"));
  CHECK(spec.prompts == std::filesystem::path("/abs/prompts"));
  CHECK(spec.metric == "macro_f1");
  CHECK(spec.template_text == kDefaultPromptTemplate);

  const TaskSpec r = TaskSpec::from_json({{"task", "audio_text_retrieval"}, {"direction", "text_audio_retrieval"}});
  CHECK(r.task == TaskKind::text_audio_retrieval);
  CHECK(r.metric == "recall_at_1");
  CHECK_THROWS_AS(TaskSpec::from_json({{"task", "dance"}}), ValidationError);
  CHECK_THROWS_AS(TaskSpec::from_json({{"task", 3}}), FormatError);
}
