#include "trunclab/metrics.hpp"

#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "trunclab/errors.hpp"
#include "trunclab/rng.hpp"

using namespace trunclab;

namespace {

// Letters map onto pool ids: a=4, b=5, c=6, d=7, e=8 under Vocabulary(5, 2).
const Vocabulary kVocab(5, 2);

Tokens ids(std::initializer_list<std::uint32_t> l) { return Tokens(l); }

}  // namespace

TEST_CASE("bigram overlap frozen example") {
  // article "a b c d e", summary "a b x c d" with x unsupported:
  // summary bigrams {ab, bx, xc, cd}, article holds {ab, cd} -> 2/4.
  const Tokens article = ids({4, 5, 6, 7, 8});
  const Tokens summary = ids({4, 5, 14, 6, 7});
  auto r = ngram_overlap(summary, article, 2);
  REQUIRE(r.has_value());
  CHECK(*r == 0.5);
}

TEST_CASE("unigram and higher-order overlaps") {
  const Tokens article = ids({4, 5, 6, 7, 8});
  CHECK(*ngram_overlap(ids({4, 5, 6}), article, 1) == 1.0);
  CHECK(*ngram_overlap(ids({14, 15}), article, 1) == 0.0);
  CHECK(*ngram_overlap(ids({4, 5, 6}), article, 3) == 1.0);
  CHECK(*ngram_overlap(ids({4, 6, 5}), article, 3) == 0.0);
  // distinct counting: {45, 54, 45} collapses to two grams, one matched
  CHECK(*ngram_overlap(ids({4, 5, 4, 5}), article, 2) == 0.5);
}

TEST_CASE("overlap degenerate inputs yield no value") {
  const Tokens article = ids({4, 5, 6});
  CHECK_FALSE(ngram_overlap(ids({4}), article, 2).has_value());
  CHECK_FALSE(ngram_overlap(ids({1, 2, 3}), article, 1).has_value());  // specials only
  CHECK_FALSE(ngram_overlap({}, article, 1).has_value());
  CHECK(ngram_overlap(ids({4}), article, 1).has_value());
  CHECK_THROWS_AS((void)ngram_overlap(article, article, 0), config_error);
  CHECK_THROWS_AS((void)ngram_overlap(article, article, 9), config_error);
}

TEST_CASE("specials are stripped before counting") {
  const Tokens article = ids({4, 5, 6, 7, 8});
  const Tokens plain = ids({4, 5, 6});
  const Tokens wrapped = ids({kBosId, 4, 5, kSepId, 6, kEosId});
  CHECK(*ngram_overlap(wrapped, article, 2) == *ngram_overlap(plain, article, 2));
  // stripping happens on the article side too
  const Tokens art_wrapped = ids({kBosId, 4, kSepId, 5, 6, 7, 8, kEosId});
  CHECK(*ngram_overlap(plain, art_wrapped, 2) == 1.0);
}

TEST_CASE("rouge-1 frozen example") {
  // "the cat sat" vs "the cat ran": two shared unigrams, P = R = F1 = 2/3.
  auto s = rouge_n(ids({4, 5, 6}), ids({4, 5, 7}), 1);
  REQUIRE(s.has_value());
  CHECK(s->precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s->recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s->f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("rouge clipping caps repeated candidate grams") {
  // candidate "a a a" vs reference "a a": clipped 2, P = 2/3, R = 1, F1 = 0.8.
  auto s = rouge_n(ids({4, 4, 4}), ids({4, 4}), 1);
  REQUIRE(s.has_value());
  CHECK(s->precision == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s->recall == 1.0);
  CHECK(s->f1 == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("rouge-2 and degenerate cases") {
  auto s = rouge_n(ids({4, 5, 6}), ids({4, 5, 7}), 2);
  REQUIRE(s.has_value());
  CHECK(s->precision == 0.5);  // {45, 56} vs {45, 57}
  CHECK(s->recall == 0.5);
  CHECK(s->f1 == 0.5);
  CHECK_FALSE(rouge_n(ids({4}), ids({4, 5}), 2).has_value());
  CHECK_FALSE(rouge_n({}, ids({4, 5}), 1).has_value());
  auto zero = rouge_n(ids({4, 5}), ids({6, 7}), 1);
  REQUIRE(zero.has_value());
  CHECK(zero->f1 == 0.0);  // disjoint: P = R = 0 and F1 stays defined
}

TEST_CASE("rouge f1 is symmetric") {
  Rng rng(421);
  for (int it = 0; it < 300; ++it) {
    Tokens a, b;
    const std::size_t la = 1 + rng.uniform_int(12), lb = 1 + rng.uniform_int(12);
    for (std::size_t i = 0; i < la; ++i) a.push_back(4 + static_cast<std::uint32_t>(rng.uniform_int(6)));
    for (std::size_t i = 0; i < lb; ++i) b.push_back(4 + static_cast<std::uint32_t>(rng.uniform_int(6)));
    for (std::size_t n = 1; n <= 2; ++n) {
      auto ab = rouge_n(a, b, n);
      auto ba = rouge_n(b, a, n);
      REQUIRE(ab.has_value() == ba.has_value());
      if (ab) {
        CHECK(ab->f1 == doctest::Approx(ba->f1).epsilon(1e-14));
        CHECK(ab->precision == ba->recall);
        CHECK(ab->recall == ba->precision);
      }
    }
  }
}

TEST_CASE("overlap and rouge are invariant under token relabeling") {
  // Any injective renaming of content ids leaves both metrics unchanged.
  Rng rng(1337);
  const std::uint32_t lo = 4, hi = 24;
  for (int it = 0; it < 200; ++it) {
    std::vector<std::uint32_t> perm(hi - lo);
    for (std::uint32_t i = 0; i < hi - lo; ++i) perm[i] = lo + i;
    rng.shuffle(perm);
    auto relabel = [&](const Tokens& t) {
      Tokens out = t;
      for (auto& v : out)
        if (v >= lo) v = perm[v - lo];
      return out;
    };
    Tokens a, s;
    const std::size_t la = 2 + rng.uniform_int(10), ls = 2 + rng.uniform_int(8);
    for (std::size_t i = 0; i < la; ++i) a.push_back(lo + static_cast<std::uint32_t>(rng.uniform_int(hi - lo)));
    for (std::size_t i = 0; i < ls; ++i) s.push_back(lo + static_cast<std::uint32_t>(rng.uniform_int(hi - lo)));
    for (std::size_t n = 1; n <= 3; ++n) {
      auto before = ngram_overlap(s, a, n);
      auto after = ngram_overlap(relabel(s), relabel(a), n);
      REQUIRE(before.has_value() == after.has_value());
      if (before) CHECK(*before == *after);
      auto rb = rouge_n(s, a, n);
      auto ra = rouge_n(relabel(s), relabel(a), n);
      REQUIRE(rb.has_value() == ra.has_value());
      if (rb) CHECK(rb->f1 == ra->f1);
    }
  }
}

TEST_CASE("sentence error rate frozen example") {
  // BOS a X SEP b c EOS against "a b c d e": first sentence holds the
  // hallucinated X, second is clean -> 1/2. Rate over tokens is 1/4.
  const Tokens article = ids({4, 5, 6, 7, 8});
  const Tokens gen = ids({kBosId, 4, 14, kSepId, 5, 6, kEosId});
  CHECK(*sentence_error_rate(gen, article, kVocab) == 0.5);
  CHECK(*unsupported_rate(gen, article, kVocab) == 0.25);
}

TEST_CASE("sentence error rate accepts paraphrases as supported") {
  const Tokens article = ids({4, 5, 6, 7, 8});
  // 9 = paraphrase of 4, 13 = paraphrase of 8: both supported
  CHECK(*sentence_error_rate(ids({kBosId, 9, 13, kEosId}), article, kVocab) == 0.0);
  // paraphrase of a pool id absent from the article is unsupported
  const Tokens short_article = ids({4, 5});
  CHECK(*sentence_error_rate(ids({kBosId, 13, kEosId}), short_article, kVocab) == 1.0);
}

TEST_CASE("sentence splitting skips empty runs") {
  const Tokens article = ids({4, 5, 6});
  // doubled SEP and trailing EOS produce no phantom sentences
  const Tokens gen = ids({kBosId, kSepId, 4, kSepId, kSepId, 14, kEosId, kSepId});
  CHECK(*sentence_error_rate(gen, article, kVocab) == 0.5);
  CHECK_FALSE(sentence_error_rate(ids({kBosId, kEosId}), article, kVocab).has_value());
  CHECK_FALSE(unsupported_rate(ids({kBosId, kEosId}), article, kVocab).has_value());
}

TEST_CASE("sentence error rate is invariant to sentence order") {
  Rng rng(77);
  const Vocabulary vocab(20, 5);
  for (int it = 0; it < 100; ++it) {
    Tokens article;
    for (int i = 0; i < 12; ++i)
      article.push_back(vocab.pool_id(rng.uniform_int(vocab.n_content())));
    const std::size_t n_sent = 2 + rng.uniform_int(4);
    std::vector<Tokens> sentences(n_sent);
    for (auto& s : sentences) {
      const std::size_t len = 1 + rng.uniform_int(5);
      for (std::size_t i = 0; i < len; ++i) {
        if (rng.uniform() < 0.3)
          s.push_back(vocab.halluc_id(rng.uniform_int(vocab.n_halluc())));
        else
          s.push_back(vocab.pool_id(rng.uniform_int(vocab.n_content())));
      }
    }
    auto join = [&](const std::vector<Tokens>& ss) {
      Tokens out{kBosId};
      for (std::size_t i = 0; i < ss.size(); ++i) {
        if (i > 0) out.push_back(kSepId);
        out.insert(out.end(), ss[i].begin(), ss[i].end());
      }
      out.push_back(kEosId);
      return out;
    };
    const double before = *sentence_error_rate(join(sentences), article, vocab);
    std::vector<std::uint32_t> order(n_sent);
    for (std::uint32_t i = 0; i < n_sent; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<Tokens> shuffled;
    for (std::uint32_t i : order) shuffled.push_back(sentences[i]);
    CHECK(*sentence_error_rate(join(shuffled), article, vocab) == before);
  }
}

TEST_CASE("sentence error rate matches the closed form for bernoulli noise") {
  // Each of 5 tokens is independently unsupported with prob 0.3, so a
  // sentence is flagged with prob 1 - 0.7^5 = 0.83193.
  Rng rng(2026);
  const Vocabulary vocab(10, 10);
  Tokens article;
  for (std::size_t i = 0; i < vocab.n_content(); ++i) article.push_back(vocab.pool_id(i));
  const int n_sent = 4000;
  Tokens gen{kBosId};
  for (int s = 0; s < n_sent; ++s) {
    if (s > 0) gen.push_back(kSepId);
    for (int t = 0; t < 5; ++t) {
      if (rng.uniform() < 0.3)
        gen.push_back(vocab.halluc_id(rng.uniform_int(vocab.n_halluc())));
      else
        gen.push_back(vocab.pool_id(rng.uniform_int(vocab.n_content())));
    }
  }
  gen.push_back(kEosId);
  const double expected = 1.0 - std::pow(0.7, 5);
  CHECK(*sentence_error_rate(gen, article, vocab) == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("summary probability stats use nearest-rank quartiles") {
  SummaryProbStats s = summary_probability_stats({0.1, 0.2, 0.3, 0.4});
  CHECK(s.min == 0.1);
  CHECK(s.q1 == 0.1);  // rank ceil(25*4/100) = 1
  CHECK(s.median == 0.2);
  CHECK(s.q3 == 0.3);
  CHECK(s.max == 0.4);
  CHECK(s.mean == 0.25);
  CHECK(s.n == 4);
  SummaryProbStats one = summary_probability_stats({0.7});
  CHECK(one.q1 == 0.7);
  CHECK(one.median == 0.7);
  CHECK(one.q3 == 0.7);
  CHECK_THROWS_AS(summary_probability_stats({}), config_error);
}

TEST_CASE("label means pool factual classes") {
  std::vector<TokenProbRecord> recs(2);
  recs[0].probs = {0.8, 0.4, 0.1};
  recs[0].labels = {TokenLabel::copied, TokenLabel::paraphrased, TokenLabel::hallucinated};
  recs[1].probs = {0.6, 0.9};
  recs[1].labels = {TokenLabel::copied, TokenLabel::special};
  LabelMeanProbs m = label_mean_probabilities(recs);
  CHECK(*m.copied == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(*m.paraphrased == 0.4);
  CHECK(*m.hallucinated == 0.1);
  CHECK(*m.factual == doctest::Approx((0.8 + 0.4 + 0.6) / 3.0).epsilon(1e-15));
  LabelMeanProbs none = label_mean_probabilities({});
  CHECK_FALSE(none.copied.has_value());
  CHECK_FALSE(none.factual.has_value());
}

TEST_CASE("metric records validate against the registry") {
  MetricRecord ok{12, Phase::probe, "gen_ser", "dev", 0.25};
  CHECK_NOTHROW(validate_metric_record(ok));
  CHECK(metric_csv_row(ok) == "12,probe,gen_ser,dev,0.25");
  MetricRecord train_row{3, Phase::train, "loss", "train", 1.5};
  CHECK(metric_csv_row(train_row) == "3,train,loss,train,1.5");

  MetricRecord bad_name = ok;
  bad_name.metric = "gen_serr";
  CHECK_THROWS_AS(validate_metric_record(bad_name), config_error);
  MetricRecord bad_split = ok;
  bad_split.split = "test";
  CHECK_THROWS_AS(validate_metric_record(bad_split), config_error);
  MetricRecord bad_value = ok;
  bad_value.value = std::nan("");
  CHECK_THROWS_AS(validate_metric_record(bad_value), numeric_error);
  CHECK(is_registered_metric("trunc_fraction_masked"));
  CHECK_FALSE(is_registered_metric(""));
}

TEST_CASE("csv values round-trip at full precision") {
  MetricRecord rec{1, Phase::train, "loss", "train", 1.0 / 3.0};
  const std::string row = metric_csv_row(rec);
  const std::size_t comma = row.rfind(',');
  const double back = std::strtod(row.c_str() + comma + 1, nullptr);
  CHECK(back == 1.0 / 3.0);
}
