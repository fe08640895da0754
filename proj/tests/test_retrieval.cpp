#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "tthlab/retrieval.hpp"

using namespace tth;

namespace {

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return l2_normalize(v);
}

// Full ranking by explicit sort on (-score, id).
std::vector<ScoredId> brute_force(const RetrievalIndex& index, const Embedding& q) {
  std::vector<std::pair<double, ImageId>> keyed;
  for (const auto& e : index.entries) {
    double s = 0.0;
    for (std::size_t j = 0; j < q.vec.size(); ++j) s += q.vec[j] * e.embedding.vec[j];
    keyed.emplace_back(-s, e.id);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<ScoredId> out;
  for (const auto& [neg, id] : keyed) out.push_back({id, -neg});
  return out;
}

struct EvalWorld {
  Corpus corpus;
  MatcherModel model;
  BenignSet benign;
  std::vector<KeywordInfo> keywords;
};

const EvalWorld& eval_world() {
  static const EvalWorld w = [] {
    EvalWorld s;
    s.corpus = testutil::small_corpus(6, Flavor::Blobs, 100, 10, 30);
    MatcherHyper h;
    h.d = 16;
    h.d_e = 16;
    h.epochs = 10;
    h.batch = 25;
    h.lr = 0.3;
    s.model = train_matcher(s.corpus, h).first;
    s.benign = generate_benign_set(6, 4, s.corpus.image_shape());
    s.keywords = select_keywords(s.corpus, 2, 6);
    return s;
  }();
  return w;
}

}  // namespace

TEST_CASE("build_index") {
  const MatcherModel m = testutil::tiny_model(Arch::A, 8, 1);
  Rng rng(1);
  CHECK(build_index(m, std::span<const IndexItem>{}).entries.empty());
  const Image a = testutil::random_image(m.input, rng), b = testutil::random_image(m.input, rng);
  const std::vector<IndexItem> items{{3, &a, Origin::Corpus}, {7, &b, Origin::Benign}};
  const RetrievalIndex index = build_index(m, items);
  REQUIRE(index.entries.size() == 2);
  for (const auto& e : index.entries) CHECK(std::abs(l2_norm(e.embedding.vec) - 1.0) <= 1e-9);
  CHECK(index.entries[1].origin == Origin::Benign);
  const std::vector<IndexItem> dup{{3, &a, Origin::Corpus}, {3, &b, Origin::Corpus}};
  CHECK_ERROR_KIND(build_index(m, dup), ErrorKind::Id);
  const std::vector<IndexItem> again{{7, &a, Origin::Trojan}};
  CHECK_ERROR_KIND(extend_index(index, m, again), ErrorKind::Id);
  CHECK_ERROR_KIND(query_topk(RetrievalIndex{}, Embedding{{1.0}}, 3), ErrorKind::Degenerate);

  // Extending keeps existing entries and their scores.
  const std::vector<IndexItem> more{{900000, &b, Origin::Trojan}};
  const RetrievalIndex ext = extend_index(index, m, more);
  REQUIRE(ext.entries.size() == 3);
  CHECK(ext.entries[0].embedding.vec == index.entries[0].embedding.vec);
  CHECK(ext.entries[1].embedding.vec == index.entries[1].embedding.vec);
  const Embedding q{random_unit(m.d, rng)};
  for (const auto& s : query_topk(index, q, 2)) {
    const auto full = query_topk(ext, q, 3);
    CHECK(std::find(full.begin(), full.end(), s) != full.end());
  }
}

TEST_CASE("query_topk matches a brute-force sort") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(20), d = 2 + rng.below(6);
    RetrievalIndex index;
    std::set<ImageId> used;
    for (std::size_t i = 0; i < n; ++i) {
      ImageId id = 0;
      do id = static_cast<ImageId>(rng.below(1000)); while (!used.insert(id).second);
      // Every third entry duplicates an earlier embedding to force ties.
      const auto vec = (i % 3 == 2) ? index.entries[rng.below(i)].embedding.vec : random_unit(d, rng);
      index.entries.push_back({id, Embedding{vec}, Origin::Corpus});
    }
    const std::size_t queries = 1 + rng.below(10);
    for (std::size_t qi = 0; qi < queries; ++qi) {
      const Embedding q{random_unit(d, rng)};
      const auto oracle = brute_force(index, q);
      const std::size_t k = 1 + rng.below(n + 3);
      const auto got = query_topk(index, q, k);
      REQUIRE(got.size() == std::min(k, n));
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].id == oracle[i].id);
        CHECK(got[i].score == doctest::Approx(oracle[i].score).epsilon(1e-12));
      }
      CHECK(query_topk(index, q, n + 5) == query_topk(index, q, n));
    }
  }
  CHECK_ERROR_KIND(query_topk(RetrievalIndex{"", {{1, Embedding{{1.0}}, Origin::Corpus}}}, Embedding{{1.0}}, 0),
                   ErrorKind::Config);
}

TEST_CASE("recall_at_k") {
  // 5 queries over ids 0..9; relevant first appears at ranks 1, 3, 6, never, 10.
  const std::vector<std::vector<ImageId>> rankings{
      {4, 0, 1, 2, 3, 5, 6, 7, 8, 9}, {0, 1, 7, 2, 3, 4, 5, 6, 8, 9}, {0, 1, 2, 3, 4, 9, 5, 6, 7, 8},
      {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {0, 1, 2, 3, 4, 5, 6, 7, 9, 8}};
  const std::vector<std::vector<ImageId>> relevant{{4}, {7, 8}, {9}, {42}, {8}};
  CHECK(recall_at_k(rankings, relevant, 1) == 20.0);
  CHECK(recall_at_k(rankings, relevant, 3) == 40.0);
  CHECK(recall_at_k(rankings, relevant, 5) == 40.0);
  CHECK(recall_at_k(rankings, relevant, 6) == 60.0);
  CHECK(recall_at_k(rankings, relevant, 10) == 80.0);
  CHECK(recall_at_k(rankings, relevant, 50) == 80.0);
  double prev = 0.0;
  for (std::size_t k = 1; k <= 10; ++k) {
    const double r = recall_at_k(rankings, relevant, k);
    CHECK(r >= prev);
    prev = r;
  }
  const std::vector<std::vector<ImageId>> all{{0}, {0}}, none{{5}, {6}}, two{{0, 1}, {0, 2}};
  CHECK(recall_at_k(two, all, 1) == 100.0);
  CHECK(recall_at_k(two, none, 2) == 0.0);
  CHECK_ERROR_KIND(recall_at_k(std::vector<std::vector<ImageId>>{}, std::vector<std::vector<ImageId>>{}, 10),
                   ErrorKind::Degenerate);
  CHECK_ERROR_KIND(recall_at_k(two, std::vector<std::vector<ImageId>>{{0}}, 10), ErrorKind::Dimension);
}

TEST_CASE("query set") {
  const EvalWorld& w = eval_world();
  const TokenId red = w.corpus.vocab().id("red");
  const QuerySet qs = build_query_set(w.corpus, Split::Test, red);
  std::size_t expected = 0;
  for (const auto* item : w.corpus.split(Split::Test)) {
    for (const auto& cap : item->captions) {
      if ((" " + cap.text + " ").find(" red ") != std::string::npos) ++expected;
    }
  }
  CHECK(qs.queries.size() == expected);
  for (const auto& q : qs.queries) {
    REQUIRE(q.relevant.size() == 1);
    CHECK(q.caption.contains(red));
  }
  Corpus scrubbed = w.corpus;
  for (auto& item : scrubbed.items) {
    std::erase_if(item.captions, [&](const Caption& c) { return c.contains(red); });
  }
  CHECK_ERROR_KIND(build_query_set(scrubbed, Split::Test, red), ErrorKind::Keyword);
}

TEST_CASE("evaluate_attack") {
  const EvalWorld& w = eval_world();
  REQUIRE(w.keywords.size() == 6);
  const EvalSetup setup{"A@blobs", "blobs", "A@blobs", "blobs", AttackMode::WhiteBox};

  // Unpatched benign images as the trojan set: both conditions agree.
  std::vector<TrojanSet> identity(w.keywords.size());
  std::map<TokenId, const TrojanSet*> map;
  for (std::size_t i = 0; i < w.keywords.size(); ++i) {
    identity[i].keyword = w.keywords[i].token;
    identity[i].images = w.benign.images;
    identity[i].context.mcs = 0.1 * static_cast<double>(i);
    map[w.keywords[i].token] = &identity[i];
  }
  RankingDump dump;
  const EvalReport rep = evaluate_attack(w.model, w.corpus, w.benign, map, w.keywords, setup, 10, &dump);
  REQUIRE(rep.rows.size() == w.keywords.size());
  for (const auto& row : rep.rows) {
    CHECK(row.trojan_r10_tth == row.trojan_r10_clean);
    CHECK(row.relevant_r10_tth == row.relevant_r10_clean);
    CHECK(row.queries == build_query_set(w.corpus, Split::Test, w.corpus.vocab().id(row.keyword)).queries.size());
  }
  for (std::size_t i = 1; i < rep.rows.size(); ++i) CHECK(rep.rows[i - 1].trojan_r10_tth >= rep.rows[i].trojan_r10_tth);

  // Mean row recomputed by hand.
  double sum_rel = 0.0, sum_troj = 0.0, sum_mcs = 0.0;
  for (const auto& row : rep.rows) {
    sum_rel += row.relevant_r10_clean;
    sum_troj += row.trojan_r10_tth;
    sum_mcs += row.mcs;
  }
  const double n = static_cast<double>(rep.rows.size());
  CHECK(rep.mean_row.keyword == "MEAN");
  CHECK(rep.mean_row.relevant_r10_clean == doctest::Approx(sum_rel / n).epsilon(1e-12));
  CHECK(rep.mean_row.trojan_r10_tth == doctest::Approx(sum_troj / n).epsilon(1e-12));
  CHECK(rep.mean_row.mcs == doctest::Approx(sum_mcs / n).epsilon(1e-12));

  // Per-keyword recall recomputed from the dumped rankings.
  for (const auto& row : rep.rows) {
    for (const std::string cond : {"clean", "tth"}) {
      std::size_t queries = 0, rel_hits = 0, novel_hits = 0;
      for (const auto& e : dump.entries) {
        if (e.keyword != row.keyword || e.condition != cond) continue;
        ++queries;
        CHECK(e.top.size() == 10);
        bool rel = false, nov = false;
        for (const auto& s : e.top) {
          rel = rel || std::count(e.relevant.begin(), e.relevant.end(), s.id) > 0;
          nov = nov || std::count(e.novel.begin(), e.novel.end(), s.id) > 0;
        }
        rel_hits += rel;
        novel_hits += nov;
      }
      REQUIRE(queries == row.queries);
      const double rel_r = 100.0 * static_cast<double>(rel_hits) / static_cast<double>(queries);
      const double nov_r = 100.0 * static_cast<double>(novel_hits) / static_cast<double>(queries);
      CHECK(rel_r == doctest::Approx(cond == "clean" ? row.relevant_r10_clean : row.relevant_r10_tth));
      CHECK(nov_r == doctest::Approx(cond == "clean" ? row.trojan_r10_clean : row.trojan_r10_tth));
    }
  }

  map.erase(w.keywords[2].token);
  try {
    evaluate_attack(w.model, w.corpus, w.benign, map, w.keywords, setup);
    FAIL("missing trojan set accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find(w.keywords[2].word) != std::string::npos);
  }
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 6, 8, 100}, down{5, 4, 3, 2, 1};
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
  // d = (1, -1, 0, 0, 0): 1 - 6 * 2 / (5 * 24) = 0.9.
  CHECK(spearman(x, std::vector<double>{2, 1, 3, 4, 5}) == doctest::Approx(0.9));
  // Ties get average ranks: y ranks (1.5, 1.5, 3); Pearson on ranks = sqrt(3)/2.
  CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{7, 7, 9}) ==
        doctest::Approx(std::sqrt(3.0) / 2.0));
  CHECK(spearman(x, std::vector<double>{3, 3, 3, 3, 3}) == 0.0);
  CHECK_ERROR_KIND(spearman(x, std::vector<double>{1.0}), ErrorKind::Dimension);
  CHECK_ERROR_KIND(spearman(std::vector<double>{1}, std::vector<double>{1}), ErrorKind::Degenerate);
}
