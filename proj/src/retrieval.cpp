#include "tthlab/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "tthlab/error.hpp"

namespace tth {

namespace {

bool ranks_before(const ScoredId& a, const ScoredId& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

const char* to_string(Origin o) noexcept {
  switch (o) {
    case Origin::Corpus: return "corpus";
    case Origin::Benign: return "benign";
    case Origin::Trojan: return "trojan";
  }
  return "?";
}

const char* to_string(AttackMode m) noexcept {
  switch (m) {
    case AttackMode::WhiteBox: return "white-box";
    case AttackMode::SurrogateDataset: return "surrogate-dataset";
    case AttackMode::SurrogateModel: return "surrogate-model";
  }
  return "?";
}

AttackMode parse_attack_mode(std::string_view s) {
  for (AttackMode m : {AttackMode::WhiteBox, AttackMode::SurrogateDataset, AttackMode::SurrogateModel}) {
    if (s == to_string(m)) return m;
  }
  raise(ErrorKind::Config, "unknown attack mode '" + std::string(s) + "'");
}

RetrievalIndex build_index(const MatcherModel& model, std::span<const IndexItem> items) {
  RetrievalIndex index;
  index.model_tag = model.arch_tag();
  return extend_index(index, model, items);
}

RetrievalIndex extend_index(const RetrievalIndex& base, const MatcherModel& model,
                            std::span<const IndexItem> items) {
  if (!base.model_tag.empty() && base.model_tag != model.arch_tag()) {
    raise(ErrorKind::Config, "index built with " + base.model_tag + ", extended with " + model.arch_tag());
  }
  RetrievalIndex index = base;
  index.model_tag = model.arch_tag();
  std::set<ImageId> seen;
  for (const auto& e : index.entries) seen.insert(e.id);
  for (const auto& item : items) {
    if (!item.image) raise(ErrorKind::Config, "index item without an image");
    if (!seen.insert(item.id).second) raise(ErrorKind::Id, "duplicate image id " + std::to_string(item.id));
    index.entries.push_back({item.id, embed_image(model, *item.image), item.origin});
  }
  return index;
}

std::vector<ScoredId> query_topk(const RetrievalIndex& index, const Embedding& query, std::size_t k) {
  if (k == 0) raise(ErrorKind::Config, "k must be at least 1");
  if (index.entries.empty()) raise(ErrorKind::Degenerate, "query against an empty index");
  std::vector<ScoredId> scored;
  scored.reserve(index.entries.size());
  for (const auto& e : index.entries) scored.push_back({e.id, dot(query.vec, e.embedding.vec)});
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), ranks_before);
  scored.resize(n);
  return scored;
}

std::vector<ScoredId> query_topk(const RetrievalIndex& index, const MatcherModel& model,
                                 const Caption& caption, std::size_t k) {
  return query_topk(index, embed_text(model, caption), k);
}

double recall_at_k(std::span<const std::vector<ImageId>> rankings,
                   std::span<const std::vector<ImageId>> relevant, std::size_t k) {
  if (k == 0) raise(ErrorKind::Config, "k must be at least 1");
  if (rankings.empty()) raise(ErrorKind::Degenerate, "recall over an empty query set");
  if (rankings.size() != relevant.size()) raise(ErrorKind::Dimension, "one relevant set per ranking required");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const std::size_t n = std::min(k, rankings[q].size());
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(relevant[q].begin(), relevant[q].end(), rankings[q][i]) != relevant[q].end()) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

QuerySet build_query_set(const Corpus& corpus, Split split, TokenId w) {
  if (w >= corpus.vocab().size()) raise(ErrorKind::Vocabulary, "keyword token outside the vocabulary");
  QuerySet qs;
  qs.keyword = w;
  qs.word = corpus.vocab().word(w);
  for (const auto* item : corpus.split(split)) {
    for (const auto& cap : item->captions) {
      if (cap.contains(w)) qs.queries.push_back({cap, {item->id}});
    }
  }
  if (qs.queries.empty()) {
    raise(ErrorKind::Keyword, "keyword '" + qs.word + "' never occurs in the " + to_string(split) + " captions");
  }
  return qs;
}

EvalRow mean_of(std::span<const EvalRow> rows) {
  EvalRow m;
  m.keyword = "MEAN";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.relevant_r10_clean += r.relevant_r10_clean;
    m.relevant_r10_tth += r.relevant_r10_tth;
    m.trojan_r10_clean += r.trojan_r10_clean;
    m.trojan_r10_tth += r.trojan_r10_tth;
    m.mcs += r.mcs;
    m.queries += r.queries;
  }
  const double n = static_cast<double>(rows.size());
  m.relevant_r10_clean /= n;
  m.relevant_r10_tth /= n;
  m.trojan_r10_clean /= n;
  m.trojan_r10_tth /= n;
  m.mcs /= n;
  return m;
}

EvalReport evaluate_attack(const MatcherModel& eval_model, const Corpus& corpus,
                           const BenignSet& benign, const std::map<TokenId, const TrojanSet*>& trojans,
                           std::span<const KeywordInfo> keywords, const EvalSetup& setup,
                           std::size_t k, RankingDump* dump) {
  std::vector<IndexItem> base_items;
  for (const auto* item : corpus.split(Split::Test)) base_items.push_back({item->id, &item->image, Origin::Corpus});
  const RetrievalIndex base = build_index(eval_model, base_items);

  std::vector<IndexItem> benign_items;
  std::vector<ImageId> benign_ids;
  for (std::size_t i = 0; i < benign.images.size(); ++i) {
    const ImageId id = kBenignIdBase + static_cast<ImageId>(i);
    benign_items.push_back({id, &benign.images[i], Origin::Benign});
    benign_ids.push_back(id);
  }
  const RetrievalIndex clean = extend_index(base, eval_model, benign_items);

  EvalReport report;
  report.setup = setup;
  for (const auto& kw : keywords) {
    const auto it = trojans.find(kw.token);
    if (it == trojans.end() || !it->second) {
      raise(ErrorKind::Config, "no trojan set for keyword '" + kw.word + "'");
    }
    const TrojanSet& ts = *it->second;
    std::vector<IndexItem> trojan_items;
    std::vector<ImageId> trojan_ids;
    for (std::size_t i = 0; i < ts.images.size(); ++i) {
      const ImageId id = kTrojanIdBase + static_cast<ImageId>(i);
      trojan_items.push_back({id, &ts.images[i], Origin::Trojan});
      trojan_ids.push_back(id);
    }
    const RetrievalIndex attacked = extend_index(base, eval_model, trojan_items);
    const QuerySet qs = build_query_set(corpus, Split::Test, kw.token);

    std::vector<std::vector<ImageId>> clean_rank, tth_rank, relevant;
    std::vector<std::vector<ImageId>> novel_clean(qs.queries.size(), benign_ids);
    std::vector<std::vector<ImageId>> novel_tth(qs.queries.size(), trojan_ids);
    for (const auto& q : qs.queries) {
      const Embedding e = embed_text(eval_model, q.caption);
      const auto top_clean = query_topk(clean, e, k);
      const auto top_tth = query_topk(attacked, e, k);
      const auto ids = [](const std::vector<ScoredId>& top) {
        std::vector<ImageId> v;
        for (const auto& s : top) v.push_back(s.id);
        return v;
      };
      clean_rank.push_back(ids(top_clean));
      tth_rank.push_back(ids(top_tth));
      relevant.push_back(q.relevant);
      if (dump) {
        dump->entries.push_back({kw.word, "clean", q.caption.text, q.relevant, benign_ids, top_clean});
        dump->entries.push_back({kw.word, "tth", q.caption.text, q.relevant, trojan_ids, top_tth});
      }
    }
    EvalRow row;
    row.keyword = kw.word;
    row.queries = qs.queries.size();
    row.mcs = ts.context.mcs;
    row.relevant_r10_clean = recall_at_k(clean_rank, relevant, k);
    row.relevant_r10_tth = recall_at_k(tth_rank, relevant, k);
    row.trojan_r10_clean = recall_at_k(clean_rank, novel_clean, k);
    row.trojan_r10_tth = recall_at_k(tth_rank, novel_tth, k);
    report.rows.push_back(row);
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const EvalRow& a, const EvalRow& b) {
    if (a.trojan_r10_tth != b.trojan_r10_tth) return a.trojan_r10_tth > b.trojan_r10_tth;
    return a.keyword < b.keyword;
  });
  report.mean_row = mean_of(report.rows);
  return report;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) raise(ErrorKind::Dimension, "spearman needs paired samples");
  if (x.size() < 2) raise(ErrorKind::Degenerate, "spearman needs at least two samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace tth
