#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tthlab/attack.hpp"
#include "tthlab/image.hpp"
#include "tthlab/matcher.hpp"
#include "tthlab/synthworld.hpp"

namespace tth {

enum class Origin { Corpus, Benign, Trojan };

const char* to_string(Origin o) noexcept;

inline constexpr ImageId kBenignIdBase = 800000;
inline constexpr ImageId kTrojanIdBase = 900000;

struct IndexEntry {
  ImageId id = 0;
  Embedding embedding;
  Origin origin = Origin::Corpus;
};

struct RetrievalIndex {
  std::string model_tag;
  std::vector<IndexEntry> entries;
};

struct IndexItem {
  ImageId id = 0;
  const Image* image = nullptr;
  Origin origin = Origin::Corpus;
};

struct ScoredId {
  ImageId id = 0;
  double score = 0.0;
  bool operator==(const ScoredId&) const = default;
};

RetrievalIndex build_index(const MatcherModel& model, std::span<const IndexItem> items);

// Index with extra entries appended; existing entries are copied unchanged.
RetrievalIndex extend_index(const RetrievalIndex& base, const MatcherModel& model,
                            std::span<const IndexItem> items);

// Exhaustive scan; descending cosine, ties by ascending id.
std::vector<ScoredId> query_topk(const RetrievalIndex& index, const Embedding& query, std::size_t k);
std::vector<ScoredId> query_topk(const RetrievalIndex& index, const MatcherModel& model,
                                 const Caption& caption, std::size_t k);

// 100 * (queries with a relevant id in the first k of their ranking) / queries.
double recall_at_k(std::span<const std::vector<ImageId>> rankings,
                   std::span<const std::vector<ImageId>> relevant, std::size_t k);

struct Query {
  Caption caption;
  std::vector<ImageId> relevant;
};

struct QuerySet {
  TokenId keyword = 0;
  std::string word;
  std::vector<Query> queries;
};

QuerySet build_query_set(const Corpus& corpus, Split split, TokenId w);

enum class AttackMode { WhiteBox, SurrogateDataset, SurrogateModel };

const char* to_string(AttackMode m) noexcept;
AttackMode parse_attack_mode(std::string_view s);

struct EvalRow {
  std::string keyword;
  double relevant_r10_clean = 0.0;
  double relevant_r10_tth = 0.0;
  double trojan_r10_clean = 0.0;
  double trojan_r10_tth = 0.0;
  double mcs = 0.0;  // of the keyword context the patch was generated from
  std::size_t queries = 0;
};

struct EvalSetup {
  std::string attack_net;
  std::string train_corpus;  // corpus whose captions gave e(w)
  std::string eval_net;
  std::string eval_corpus;
  AttackMode mode = AttackMode::WhiteBox;
};

struct EvalReport {
  EvalSetup setup;
  std::vector<EvalRow> rows;  // descending trojan_r10_tth, then keyword
  EvalRow mean_row;
};

struct RankingDump {
  struct Entry {
    std::string keyword;
    std::string condition;  // "clean" or "tth"
    std::string caption;
    std::vector<ImageId> relevant;
    std::vector<ImageId> novel;
    std::vector<ScoredId> top;
  };
  std::vector<Entry> entries;
};

EvalRow mean_of(std::span<const EvalRow> rows);

// Clean condition: test split + un-patched benign images. Attacked: test
// split + the keyword's trojan images. `trojans` must hold one set per
// keyword in `keywords`.
EvalReport evaluate_attack(const MatcherModel& eval_model, const Corpus& corpus,
                           const BenignSet& benign, const std::map<TokenId, const TrojanSet*>& trojans,
                           std::span<const KeywordInfo> keywords, const EvalSetup& setup,
                           std::size_t k = 10, RankingDump* dump = nullptr);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace tth
