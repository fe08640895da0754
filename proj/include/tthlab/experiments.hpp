#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tthlab/attack.hpp"
#include "tthlab/config.hpp"
#include "tthlab/matcher.hpp"
#include "tthlab/retrieval.hpp"
#include "tthlab/synthworld.hpp"

namespace tth {

struct TrainedModel {
  Arch arch = Arch::A;
  Flavor flavor = Flavor::Blobs;  // corpus it was trained on
  MatcherModel model;
  TrainLog log;
  std::string tag() const;  // e.g. "A@blobs"
};

struct World {
  Flavor flavor = Flavor::Blobs;
  Corpus corpus;
  std::vector<KeywordInfo> keywords;
  std::vector<TrainedModel> models;
  const TrainedModel& model(Arch arch) const;
  bool has_model(Arch arch) const;
};

struct Lab {
  RunConfig cfg;
  BenignSet benign;
  std::vector<World> worlds;
  const World& world(Flavor flavor) const;
  bool has_world(Flavor flavor) const;
};

// Keywords named in the config, else select_keywords() on the test split.
std::vector<KeywordInfo> resolve_keywords(const RunConfig& cfg, const Corpus& corpus);

Corpus make_corpus(const RunConfig& cfg, Flavor flavor);
BenignSet make_benign(const RunConfig& cfg);
TrainedModel train_model(const RunConfig& cfg, const Corpus& corpus, Arch arch);

Lab build_lab(const RunConfig& cfg, std::span<const Flavor> flavors, std::span<const Arch> archs);
Lab build_lab(const RunConfig& cfg);  // both flavors, both archs

// One trojan set per keyword, patches generated on `model` with e(w) from
// `context_corpus`'s train split.
struct TrojanFamily {
  std::string attack_net;
  std::string context_corpus;
  std::vector<TrojanSet> sets;  // keyword order
  std::map<TokenId, const TrojanSet*> by_keyword() const;
};

std::string family_tag(const std::string& attack_net, Flavor context);

TrojanFamily attack_keywords(const TrainedModel& attacker, const Corpus& context_corpus,
                             const BenignSet& benign, std::span<const KeywordInfo> keywords,
                             const AttackConfig& cfg);

struct MatrixResult {
  std::vector<EvalReport> reports;
  std::map<std::string, TrojanFamily> families;  // by family_tag
  std::map<std::string, double> attack_seconds;  // by family_tag, time spent in the provider
};

// Supplies the family for (attacker, context world, eval world).
using FamilyProvider = std::function<TrojanFamily(const TrainedModel& attacker, const World& context,
                                                  const World& eval_world)>;

// White-box reports for every trained model; surrogate-dataset reports where
// the other flavor exists; surrogate-model reports where the other arch was
// trained on the same flavor. Each family is requested once.
MatrixResult run_experiment_matrix(const Lab& lab);
MatrixResult run_experiment_matrix(const Lab& lab, const FamilyProvider& provider);

EvalReport evaluate_family(const TrainedModel& eval_net, const World& eval_world,
                           const BenignSet& benign, const TrojanFamily& family, AttackMode mode,
                           std::size_t k, RankingDump* dump = nullptr);

// Keywords for the ablation sweeps: the first keywords_per_pos of each POS.
std::vector<KeywordInfo> ablation_keywords(const RunConfig& cfg, std::span<const KeywordInfo> keywords);

struct LambdaPoint {
  std::size_t seed_index = 0;
  double lambda = 0.0;
  double trojan_r10 = 0.0;      // mean over keywords, attacked condition
  double cell_accuracy = 0.0;   // mean over keywords
  double scannable_fraction = 0.0;
  bool scannable = false;       // every keyword's patch decodes
  double rms_deviation = 0.0;   // mean over keywords of RMS(delta - delta_o), pixels
};

// Seed index 0 uses the lab's benign set and attack seed; index s > 0 draws
// a fresh benign set and sampling seed.
std::vector<LambdaPoint> ablate_lambda(const Lab& lab, Arch arch, Flavor flavor,
                                       std::span<const double> lambdas, std::size_t seeds,
                                       std::vector<TrojanSet>* patches = nullptr);

struct RatioPoint {
  double ratio = 0.0;
  std::size_t side = 0;
  double trojan_r10 = 0.0;
  double relevant_r10 = 0.0;
};

std::vector<RatioPoint> ablate_patch_ratio(const Lab& lab, Arch arch, Flavor flavor,
                                           std::span<const double> ratios,
                                           std::vector<TrojanSet>* patches = nullptr);

struct EmbeddingRow {
  ImageId id = 0;
  std::string origin;  // image, keyword-text, trojan
  std::vector<double> vec;
};

// Test images, test captions containing the keyword (id = source image), and
// the keyword's trojan images.
std::vector<EmbeddingRow> dump_embeddings(const MatcherModel& model, const Corpus& corpus,
                                          const TrojanSet& trojans, TokenId keyword);

}  // namespace tth
