#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tthlab/config.hpp"
#include "tthlab/experiments.hpp"

namespace tth {

// Where every command reads and writes under the output root.
class Layout {
 public:
  explicit Layout(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path corpus(Flavor f) const;
  std::filesystem::path benign() const;
  std::filesystem::path model(Arch a, Flavor f) const;      // models/A-blobs.model
  std::filesystem::path train_log(Arch a, Flavor f) const;  // models/A-blobs.log.json
  std::filesystem::path keywords(Flavor f) const;
  std::filesystem::path family(const std::string& tag) const;
  std::filesystem::path trojan_set(const std::string& tag, const std::string& word) const;
  std::filesystem::path reports() const;
  std::filesystem::path ablation() const;
  std::filesystem::path embeddings() const;
  std::filesystem::path configs() const;

 private:
  std::filesystem::path root_;
};

// Loads a family's trojan sets for `keywords`; a missing set is a config
// error naming the keyword.
TrojanFamily load_family(const Layout& layout, const std::string& attack_net, Flavor context,
                         std::span<const KeywordInfo> keywords, const Vocabulary& vocab);

// Worlds for `flavors` with corpora, keyword lists and the models in `archs`
// read from disk; the benign set too.
Lab load_lab(const RunConfig& cfg, const Layout& layout, std::span<const Flavor> flavors,
             std::span<const Arch> archs);

struct AttackRequest {
  Arch arch = Arch::A;
  Flavor flavor = Flavor::Blobs;
  Flavor context = Flavor::Blobs;
  std::vector<std::string> keywords;  // empty: every selected keyword
};

struct EvalRequest {
  std::string mode = "white-box";  // white-box, surrogate-dataset, surrogate-model, matrix
  Arch arch = Arch::A;
  Flavor flavor = Flavor::Blobs;
  bool rankings = false;
};

struct AblateRequest {
  std::string which = "lambda";  // lambda or ratio
  Arch arch = Arch::A;
  Flavor flavor = Flavor::Blobs;
};

struct EmbeddingRequest {
  Arch arch = Arch::A;
  Flavor flavor = Flavor::Blobs;
  Flavor context = Flavor::Blobs;
  std::string keyword;
};

void cmd_gen_corpus(const RunConfig& cfg, std::span<const Flavor> flavors, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::span<const Arch> archs, std::span<const Flavor> flavors,
               std::ostream& log);
void cmd_select_keywords(const RunConfig& cfg, std::span<const Flavor> flavors, std::ostream& log);
void cmd_attack(const RunConfig& cfg, const AttackRequest& req, std::ostream& log);
std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const EvalRequest& req, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, const AblateRequest& req, std::ostream& log);
void cmd_dump_embeddings(const RunConfig& cfg, const EmbeddingRequest& req, std::ostream& log);

struct PipelineResult {
  Lab lab;
  MatrixResult matrix;
  std::vector<LambdaPoint> lambda_sweep;  // model A on blobs
  std::vector<RatioPoint> ratio_sweep;
  double corpus_seconds = 0.0;
  std::map<std::string, double> train_seconds;  // by model tag
};

// Every stage end to end, both flavors and both archs, persisting the same
// artifacts the individual commands write.
PipelineResult run_pipeline(const RunConfig& cfg, std::ostream& log);

}  // namespace tth
