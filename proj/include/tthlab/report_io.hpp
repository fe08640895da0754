#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tthlab/config.hpp"
#include "tthlab/experiments.hpp"
#include "tthlab/retrieval.hpp"

namespace tth {

inline constexpr const char* kToolVersion = "1.0.0";

// Shortest decimal that reads back to the same double ("%.17g").
std::string format_double(double v);

// Writes bytes, creating parent directories; I/O errors name the path.
void write_file(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string report_csv(const EvalReport& report);
std::vector<EvalRow> parse_report_csv(std::string_view csv);  // includes the MEAN row
nlohmann::json report_json(const EvalReport& report);
std::string report_file_stem(const EvalReport& report);

nlohmann::json ranking_json(const RankingDump& dump);

std::string lambda_csv(std::span<const LambdaPoint> points);
std::string ratio_csv(std::span<const RatioPoint> points);

std::string embeddings_csv(std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> parse_embeddings_csv(std::string_view csv);

nlohmann::json train_log_json(const TrainedModel& model);
nlohmann::json keywords_json(std::span<const KeywordInfo> keywords);
std::vector<KeywordInfo> keywords_from_json(const nlohmann::json& j, const Vocabulary& vocab);

// Records every file a command writes and leaves a provenance.json in each
// directory it touched, merged with entries from earlier commands.
class Provenance {
 public:
  Provenance(std::string command, const RunConfig& cfg);

  void write(const std::filesystem::path& path, std::string_view bytes);
  void write_image(const std::filesystem::path& path, const Image& image);
  void record(const std::filesystem::path& path);  // a file written elsewhere
  void finish() const;

 private:
  std::string command_;
  std::string config_hash_;
  std::map<std::filesystem::path, std::map<std::string, nlohmann::json>> files_;
};

// Layout under a trojan-set directory: anchor.ppm, patch.ppm,
// trojan_NN.ppm and state.json.
nlohmann::json trojan_state_json(const TrojanSet& set);
void save_trojan_set(const TrojanSet& set, const std::filesystem::path& dir, Provenance& prov);
TrojanSet load_trojan_set(const std::filesystem::path& dir, const Vocabulary& vocab);

}  // namespace tth
