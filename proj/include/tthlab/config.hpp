#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tthlab/attack.hpp"
#include "tthlab/matcher.hpp"
#include "tthlab/synthworld.hpp"

namespace tth {

struct WorldConfig {
  std::size_t n_train = 1500;
  std::size_t n_val = 100;
  std::size_t n_test = 100;
  std::size_t image_size = 64;
  std::size_t captions_per_image = 5;
  std::size_t max_objects = 2;
  double caption_noise = 0.1;
  std::size_t n_benign = 20;
};

struct ModelConfig {
  std::size_t d = 64;
  std::size_t d_e = 64;
  std::size_t pool_factor = 4;
  std::size_t hidden = 128;
  double lr = 0.3;
  std::size_t epochs = 220;
  std::size_t batch = 50;
  double temperature = 0.07;
  double token_offset = 2.5;
};

struct AttackParams {
  double lambda = 0.3;
  double eta = 0.01;
  std::size_t iters = 300;
  double patch_ratio = 0.1;
  std::size_t m = 500;
  std::string placement = "top-right";
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  std::string payload_hex = kDefaultBeaconPayload;
  std::size_t beacon_k = 8;
};

struct EvalParams {
  std::size_t k = 10;
  std::size_t per_pos = 8;
  std::vector<std::string> keywords;  // empty: select per_pos per POS
};

struct AblationParams {
  std::vector<double> lambdas = {0.0, 0.1, 0.3, 1.0, 10.0};
  std::vector<double> ratios = {0.02, 0.05, 0.1, 0.15, 0.2};
  std::size_t seeds = 3;
  std::size_t keywords_per_pos = 1;
};

struct RunConfig {
  std::uint64_t seed = 1;
  WorldConfig world;
  ModelConfig model_a;
  ModelConfig model_b;
  AttackParams attack;
  EvalParams eval;
  AblationParams ablate;
  std::string out_dir;  // empty: $TTHLAB_OUT, else ./tthlab_out
};

nlohmann::json config_to_json(const RunConfig& cfg);
// Keys absent from `j` keep their defaults; unknown keys are a config error.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

// Applies "dotted.path=value"; the value is parsed as JSON when possible, else
// taken as a string.
RunConfig apply_override(const RunConfig& cfg, std::string_view assignment);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

WorldParams world_params(const RunConfig& cfg, Flavor flavor);
MatcherHyper matcher_hyper(const RunConfig& cfg, Arch arch, Flavor flavor);
AttackConfig attack_config(const RunConfig& cfg);
std::uint64_t corpus_seed(const RunConfig& cfg);
std::uint64_t benign_seed(const RunConfig& cfg);
std::uint64_t keyword_seed(const RunConfig& cfg, Flavor flavor);

std::filesystem::path resolve_out_dir(const RunConfig& cfg);

}  // namespace tth
