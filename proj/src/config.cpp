#include "tthlab/config.hpp"

#include <cstdio>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

using nlohmann::json;

namespace {

json world_json(const WorldConfig& w) {
  return {{"n_train", w.n_train},
          {"n_val", w.n_val},
          {"n_test", w.n_test},
          {"image_size", w.image_size},
          {"captions_per_image", w.captions_per_image},
          {"max_objects", w.max_objects},
          {"caption_noise", w.caption_noise},
          {"n_benign", w.n_benign}};
}

json model_json(const ModelConfig& m) {
  return {{"d", m.d},         {"d_e", m.d_e},       {"pool_factor", m.pool_factor},
          {"hidden", m.hidden}, {"lr", m.lr},       {"epochs", m.epochs},
          {"batch", m.batch},   {"temperature", m.temperature}, {"token_offset", m.token_offset}};
}

// Overlays `patch` onto `base`, refusing keys `base` does not have.
void merge_checked(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) raise(ErrorKind::Config, "config section '" + path + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) raise(ErrorKind::Config, "unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    raise(ErrorKind::Config, "config key '" + section + key + "' has the wrong type");
  }
}

WorldConfig world_from(const json& j) {
  WorldConfig w;
  const std::string s = "world.";
  read(j, "n_train", w.n_train, s);
  read(j, "n_val", w.n_val, s);
  read(j, "n_test", w.n_test, s);
  read(j, "image_size", w.image_size, s);
  read(j, "captions_per_image", w.captions_per_image, s);
  read(j, "max_objects", w.max_objects, s);
  read(j, "caption_noise", w.caption_noise, s);
  read(j, "n_benign", w.n_benign, s);
  return w;
}

ModelConfig model_from(const json& j, const std::string& s) {
  ModelConfig m;
  read(j, "d", m.d, s);
  read(j, "d_e", m.d_e, s);
  read(j, "pool_factor", m.pool_factor, s);
  read(j, "hidden", m.hidden, s);
  read(j, "lr", m.lr, s);
  read(j, "epochs", m.epochs, s);
  read(j, "batch", m.batch, s);
  read(j, "temperature", m.temperature, s);
  read(j, "token_offset", m.token_offset, s);
  return m;
}

void validate(const RunConfig& c) {
  const auto& w = c.world;
  if (w.n_train == 0 || w.n_val == 0 || w.n_test == 0) raise(ErrorKind::Config, "every split needs at least one image");
  if (w.n_benign == 0) raise(ErrorKind::Config, "world.n_benign must be at least 1");
  if (w.captions_per_image == 0) raise(ErrorKind::Config, "world.captions_per_image must be at least 1");
  if (!(w.caption_noise >= 0.0 && w.caption_noise <= 1.0)) raise(ErrorKind::Config, "world.caption_noise must be in [0, 1]");
  for (const ModelConfig* m : {&c.model_a, &c.model_b}) {
    if (!(m->lr > 0.0)) raise(ErrorKind::Config, "model learning rate must be positive");
    if (!(m->temperature > 0.0)) raise(ErrorKind::Config, "model temperature must be positive");
    if (m->batch < 2) raise(ErrorKind::Config, "model batch must be at least 2");
    if (!std::isfinite(m->token_offset)) raise(ErrorKind::Config, "model token_offset must be finite");
  }
  const auto& a = c.attack;
  if (!(a.lambda >= 0.0)) raise(ErrorKind::Config, "attack.lambda must be non-negative");
  if (!(a.eta > 0.0)) raise(ErrorKind::Config, "attack.eta must be positive");
  if (!(a.patch_ratio > 0.0 && a.patch_ratio <= 1.0)) raise(ErrorKind::Config, "attack.patch_ratio must be in (0, 1]");
  if (a.m == 0) raise(ErrorKind::Config, "attack.m must be at least 1");
  parse_placement(a.placement);
  bits_from_hex(a.payload_hex);
  if (c.eval.k == 0) raise(ErrorKind::Config, "eval.k must be at least 1");
  for (double l : c.ablate.lambdas) {
    if (!(l >= 0.0)) raise(ErrorKind::Config, "ablation lambdas must be non-negative");
  }
  for (double r : c.ablate.ratios) {
    if (!(r > 0.0 && r < 1.0)) raise(ErrorKind::Config, "ablation ratios must be in (0, 1)");
  }
}

}  // namespace

json config_to_json(const RunConfig& c) {
  const auto& a = c.attack;
  return {{"seed", c.seed},
          {"world", world_json(c.world)},
          {"model_a", model_json(c.model_a)},
          {"model_b", model_json(c.model_b)},
          {"attack",
           {{"lambda", a.lambda},
            {"eta", a.eta},
            {"iters", a.iters},
            {"patch_ratio", a.patch_ratio},
            {"m", a.m},
            {"placement", a.placement},
            {"offset_y", a.offset_y},
            {"offset_x", a.offset_x},
            {"payload_hex", a.payload_hex},
            {"beacon_k", a.beacon_k}}},
          {"eval", {{"k", c.eval.k}, {"per_pos", c.eval.per_pos}, {"keywords", c.eval.keywords}}},
          {"ablate",
           {{"lambdas", c.ablate.lambdas},
            {"ratios", c.ablate.ratios},
            {"seeds", c.ablate.seeds},
            {"keywords_per_pos", c.ablate.keywords_per_pos}}},
          {"out_dir", c.out_dir}};
}

RunConfig config_from_json(const json& patch) {
  json j = config_to_json(RunConfig{});
  merge_checked(j, patch, "");
  RunConfig c;
  read(j, "seed", c.seed, "");
  read(j, "out_dir", c.out_dir, "");
  c.world = world_from(j.at("world"));
  c.model_a = model_from(j.at("model_a"), "model_a.");
  c.model_b = model_from(j.at("model_b"), "model_b.");
  const json& a = j.at("attack");
  const std::string s = "attack.";
  read(a, "lambda", c.attack.lambda, s);
  read(a, "eta", c.attack.eta, s);
  read(a, "iters", c.attack.iters, s);
  read(a, "patch_ratio", c.attack.patch_ratio, s);
  read(a, "m", c.attack.m, s);
  read(a, "placement", c.attack.placement, s);
  read(a, "offset_y", c.attack.offset_y, s);
  read(a, "offset_x", c.attack.offset_x, s);
  read(a, "payload_hex", c.attack.payload_hex, s);
  read(a, "beacon_k", c.attack.beacon_k, s);
  read(j.at("eval"), "k", c.eval.k, "eval.");
  read(j.at("eval"), "per_pos", c.eval.per_pos, "eval.");
  read(j.at("eval"), "keywords", c.eval.keywords, "eval.");
  read(j.at("ablate"), "lambdas", c.ablate.lambdas, "ablate.");
  read(j.at("ablate"), "ratios", c.ablate.ratios, "ablate.");
  read(j.at("ablate"), "seeds", c.ablate.seeds, "ablate.");
  read(j.at("ablate"), "keywords_per_pos", c.ablate.keywords_per_pos, "ablate.");
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorKind::Io, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write config " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
  if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

RunConfig apply_override(const RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    raise(ErrorKind::Config, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json patch = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot_pos = path.rfind('.', end - 1);
    const std::size_t start = dot_pos == std::string::npos ? 0 : dot_pos + 1;
    const std::string key = path.substr(start, end - start);
    if (key.empty()) raise(ErrorKind::Config, "override key '" + path + "' has an empty segment");
    patch = json{{key, patch}};
    if (dot_pos == std::string::npos) break;
    end = dot_pos;
  }
  json full = config_to_json(cfg);
  merge_checked(full, patch, "");
  return config_from_json(full);
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
  return buf;
}

WorldParams world_params(const RunConfig& cfg, Flavor flavor) {
  WorldParams p;
  p.flavor = flavor;
  p.image_size = cfg.world.image_size;
  p.captions_per_image = cfg.world.captions_per_image;
  p.max_objects = cfg.world.max_objects;
  p.caption_noise = cfg.world.caption_noise;
  return p;
}

MatcherHyper matcher_hyper(const RunConfig& cfg, Arch arch, Flavor flavor) {
  const ModelConfig& m = arch == Arch::A ? cfg.model_a : cfg.model_b;
  MatcherHyper h;
  h.arch = arch;
  h.d = m.d;
  h.d_e = m.d_e;
  h.pool_factor = m.pool_factor;
  h.hidden = m.hidden;
  h.lr = m.lr;
  h.epochs = m.epochs;
  h.batch = m.batch;
  h.temperature = m.temperature;
  h.token_offset = m.token_offset;
  h.seed = derive_seed(cfg.seed, std::string("train/") + to_string(arch) + "/" + to_string(flavor));
  return h;
}

AttackConfig attack_config(const RunConfig& cfg) {
  const auto& a = cfg.attack;
  AttackConfig ac;
  ac.lambda = a.lambda;
  ac.eta = a.eta;
  ac.iters = a.iters;
  ac.patch_ratio = a.patch_ratio;
  ac.m = a.m;
  ac.seed = derive_seed(cfg.seed, "attack");
  ac.placement = parse_placement(a.placement);
  ac.offset_y = a.offset_y;
  ac.offset_x = a.offset_x;
  ac.payload_hex = a.payload_hex;
  ac.beacon_k = a.beacon_k;
  return ac;
}

std::uint64_t corpus_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "corpus"); }
std::uint64_t benign_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "benign"); }
std::uint64_t keyword_seed(const RunConfig& cfg, Flavor flavor) {
  return derive_seed(cfg.seed, std::string("keywords/") + to_string(flavor));
}

std::filesystem::path resolve_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  if (const char* env = std::getenv("TTHLAB_OUT"); env && *env) return env;
  return "tthlab_out";
}

}  // namespace tth
