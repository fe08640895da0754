#include "tthlab/synthworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 9> kStopWords = {"a",    "the",   "is",    "and",   "with",
                                                   "there", "above", "below", "beside"};
constexpr std::array<const char*, 8> kShapes = {"square", "circle",  "triangle", "cross",
                                                "ring",   "diamond", "star",     "bar"};
constexpr std::array<const char*, 8> kColors = {"red",    "green",  "blue",  "yellow",
                                                "purple", "orange", "white", "pink"};
constexpr std::array<const char*, 8> kMotions = {"running",  "jumping",  "sleeping", "spinning",
                                                 "floating", "falling",  "dancing",  "sitting"};

constexpr std::array<std::array<double, 3>, 8> kColorRgb = {{
    {220, 30, 30},    // red
    {30, 180, 40},    // green
    {30, 60, 225},    // blue
    {235, 215, 35},   // yellow
    {140, 40, 175},   // purple
    {245, 135, 20},   // orange
    {245, 245, 245},  // white
    {250, 145, 190},  // pink
}};

// Benign palette: saturation kept at 30% of the sampled colors; band strips
// are 5% lighter than the gradient and glyphs 10% darker than the strip.
constexpr double kBenignSaturation = 0.3;
constexpr double kBandStrip = 1.05;
constexpr double kBandInk = 0.9;

constexpr std::array<std::array<double, 3>, 2> kMarkerRgb = {{{235, 235, 235}, {0, 190, 210}}};

// Per-flavor template mix: "a c s v and a c s", "the c s is v above the c s",
// "there is a c s v with a c s".
constexpr std::array<double, 3> kTemplateMixBlobs = {0.6, 0.3, 0.1};
constexpr std::array<double, 3> kTemplateMixStripes = {0.1, 0.3, 0.6};

std::array<double, kAttributeCount> attribute_weights(Flavor flavor) {
  std::array<double, kAttributeCount> w{};
  for (std::size_t i = 0; i < kAttributeCount; ++i) {
    const std::size_t rank = flavor == Flavor::Blobs ? i : kAttributeCount - 1 - i;
    w[i] = 1.0 / (1.0 + 0.3 * static_cast<double>(rank));
  }
  return w;
}

bool inside_shape(std::uint8_t shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v);
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0: return au <= 0.75 && av <= 0.75;
    case 1: return r2 <= 0.85 * 0.85;
    case 2: return v >= -0.8 && v <= 0.8 && au <= (v + 0.8) / 1.6 * 0.9;
    case 3: return (au <= 0.28 && av <= 0.9) || (av <= 0.28 && au <= 0.9);
    case 4: return r2 >= 0.5 * 0.5 && r2 <= 0.92 * 0.92;
    case 5: return au + av <= 0.9;
    case 6: return (std::abs(u - v) <= 0.38 || std::abs(u + v) <= 0.38) && au <= 0.9 && av <= 0.9;
    case 7: return av <= 0.3 && au <= 0.95;
    default: return false;
  }
}

double clamp_px(double v) { return std::clamp(std::round(v), 0.0, 255.0); }

void paint_blobs(Image& img, Rng& rng) {
  constexpr std::size_t kCtl = 5;
  const double base = rng.uniform(30.0, 140.0);
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-20.0, 20.0);
  std::array<std::array<std::array<double, 3>, kCtl>, kCtl> ctl{};
  for (auto& row : ctl) {
    for (auto& px : row) {
      const double lift = rng.uniform(-25.0, 25.0);
      for (std::size_t c = 0; c < 3; ++c) px[c] = base + tint[c] + lift;
    }
  }
  const double sy = static_cast<double>(kCtl - 1) / static_cast<double>(img.height() - 1);
  const double sx = static_cast<double>(kCtl - 1) / static_cast<double>(img.width() - 1);
  for (std::size_t y = 0; y < img.height(); ++y) {
    const double fy = static_cast<double>(y) * sy;
    const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(fy), kCtl - 2);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double fx = static_cast<double>(x) * sx;
      const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(fx), kCtl - 2);
      const double tx = fx - static_cast<double>(x0);
      const double noise = rng.uniform(-6.0, 6.0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = ctl[y0][x0][c] * (1 - tx) + ctl[y0][x0 + 1][c] * tx;
        const double bot = ctl[y0 + 1][x0][c] * (1 - tx) + ctl[y0 + 1][x0 + 1][c] * tx;
        img.at(y, x, c) = clamp_px(top * (1 - ty) + bot * ty + noise);
      }
    }
  }
}

void paint_stripes(Image& img, Rng& rng) {
  std::array<std::array<double, 3>, 2> tones{};
  const double base = rng.uniform(30.0, 140.0);
  for (auto& tone : tones) {
    const double lift = rng.uniform(-25.0, 25.0);
    for (double& c : tone) c = base + lift + rng.uniform(-15.0, 15.0);
  }
  const std::size_t orientation = rng.below(3);
  const std::size_t period = 6 + rng.below(7);
  for (std::size_t y = 0; y < img.height(); ++y) {
    for (std::size_t x = 0; x < img.width(); ++x) {
      const std::size_t t = orientation == 0 ? y : orientation == 1 ? x : x + y;
      const auto& tone = tones[(t / (period / 2)) % 2];
      const double noise = rng.uniform(-6.0, 6.0);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = clamp_px(tone[c] + noise);
    }
  }
}

struct CellBox {
  std::size_t y0, y1, x0, x1;
};

CellBox cell_box(std::size_t cell, std::size_t grid, const ImageShape& size) {
  const std::size_t r = cell / grid, c = cell % grid;
  return {r * size.height / grid, (r + 1) * size.height / grid, c * size.width / grid,
          (c + 1) * size.width / grid};
}

void paint_object(Image& img, const SceneObject& obj, std::size_t grid) {
  const CellBox cb = cell_box(obj.cell, grid, img.shape());
  const std::size_t ch = cb.y1 - cb.y0, cw = cb.x1 - cb.x0;
  const std::size_t band = ch / 4;
  const std::size_t box_y0 = cb.y0, box_y1 = cb.y1 - band;
  const std::size_t box_x0 = cb.x0 + cw / 8, box_x1 = cb.x1 - cw / 8;
  const double cy = 0.5 * static_cast<double>(box_y0 + box_y1);
  const double cx = 0.5 * static_cast<double>(box_x0 + box_x1);
  const double hy = 0.5 * static_cast<double>(box_y1 - box_y0);
  const double hx = 0.5 * static_cast<double>(box_x1 - box_x0);
  const auto& rgb = kColorRgb[obj.color];
  for (std::size_t y = box_y0; y < box_y1; ++y) {
    for (std::size_t x = box_x0; x < box_x1; ++x) {
      const double v = (static_cast<double>(y) + 0.5 - cy) / hy;
      const double u = (static_cast<double>(x) + 0.5 - cx) / hx;
      if (!inside_shape(obj.shape, u, v)) continue;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  }
  // Motion marker: one of four blocks in the band, in one of two marker tones.
  const std::size_t block = obj.motion % 4;
  const auto& marker = kMarkerRgb[obj.motion / 4];
  const std::size_t bx0 = cb.x0 + block * cw / 4, bx1 = cb.x0 + (block + 1) * cw / 4;
  for (std::size_t y = box_y1; y < cb.y1; ++y) {
    for (std::size_t x = bx0; x < bx1; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = marker[c];
    }
  }
}

std::string split_key(Split s) { return to_string(s); }

json caption_to_json(const Caption& c) { return json{{"text", c.text}, {"tokens", c.tokens}}; }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, path.string() + ": " + e.what());
  }
}

std::string image_name(ImageId id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.ppm", static_cast<long long>(id));
  return buf;
}

}  // namespace

const char* to_string(Pos pos) noexcept {
  switch (pos) {
    case Pos::Noun: return "noun";
    case Pos::Verb: return "verb";
    case Pos::Adjective: return "adjective";
    case Pos::Stopword: return "stopword";
  }
  return "?";
}

const char* to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

const char* to_string(Flavor flavor) noexcept {
  return flavor == Flavor::Blobs ? "blobs" : "stripes";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  raise(ErrorKind::Config, "unknown split '" + std::string(s) + "'");
}

Flavor parse_flavor(std::string_view s) {
  if (s == "blobs") return Flavor::Blobs;
  if (s == "stripes") return Flavor::Stripes;
  raise(ErrorKind::Config, "unknown corpus flavor '" + std::string(s) + "'");
}

Flavor other_flavor(Flavor f) noexcept {
  return f == Flavor::Blobs ? Flavor::Stripes : Flavor::Blobs;
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> words;
  std::vector<Pos> pos;
  for (const char* w : kStopWords) words.emplace_back(w), pos.push_back(Pos::Stopword);
  for (const char* w : kShapes) words.emplace_back(w), pos.push_back(Pos::Noun);
  for (const char* w : kColors) words.emplace_back(w), pos.push_back(Pos::Adjective);
  for (const char* w : kMotions) words.emplace_back(w), pos.push_back(Pos::Verb);
  return Vocabulary(std::move(words), std::move(pos));
}

Vocabulary::Vocabulary(std::vector<std::string> words, std::vector<Pos> pos)
    : words_(std::move(words)), pos_(std::move(pos)) {}

const std::string& Vocabulary::word(TokenId id) const {
  if (id >= words_.size()) raise(ErrorKind::Vocabulary, "token id " + std::to_string(id));
  return words_[id];
}

Pos Vocabulary::pos(TokenId id) const {
  if (id >= pos_.size()) raise(ErrorKind::Vocabulary, "token id " + std::to_string(id));
  return pos_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<TokenId>(i);
  }
  return std::nullopt;
}

TokenId Vocabulary::id(std::string_view word) const {
  if (auto t = find(word)) return *t;
  raise(ErrorKind::Vocabulary, "unknown word '" + std::string(word) + "'");
}

std::vector<TokenId> Vocabulary::with_pos(Pos p) const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < pos_.size(); ++i) {
    if (pos_[i] == p) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

void validate_lexicon(const Vocabulary& vocab) {
  if (vocab.words().size() != vocab.lexicon().size()) {
    raise(ErrorKind::Config, "POS lexicon is not total over the vocabulary");
  }
  std::set<std::string> seen;
  for (const auto& w : vocab.words()) {
    if (w.empty() || !seen.insert(w).second) raise(ErrorKind::Config, "duplicate or empty word '" + w + "'");
  }
  for (Pos p : {Pos::Noun, Pos::Adjective, Pos::Verb}) {
    if (vocab.with_pos(p).size() != kAttributeCount) {
      raise(ErrorKind::Config, std::string("lexicon needs exactly 8 ") + to_string(p) + "s");
    }
  }
  for (const char* w : kStopWords) {
    auto t = vocab.find(w);
    if (!t || vocab.pos(*t) != Pos::Stopword) {
      raise(ErrorKind::Config, std::string("template stop word '") + w + "' missing from lexicon");
    }
  }
}

bool Caption::contains(TokenId token) const {
  return std::find(tokens.begin(), tokens.end(), token) != tokens.end();
}

Caption make_caption(const Vocabulary& vocab, std::vector<TokenId> tokens) {
  Caption c;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) c.text += ' ';
    c.text += vocab.word(tokens[i]);
  }
  c.tokens = std::move(tokens);
  return c;
}

std::vector<const CorpusItem*> Corpus::split(Split s) const {
  std::vector<const CorpusItem*> out;
  for (const auto& item : items) {
    if (item.split == s) out.push_back(&item);
  }
  return out;
}

std::size_t Corpus::caption_count() const {
  std::size_t n = 0;
  for (const auto& item : items) n += item.captions.size();
  return n;
}

ImageShape Corpus::image_shape() const { return {params.image_size, params.image_size, 3}; }

SceneSpec sample_scene(std::uint64_t seed, const WorldParams& params) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.background = params.flavor;
  const std::size_t cells = params.grid * params.grid;
  const std::size_t n = 1 + rng.below(std::min(params.max_objects, cells));
  std::vector<std::uint8_t> order(cells);
  for (std::size_t i = 0; i < cells; ++i) order[i] = static_cast<std::uint8_t>(i);
  rng.shuffle(std::span<std::uint8_t>(order));
  const auto weights = attribute_weights(params.flavor);
  for (std::size_t i = 0; i < n; ++i) {
    SceneObject obj;
    obj.cell = order[i];
    obj.shape = static_cast<std::uint8_t>(rng.weighted(weights));
    obj.color = static_cast<std::uint8_t>(rng.weighted(weights));
    obj.motion = static_cast<std::uint8_t>(rng.weighted(weights));
    spec.objects.push_back(obj);
  }
  return spec;
}

Image render_scene(const SceneSpec& spec, ImageShape size, std::size_t grid) {
  if (size.height < 32 || size.width < 32) raise(ErrorKind::Spec, "scene size must be at least 32x32");
  if (size.channels != 3) raise(ErrorKind::Spec, "scenes are RGB");
  if (grid == 0) raise(ErrorKind::Spec, "grid must be positive");
  if (spec.objects.size() > grid * grid) raise(ErrorKind::Spec, "more objects than cells");
  std::set<std::uint8_t> cells;
  for (const auto& obj : spec.objects) {
    if (obj.cell >= grid * grid) raise(ErrorKind::Spec, "object cell outside the grid");
    if (!cells.insert(obj.cell).second) raise(ErrorKind::Spec, "two objects share a cell");
    if (obj.shape >= kAttributeCount || obj.color >= kAttributeCount || obj.motion >= kAttributeCount) {
      raise(ErrorKind::Spec, "object attribute out of range");
    }
  }
  Image img(size);
  Rng rng(derive_seed(spec.seed, "background"));
  if (spec.background == Flavor::Blobs) {
    paint_blobs(img, rng);
  } else {
    paint_stripes(img, rng);
  }
  for (const auto& obj : spec.objects) paint_object(img, obj, grid);
  return img;
}

std::vector<Caption> describe_scene(const SceneSpec& spec, const WorldParams& params,
                                    std::uint64_t seed) {
  const Vocabulary& v = params.vocab;
  const auto nouns = v.with_pos(Pos::Noun);
  const auto adjs = v.with_pos(Pos::Adjective);
  const auto verbs = v.with_pos(Pos::Verb);
  const TokenId a = v.id("a"), the = v.id("the"), is = v.id("is"), and_ = v.id("and"),
                with = v.id("with"), there = v.id("there");
  const auto& mix = params.flavor == Flavor::Blobs ? kTemplateMixBlobs : kTemplateMixStripes;
  const std::size_t grid = params.grid;

  Rng rng(seed);
  std::vector<Caption> out;
  for (std::size_t k = 0; k < params.captions_per_image; ++k) {
    std::vector<SceneObject> objs = spec.objects;
    rng.shuffle(std::span<SceneObject>(objs));
    if (objs.size() > 1 && rng.uniform() < params.caption_noise) {
      objs.resize(1 + rng.below(objs.size() - 1));
    }
    const auto color = [&](const SceneObject& o) { return adjs[o.color]; };
    const auto shape = [&](const SceneObject& o) { return nouns[o.shape]; };
    const auto motion = [&](const SceneObject& o) { return verbs[o.motion]; };

    std::vector<TokenId> t;
    switch (rng.weighted(mix)) {
      case 0: {
        // a c s v [and a c s v] [and a c s]
        for (std::size_t i = 0; i < objs.size(); ++i) {
          if (i) t.push_back(and_);
          t.insert(t.end(), {a, color(objs[i]), shape(objs[i])});
          if (i == 0 || (i == 1 && objs.size() == 2)) t.push_back(motion(objs[i]));
        }
        break;
      }
      case 1: {
        // the c s is v [above|below|beside the c s] [and c s]
        t = {the, color(objs[0]), shape(objs[0]), is, motion(objs[0])};
        if (objs.size() > 1) {
          const std::size_t r0 = objs[0].cell / grid, r1 = objs[1].cell / grid;
          const TokenId rel = r0 == r1 ? v.id("beside") : r0 < r1 ? v.id("above") : v.id("below");
          t.insert(t.end(), {rel, the, color(objs[1]), shape(objs[1])});
        }
        if (objs.size() > 2) t.insert(t.end(), {and_, color(objs[2]), shape(objs[2])});
        break;
      }
      default: {
        // there is a c s v [with a c s]; a third object would overrun 12 tokens
        t = {there, is, a, color(objs[0]), shape(objs[0]), motion(objs[0])};
        if (objs.size() > 1) t.insert(t.end(), {with, a, color(objs[1]), shape(objs[1])});
        break;
      }
    }
    out.push_back(make_caption(v, std::move(t)));
  }
  return out;
}

Corpus generate_corpus(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                       std::size_t n_test, const WorldParams& params) {
  if (n_train == 0 || n_val == 0 || n_test == 0) raise(ErrorKind::Config, "split sizes must be >= 1");
  if (params.grid == 0 || params.image_size < 32) raise(ErrorKind::Config, "invalid world geometry");
  if (params.max_objects < 1 || params.max_objects > 3 || params.captions_per_image < 1) {
    raise(ErrorKind::Config, "world params need 1-3 objects per scene and at least one caption");
  }
  if (params.caption_noise < 0.0 || params.caption_noise > 1.0) raise(ErrorKind::Config, "caption_noise outside [0,1]");
  validate_lexicon(params.vocab);

  Corpus corpus;
  corpus.flavor = params.flavor;
  corpus.seed = seed;
  corpus.params = params;
  Rng scene_seeds(derive_seed(seed, std::string("corpus/") + to_string(params.flavor)));
  const ImageShape shape = corpus.image_shape();
  const std::array<std::pair<Split, std::size_t>, 3> plan = {
      {{Split::Train, n_train}, {Split::Val, n_val}, {Split::Test, n_test}}};
  ImageId next = 0;
  for (const auto& [split, count] : plan) {
    for (std::size_t i = 0; i < count; ++i) {
      CorpusItem item;
      item.id = next++;
      item.split = split;
      item.scene = sample_scene(scene_seeds.next_u64(), params);
      item.image = render_scene(item.scene, shape, params.grid);
      item.captions = describe_scene(item.scene, params, derive_seed(item.scene.seed, "captions"));
      corpus.items.push_back(std::move(item));
    }
  }
  return corpus;
}

BenignSet generate_benign_set(std::uint64_t seed, std::size_t n_h, ImageShape size) {
  if (n_h == 0) raise(ErrorKind::Config, "benign set size must be >= 1");
  if (size.channels != 3 || size.height < 8 || size.width < 8) raise(ErrorKind::Config, "benign images are RGB, >= 8x8");
  BenignSet set;
  set.seed = seed;
  Rng rng(derive_seed(seed, "benign"));
  for (std::size_t n = 0; n < n_h; ++n) {
    Image img(size);
    // Bright, washed-out two-tone diagonal gradient.
    std::array<std::array<double, 3>, 2> ends{};
    for (auto& e : ends) {
      for (double& c : e) c = rng.uniform(180.0, 250.0);
      const double grey = (e[0] + e[1] + e[2]) / 3.0;
      for (double& c : e) c = grey + kBenignSaturation * (c - grey);
    }
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double dy = std::sin(angle), dx = std::cos(angle);
    const double span = std::abs(dy) * static_cast<double>(size.height) +
                        std::abs(dx) * static_cast<double>(size.width);
    for (std::size_t y = 0; y < size.height; ++y) {
      for (std::size_t x = 0; x < size.width; ++x) {
        double t = (dy * (static_cast<double>(y) - 0.5 * static_cast<double>(size.height)) +
                    dx * (static_cast<double>(x) - 0.5 * static_cast<double>(size.width))) / span + 0.5;
        t = std::clamp(t, 0.0, 1.0);
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = clamp_px(ends[0][c] * (1 - t) + ends[1][c] * t);
      }
    }
    // Text bands: a lighter strip with blocky glyphs a shade darker.
    const std::size_t bands = 1 + rng.below(3);
    const std::size_t band_h = std::max<std::size_t>(3, size.height / 7);
    for (std::size_t b = 0; b < bands; ++b) {
      const std::size_t y0 = rng.below(size.height - band_h);
      for (std::size_t y = y0; y < y0 + band_h; ++y) {
        for (std::size_t x = 0; x < size.width; ++x) {
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = clamp_px(img.at(y, x, c) * kBandStrip);
        }
      }
      std::size_t x = 1 + rng.below(3);
      while (x + 2 < size.width) {
        const std::size_t glyph_w = 2 + rng.below(3);
        for (std::size_t y = y0 + 1; y + 1 < y0 + band_h; ++y) {
          for (std::size_t gx = x; gx < std::min(size.width, x + glyph_w); ++gx) {
            if (rng.uniform() < 0.7) {
              for (std::size_t c = 0; c < 3; ++c) img.at(y, gx, c) = clamp_px(img.at(y, gx, c) * kBandInk);
            }
          }
        }
        x += glyph_w + 1 + rng.below(3);
      }
    }
    set.images.push_back(std::move(img));
  }
  return set;
}

std::vector<std::size_t> word_frequencies(const Corpus& corpus) {
  std::vector<std::size_t> freq(corpus.vocab().size(), 0);
  for (const auto& item : corpus.items) {
    for (const auto& cap : item.captions) {
      for (TokenId t : cap.tokens) ++freq.at(t);
    }
  }
  return freq;
}

std::vector<KeywordInfo> select_keywords(const Corpus& corpus, std::size_t per_pos,
                                         std::uint64_t seed) {
  if (per_pos == 0) return {};
  const Vocabulary& vocab = corpus.vocab();
  const auto freq = word_frequencies(corpus);
  std::set<TokenId> in_test;
  for (const auto* item : corpus.split(Split::Test)) {
    for (const auto& cap : item->captions) in_test.insert(cap.tokens.begin(), cap.tokens.end());
  }
  Rng rng(seed);
  std::vector<KeywordInfo> out;
  for (Pos pos : {Pos::Noun, Pos::Verb, Pos::Adjective}) {
    std::vector<TokenId> pool;
    for (TokenId t : vocab.with_pos(pos)) {
      if (freq[t] > 0 && in_test.count(t)) pool.push_back(t);
    }
    if (pool.size() < per_pos) {
      raise(ErrorKind::Config, std::string("only ") + std::to_string(pool.size()) + " usable " +
                                   to_string(pos) + "s, need " + std::to_string(per_pos));
    }
    std::stable_sort(pool.begin(), pool.end(), [&](TokenId x, TokenId y) { return freq[x] > freq[y]; });
    const std::size_t tercile = std::max<std::size_t>(1, pool.size() / 3);
    std::vector<TokenId> chosen;
    std::vector<TokenId> rest;
    chosen.push_back(pool[rng.below(tercile)]);
    if (per_pos >= 2) chosen.push_back(pool[pool.size() - 1 - rng.below(tercile)]);
    for (TokenId t : pool) {
      if (std::find(chosen.begin(), chosen.end(), t) == chosen.end()) rest.push_back(t);
    }
    rng.shuffle(std::span<TokenId>(rest));
    for (std::size_t i = 0; chosen.size() < per_pos; ++i) chosen.push_back(rest[i]);
    std::stable_sort(chosen.begin(), chosen.end(), [&](TokenId x, TokenId y) { return freq[x] > freq[y]; });
    for (TokenId t : chosen) out.push_back({t, vocab.word(t), pos, freq[t]});
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + (dir / "images").string() + ": " + ec.message());
  json items = json::array();
  for (const auto& item : corpus.items) {
    json objects = json::array();
    for (const auto& o : item.scene.objects) {
      objects.push_back({{"shape", o.shape}, {"color", o.color}, {"motion", o.motion}, {"cell", o.cell}});
    }
    json caps = json::array();
    for (const auto& c : item.captions) caps.push_back(caption_to_json(c));
    const std::string name = image_name(item.id);
    items.push_back({{"id", item.id},
                     {"split", split_key(item.split)},
                     {"image", "images/" + name},
                     {"scene", {{"seed", item.scene.seed}, {"background", to_string(item.scene.background)}, {"objects", objects}}},
                     {"captions", caps}});
    write_ppm(item.image, dir / "images" / name);
  }
  json lexicon = json::array();
  for (Pos p : corpus.vocab().lexicon()) lexicon.push_back(to_string(p));
  const auto& p = corpus.params;
  json doc = {{"format", "tthlab-corpus/1"},
              {"flavor", to_string(corpus.flavor)},
              {"seed", corpus.seed},
              {"params", {{"image_size", p.image_size}, {"grid", p.grid}, {"captions_per_image", p.captions_per_image},
                          {"max_objects", p.max_objects}, {"caption_noise", p.caption_noise}}},
              {"vocab", corpus.vocab().words()},
              {"lexicon", lexicon},
              {"items", items}};
  write_text_file(dir / "manifest.json", doc.dump(1) + "\n");
}

namespace {

Pos parse_pos(const std::string& s) {
  for (Pos p : {Pos::Noun, Pos::Verb, Pos::Adjective, Pos::Stopword}) {
    if (s == to_string(p)) return p;
  }
  raise(ErrorKind::Format, "unknown POS '" + s + "'");
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& dir) {
  const json doc = read_json_file(dir / "manifest.json");
  try {
    if (doc.at("format") != "tthlab-corpus/1") raise(ErrorKind::Format, "unsupported corpus manifest format");
    Corpus corpus;
    corpus.flavor = parse_flavor(doc.at("flavor").get<std::string>());
    corpus.seed = doc.at("seed").get<std::uint64_t>();
    const auto& p = doc.at("params");
    corpus.params.flavor = corpus.flavor;
    corpus.params.image_size = p.at("image_size").get<std::size_t>();
    corpus.params.grid = p.at("grid").get<std::size_t>();
    corpus.params.captions_per_image = p.at("captions_per_image").get<std::size_t>();
    corpus.params.max_objects = p.at("max_objects").get<std::size_t>();
    corpus.params.caption_noise = p.at("caption_noise").get<double>();
    std::vector<Pos> lexicon;
    for (const auto& s : doc.at("lexicon")) lexicon.push_back(parse_pos(s.get<std::string>()));
    corpus.params.vocab = Vocabulary(doc.at("vocab").get<std::vector<std::string>>(), std::move(lexicon));
    validate_lexicon(corpus.params.vocab);
    for (const auto& j : doc.at("items")) {
      CorpusItem item;
      item.id = j.at("id").get<ImageId>();
      item.split = parse_split(j.at("split").get<std::string>());
      const auto& scene = j.at("scene");
      item.scene.seed = scene.at("seed").get<std::uint64_t>();
      item.scene.background = parse_flavor(scene.at("background").get<std::string>());
      for (const auto& o : scene.at("objects")) {
        item.scene.objects.push_back({o.at("shape").get<std::uint8_t>(), o.at("color").get<std::uint8_t>(),
                                      o.at("motion").get<std::uint8_t>(), o.at("cell").get<std::uint8_t>()});
      }
      for (const auto& c : j.at("captions")) {
        auto tokens = c.at("tokens").get<std::vector<TokenId>>();
        for (TokenId t : tokens) corpus.params.vocab.word(t);
        Caption cap{std::move(tokens), c.at("text").get<std::string>()};
        item.captions.push_back(std::move(cap));
      }
      item.image = read_ppm(dir / j.at("image").get<std::string>());
      if (item.image.shape() != corpus.image_shape()) raise(ErrorKind::Format, "image size disagrees with manifest");
      corpus.items.push_back(std::move(item));
    }
    return corpus;
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, (dir / "manifest.json").string() + ": " + e.what());
  }
}

void save_benign_set(const BenignSet& set, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) raise(ErrorKind::Io, "cannot create " + (dir / "images").string() + ": " + ec.message());
  json images = json::array();
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    const std::string name = image_name(static_cast<ImageId>(i));
    write_ppm(set.images[i], dir / "images" / name);
    images.push_back("images/" + name);
  }
  json doc = {{"format", "tthlab-benign/1"}, {"seed", set.seed}, {"images", images}};
  write_text_file(dir / "manifest.json", doc.dump(1) + "\n");
}

BenignSet load_benign_set(const std::filesystem::path& dir) {
  const json doc = read_json_file(dir / "manifest.json");
  try {
    if (doc.at("format") != "tthlab-benign/1") raise(ErrorKind::Format, "unsupported benign manifest format");
    BenignSet set;
    set.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& name : doc.at("images")) set.images.push_back(read_ppm(dir / name.get<std::string>()));
    return set;
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, (dir / "manifest.json").string() + ": " + e.what());
  }
}

}  // namespace tth
