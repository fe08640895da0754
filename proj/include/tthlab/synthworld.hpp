#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tthlab/image.hpp"

namespace tth {

using TokenId = std::uint32_t;
using ImageId = std::int64_t;

enum class Pos { Noun, Verb, Adjective, Stopword };
enum class Split { Train, Val, Test };

// Background texture families of the two corpus flavors.
enum class Flavor { Blobs, Stripes };

const char* to_string(Pos pos) noexcept;
const char* to_string(Split split) noexcept;
const char* to_string(Flavor flavor) noexcept;
Split parse_split(std::string_view s);
Flavor parse_flavor(std::string_view s);
Flavor other_flavor(Flavor f) noexcept;

inline constexpr std::size_t kAttributeCount = 8;

class Vocabulary {
 public:
  // 9 stop words, then 8 shapes (nouns), 8 colors (adjectives), 8 motions (verbs).
  static Vocabulary standard();

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> words, std::vector<Pos> pos);

  std::size_t size() const noexcept { return words_.size(); }
  const std::string& word(TokenId id) const;
  Pos pos(TokenId id) const;
  std::optional<TokenId> find(std::string_view word) const;
  TokenId id(std::string_view word) const;  // throws a vocabulary error
  std::vector<TokenId> with_pos(Pos pos) const;

  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::vector<Pos>& lexicon() const noexcept { return pos_; }

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> words_;
  std::vector<Pos> pos_;
};

// Throws a config error unless the vocabulary can drive the caption templates:
// unique words, a total POS lexicon, exactly 8 words per content POS, and every
// template stop word present.
void validate_lexicon(const Vocabulary& vocab);

struct Caption {
  std::vector<TokenId> tokens;
  std::string text;

  bool contains(TokenId token) const;
  bool operator==(const Caption&) const = default;
};

Caption make_caption(const Vocabulary& vocab, std::vector<TokenId> tokens);

// Attribute indices refer to the k-th word of the POS in the vocabulary.
struct SceneObject {
  std::uint8_t shape = 0;
  std::uint8_t color = 0;
  std::uint8_t motion = 0;
  std::uint8_t cell = 0;  // row-major index into the placement grid
  bool operator==(const SceneObject&) const = default;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  Flavor background = Flavor::Blobs;
  bool operator==(const SceneSpec&) const = default;
};

struct WorldParams {
  Flavor flavor = Flavor::Blobs;
  std::size_t image_size = 64;
  std::size_t grid = 4;
  std::size_t captions_per_image = 5;
  std::size_t max_objects = 2;
  double caption_noise = 0.1;
  Vocabulary vocab = Vocabulary::standard();
};

struct CorpusItem {
  ImageId id = 0;
  Split split = Split::Train;
  SceneSpec scene;
  Image image;
  std::vector<Caption> captions;
  bool operator==(const CorpusItem&) const = default;
};

struct Corpus {
  Flavor flavor = Flavor::Blobs;
  std::uint64_t seed = 0;
  WorldParams params;
  std::vector<CorpusItem> items;  // ordered by id; ids are unique

  const Vocabulary& vocab() const noexcept { return params.vocab; }
  std::vector<const CorpusItem*> split(Split s) const;
  std::size_t caption_count() const;
  ImageShape image_shape() const;
};

struct BenignSet {
  std::uint64_t seed = 0;
  std::vector<Image> images;
};

Corpus generate_corpus(std::uint64_t seed, std::size_t n_train, std::size_t n_val,
                       std::size_t n_test, const WorldParams& params);

SceneSpec sample_scene(std::uint64_t seed, const WorldParams& params);

// Draws the background family, then each object's shape in its color with the
// motion marker band underneath.
Image render_scene(const SceneSpec& spec, ImageShape size, std::size_t grid = 4);

std::vector<Caption> describe_scene(const SceneSpec& spec, const WorldParams& params,
                                    std::uint64_t seed);

BenignSet generate_benign_set(std::uint64_t seed, std::size_t n_h, ImageShape size);

struct KeywordInfo {
  TokenId token = 0;
  std::string word;
  Pos pos = Pos::Noun;
  std::size_t frequency = 0;
  bool operator==(const KeywordInfo&) const = default;
};

// Token occurrences per vocabulary id, over every caption of every split.
std::vector<std::size_t> word_frequencies(const Corpus& corpus);

std::vector<KeywordInfo> select_keywords(const Corpus& corpus, std::size_t per_pos,
                                         std::uint64_t seed);

// Manifest + PPM persistence.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);
void save_benign_set(const BenignSet& set, const std::filesystem::path& dir);
BenignSet load_benign_set(const std::filesystem::path& dir);

}  // namespace tth
