#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tthlab/image.hpp"
#include "tthlab/synthworld.hpp"
#include "tthlab/tensor.hpp"

namespace tth {

// A: linear image encoder. B: one tanh hidden layer in the image path.
enum class Arch { A, B };

const char* to_string(Arch arch) noexcept;
Arch parse_arch(std::string_view s);

struct MatcherHyper {
  Arch arch = Arch::A;
  std::size_t d = 64;
  std::size_t d_e = 64;
  std::size_t pool_factor = 4;
  std::size_t hidden = 128;
  double lr = 0.3;
  std::size_t epochs = 220;
  std::size_t batch = 50;
  std::uint64_t seed = 1;
  double temperature = 0.07;
  // Every token row starts at offset * mu + noise for one shared random mu, so
  // captions begin in a narrow cone away from the image embeddings.
  double token_offset = 2.5;
};

struct MatcherModel {
  Arch arch = Arch::A;
  ImageShape input;
  std::size_t pool_factor = 4;
  std::size_t vocab_size = 0;
  std::size_t d_e = 64;
  std::size_t d = 64;
  std::size_t hidden = 0;  // 0 for arch A
  double temperature = 0.07;
  std::uint64_t seed = 0;

  Tensor token_table;  // vocab x d_e
  Tensor text_proj;    // d_e x d
  Tensor img_hidden;   // features x hidden (arch B only)
  Tensor img_proj;     // features x d (A) or hidden x d (B)

  std::size_t feature_len() const noexcept;
  std::string arch_tag() const;
  bool operator==(const MatcherModel&) const = default;
};

// Unit-norm vector in the shared space.
struct Embedding {
  std::vector<double> vec;
  bool operator==(const Embedding&) const = default;
};

struct TrainLog {
  std::size_t epochs = 0;
  std::vector<double> losses;
  double val_r10 = 0.0;
};

MatcherModel init_matcher(const MatcherHyper& hyper, std::size_t vocab_size, ImageShape input);

Embedding embed_text(const MatcherModel& model, std::span<const TokenId> tokens);
Embedding embed_text(const MatcherModel& model, const Caption& caption);
Embedding embed_image(const MatcherModel& model, const Image& image);
double similarity(const MatcherModel& model, const Caption& caption, const Image& image);

// Average-pooled pixels scaled to [0, 1]; the encoder's input features.
std::vector<double> pooled_features(const MatcherModel& model, const Image& image);

// Gradient of (upstream . e(x)) with respect to every input pixel.
Image image_embedding_input_grad(const MatcherModel& model, const Image& image,
                                 std::span<const double> upstream);

std::pair<MatcherModel, TrainLog> train_matcher(const Corpus& corpus, const MatcherHyper& hyper);

// Caption-to-image R@K (percent) over one split, each caption relevant to its source image.
double split_recall(const MatcherModel& model, const Corpus& corpus, Split split, std::size_t k);

// Encodes `base` with the pixels inside `region` replaced, reusing everything
// outside the region between calls. encode() then backward() gives the gradient
// of (upstream . e) with respect to the region's pixels.
class RegionEncoder {
 public:
  RegionEncoder(const MatcherModel& model, const Image& base, const PixelRect& region);

  const Embedding& encode(const Image& region_pixels);
  Image backward(std::span<const double> upstream) const;

 private:
  const MatcherModel* model_;
  PixelRect region_;
  std::size_t first_width_;           // columns of the first image-path matrix
  std::vector<std::size_t> touched_;  // pooled feature indices overlapping the region
  std::vector<double> base_pre_;      // first-layer pre-activation from pixels outside the region
  std::vector<double> sums_;          // pooled sums of region pixels, per touched feature
  std::vector<double> act_;           // hidden activation (arch B)
  std::vector<double> z_;
  double norm_ = 0.0;
  Embedding e_;
  bool encoded_ = false;
};

void save_model(const MatcherModel& model, const std::filesystem::path& path);
MatcherModel load_model(const std::filesystem::path& path,
                        const std::optional<std::string>& expected_arch_tag = std::nullopt);

}  // namespace tth
