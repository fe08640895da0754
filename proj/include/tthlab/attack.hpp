#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tthlab/beacon.hpp"
#include "tthlab/image.hpp"
#include "tthlab/matcher.hpp"
#include "tthlab/synthworld.hpp"

namespace tth {

enum class Placement { TopRight, TopLeft, BottomRight, BottomLeft, Offset };

const char* to_string(Placement p) noexcept;
Placement parse_placement(std::string_view s);

struct MaskSpec {
  ImageShape image;
  double patch_ratio = 0.1;
  Placement placement = Placement::TopRight;
  std::size_t offset_y = 0;  // used with Placement::Offset
  std::size_t offset_x = 0;

  // round(sqrt(ratio) * min(H, W)); validate() requires >= 4.
  std::size_t side() const;
  PixelRect rect() const;
  // Throws a config error on a bad ratio or side, a dimension error if the
  // square does not fit at its placement.
  void validate() const;
  bool operator==(const MaskSpec&) const = default;
};

// Binary mask M with the image's shape: 1 inside the patch window.
Image mask_image(const MaskSpec& mask);

struct LossPoint {
  double total = 0.0;
  double attack = 0.0;
  double usability = 0.0;
  bool operator==(const LossPoint&) const = default;
};

struct PatchState {
  Image delta;
  Image delta_o;
  MaskSpec mask;
  double lambda = 0.3;
  double eta = 0.01;
  std::size_t max_iters = 300;
  std::size_t iter = 0;
  std::vector<LossPoint> trace;
};

struct KeywordContext {
  TokenId keyword = 0;
  std::string word;
  std::vector<Caption> sentences;  // the sampled S_w
  std::size_t available = 0;       // train captions containing the keyword
  Embedding e_w;
  double mcs = 0.0;
};

// Samples min(m, available) train captions containing `w`; e_w is the
// renormalized mean of their embeddings and mcs the mean cosine to e_w.
KeywordContext build_keyword_context(const MatcherModel& model, const Corpus& corpus, TokenId w,
                                     std::size_t m, std::uint64_t seed);

// x = (1 - M) * benign + M * pad(delta).
Image apply_patch(const Image& benign, const Image& delta, const MaskSpec& mask);

// Mean over images of 1 - cos(e_w, e(x)).
double attack_loss(const MatcherModel& model, std::span<const Image> images, const Embedding& e_w);

// Sum of squared differences over (H * W * 255^2).
double usability_term(const Image& delta, const Image& delta_o);

LossPoint combined_loss(const MatcherModel& model, std::span<const Image> benign,
                        const PatchState& patch, const Embedding& e_w);

// Gradient of combined_loss().total with respect to delta.
Image patch_gradient(const MatcherModel& model, std::span<const Image> benign,
                     const PatchState& patch, const Embedding& e_w);

// delta <- clamp(delta - eta * grad, 0, 255); iter + 1; `loss` (the loss at
// the pre-update delta) is appended to the trace when given.
PatchState update_patch(PatchState patch, const Image& grad,
                        const std::optional<LossPoint>& loss = std::nullopt);

// Loss and gradient for one benign set and mask, reusing the embedding work
// for pixels outside the patch between calls.
class PatchObjective {
 public:
  PatchObjective(const MatcherModel& model, std::span<const Image> benign, const MaskSpec& mask,
                 const Embedding& e_w, const Image& delta_o, double lambda);

  LossPoint evaluate(const Image& delta);
  // Loss at delta and its gradient.
  LossPoint evaluate_with_grad(const Image& delta, Image& grad);

 private:
  std::vector<RegionEncoder> encoders_;
  Embedding e_w_;
  Image delta_o_;
  double lambda_;
};

struct AttackConfig {
  double lambda = 0.3;
  double eta = 0.01;
  std::size_t iters = 300;
  double patch_ratio = 0.1;
  std::size_t m = 500;
  std::uint64_t seed = 1;
  Placement placement = Placement::TopRight;
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
  std::string payload_hex = kDefaultBeaconPayload;
  std::size_t beacon_k = 8;
};

// Restart rule: a run converged iff the best total loss improved by less than
// kConvergedRelImprovement (relative) over its last kConvergenceWindow
// iterations and the attack term at the best point is below kConvergedAttack.
inline constexpr std::size_t kConvergenceWindow = 50;
inline constexpr double kConvergedRelImprovement = 1e-4;
inline constexpr double kConvergedAttack = 0.5;

struct TrojanSet {
  TokenId keyword = 0;
  std::string word;
  std::vector<Image> images;
  std::vector<std::size_t> source_benign_ids;
  PatchState patch;  // delta is the best iterate; trace covers every iteration run
  KeywordContext context;
  BeaconCode beacon;
  BeaconDecode usability;
  LossPoint initial;
  LossPoint best;   // best iterate before quantization
  LossPoint final;  // the quantized patch that was applied
  bool converged = false;
  bool restarted = false;
};

// The anchor patch delta_o for a mask: the beacon when the side admits one,
// else the same grid rendered into fewer pixels.
Image anchor_patch(const AttackConfig& cfg, std::size_t side, BeaconCode* beacon_out = nullptr);

// Both the step and the box constraint work in pixel units: each iteration
// moves every pixel by eta * 255 against the sign of the gradient. The best
// iterate is rounded to integer pixels before it is applied.
TrojanSet generate_trojan_set(const MatcherModel& model, const Corpus& corpus,
                              const BenignSet& benign, TokenId w, const AttackConfig& cfg);

// Same, with a prebuilt keyword context (e.g. from another corpus flavor).
TrojanSet generate_trojan_set(const MatcherModel& model, const KeywordContext& context,
                              const BenignSet& benign, const AttackConfig& cfg);

}  // namespace tth
