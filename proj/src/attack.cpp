#include "tthlab/attack.hpp"

#include <algorithm>
#include <cmath>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

namespace {

double usability_scale(const Image& delta) {
  return 1.0 / (static_cast<double>(delta.height() * delta.width()) * 255.0 * 255.0);
}

void check_patch(const Image& delta, const MaskSpec& mask) {
  const std::size_t side = mask.side();
  if (delta.height() != side || delta.width() != side || delta.channels() != mask.image.channels) {
    raise(ErrorKind::Dimension, "patch " + delta.shape().to_string() + " does not match the " +
                                    std::to_string(side) + "-pixel mask");
  }
}

// Relative improvement of the running best over the trailing window.
bool run_converged(const std::vector<double>& best_by_iter, double best_attack) {
  if (best_by_iter.size() < 2) return false;
  const std::size_t window = std::min(kConvergenceWindow, best_by_iter.size() - 1);
  const double before = best_by_iter[best_by_iter.size() - 1 - window];
  const double now = best_by_iter.back();
  const double rel = (before - now) / std::max(std::abs(before), 1e-12);
  return rel < kConvergedRelImprovement && best_attack < kConvergedAttack;
}

}  // namespace

const char* to_string(Placement p) noexcept {
  switch (p) {
    case Placement::TopRight: return "top-right";
    case Placement::TopLeft: return "top-left";
    case Placement::BottomRight: return "bottom-right";
    case Placement::BottomLeft: return "bottom-left";
    case Placement::Offset: return "offset";
  }
  return "?";
}

Placement parse_placement(std::string_view s) {
  for (Placement p : {Placement::TopRight, Placement::TopLeft, Placement::BottomRight,
                      Placement::BottomLeft, Placement::Offset}) {
    if (s == to_string(p)) return p;
  }
  raise(ErrorKind::Config, "unknown patch placement '" + std::string(s) + "'");
}

std::size_t MaskSpec::side() const {
  if (!(patch_ratio > 0.0 && patch_ratio <= 1.0)) {
    raise(ErrorKind::Config, "patch ratio must be in (0, 1]");
  }
  const double s = std::round(std::sqrt(patch_ratio) * static_cast<double>(std::min(image.height, image.width)));
  return static_cast<std::size_t>(s);
}

PixelRect MaskSpec::rect() const {
  validate();
  const std::size_t s = side();
  switch (placement) {
    case Placement::TopRight: return {0, image.width - s, s, s};
    case Placement::TopLeft: return {0, 0, s, s};
    case Placement::BottomRight: return {image.height - s, image.width - s, s, s};
    case Placement::BottomLeft: return {image.height - s, 0, s, s};
    case Placement::Offset: return {offset_y, offset_x, s, s};
  }
  return {};
}

void MaskSpec::validate() const {
  const std::size_t s = side();
  if (s < 4) {
    raise(ErrorKind::Config, "patch ratio " + std::to_string(patch_ratio) + " gives a side below 4 pixels");
  }
  if (placement == Placement::Offset &&
      (offset_y + s > image.height || offset_x + s > image.width)) {
    raise(ErrorKind::Dimension, "patch at offset does not fit the image");
  }
}

Image mask_image(const MaskSpec& mask) {
  const PixelRect r = mask.rect();
  Image m(mask.image);
  for (std::size_t y = r.y; y < r.y + r.height; ++y) {
    for (std::size_t x = r.x; x < r.x + r.width; ++x) {
      for (std::size_t c = 0; c < mask.image.channels; ++c) m.at(y, x, c) = 1.0;
    }
  }
  return m;
}

KeywordContext build_keyword_context(const MatcherModel& model, const Corpus& corpus, TokenId w,
                                     std::size_t m, std::uint64_t seed) {
  if (w >= corpus.vocab().size()) raise(ErrorKind::Vocabulary, "keyword token outside the vocabulary");
  if (m == 0) raise(ErrorKind::Config, "keyword sample size m must be at least 1");
  KeywordContext ctx;
  ctx.keyword = w;
  ctx.word = corpus.vocab().word(w);
  std::vector<const Caption*> pool;
  for (const auto* item : corpus.split(Split::Train)) {
    for (const auto& cap : item->captions) {
      if (cap.contains(w)) pool.push_back(&cap);
    }
  }
  ctx.available = pool.size();
  if (pool.empty()) raise(ErrorKind::Keyword, "keyword '" + ctx.word + "' never occurs in the train captions");
  std::vector<std::size_t> pick(pool.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (pool.size() > m) {
    Rng rng(derive_seed(seed, "keyword/" + ctx.word));
    rng.shuffle(std::span<std::size_t>(pick));
    pick.resize(m);
    std::sort(pick.begin(), pick.end());
  }
  std::vector<Embedding> embs;
  embs.reserve(pick.size());
  std::vector<double> mean(model.d, 0.0);
  for (std::size_t i : pick) {
    ctx.sentences.push_back(*pool[i]);
    embs.push_back(embed_text(model, *pool[i]));
    for (std::size_t j = 0; j < model.d; ++j) mean[j] += embs.back().vec[j];
  }
  for (double& v : mean) v /= static_cast<double>(pick.size());
  ctx.e_w.vec = l2_normalize(mean);
  double total = 0.0;
  for (const auto& e : embs) total += cosine(e.vec, ctx.e_w.vec);
  ctx.mcs = total / static_cast<double>(embs.size());
  return ctx;
}

Image apply_patch(const Image& benign, const Image& delta, const MaskSpec& mask) {
  if (benign.shape() != mask.image) {
    raise(ErrorKind::Dimension, "benign image " + benign.shape().to_string() + " does not match the mask's " + mask.image.to_string());
  }
  check_patch(delta, mask);
  const PixelRect r = mask.rect();
  Image out = benign;
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      for (std::size_t c = 0; c < benign.channels(); ++c) out.at(r.y + y, r.x + x, c) = delta.at(y, x, c);
    }
  }
  return out;
}

double attack_loss(const MatcherModel& model, std::span<const Image> images, const Embedding& e_w) {
  if (images.empty()) raise(ErrorKind::Degenerate, "attack loss needs at least one image");
  double total = 0.0;
  for (const auto& img : images) total += 1.0 - cosine(e_w.vec, embed_image(model, img).vec);
  return total / static_cast<double>(images.size());
}

double usability_term(const Image& delta, const Image& delta_o) {
  if (delta.shape() != delta_o.shape()) raise(ErrorKind::Dimension, "patch and anchor shapes differ");
  double s = 0.0;
  const auto a = delta.pixels();
  const auto b = delta_o.pixels();
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s * usability_scale(delta);
}

PatchObjective::PatchObjective(const MatcherModel& model, std::span<const Image> benign,
                               const MaskSpec& mask, const Embedding& e_w, const Image& delta_o,
                               double lambda)
    : e_w_(e_w), delta_o_(delta_o), lambda_(lambda) {
  if (benign.empty()) raise(ErrorKind::Degenerate, "benign set is empty");
  if (e_w.vec.size() != model.d) raise(ErrorKind::Dimension, "keyword embedding has the wrong length");
  if (!(lambda >= 0.0)) raise(ErrorKind::Config, "lambda must be non-negative");
  check_patch(delta_o, mask);
  const PixelRect r = mask.rect();
  encoders_.reserve(benign.size());
  for (const auto& b : benign) {
    if (b.shape() != mask.image) raise(ErrorKind::Dimension, "benign image does not match the mask");
    encoders_.emplace_back(model, b, r);
  }
}

LossPoint PatchObjective::evaluate(const Image& delta) {
  if (delta.shape() != delta_o_.shape()) raise(ErrorKind::Dimension, "patch and anchor shapes differ");
  LossPoint lp;
  for (auto& enc : encoders_) lp.attack += 1.0 - dot(e_w_.vec, enc.encode(delta).vec);
  lp.attack /= static_cast<double>(encoders_.size());
  lp.usability = usability_term(delta, delta_o_);
  lp.total = lp.attack + lambda_ * lp.usability;
  return lp;
}

LossPoint PatchObjective::evaluate_with_grad(const Image& delta, Image& grad) {
  if (delta.shape() != delta_o_.shape()) raise(ErrorKind::Dimension, "patch and anchor shapes differ");
  grad = Image(delta.shape());
  auto g = grad.pixels();
  std::vector<double> upstream(e_w_.vec.size());
  const double inv_n = 1.0 / static_cast<double>(encoders_.size());
  for (std::size_t j = 0; j < upstream.size(); ++j) upstream[j] = -e_w_.vec[j] * inv_n;
  LossPoint lp;
  for (auto& enc : encoders_) {
    lp.attack += 1.0 - dot(e_w_.vec, enc.encode(delta).vec);
    const Image gi = enc.backward(upstream);
    const auto gp = gi.pixels();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gp[i];
  }
  lp.attack *= inv_n;
  lp.usability = usability_term(delta, delta_o_);
  lp.total = lp.attack + lambda_ * lp.usability;
  const double k = 2.0 * lambda_ * usability_scale(delta);
  const auto d = delta.pixels();
  const auto o = delta_o_.pixels();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (d[i] - o[i]);
  return lp;
}

LossPoint combined_loss(const MatcherModel& model, std::span<const Image> benign,
                        const PatchState& patch, const Embedding& e_w) {
  if (benign.empty()) raise(ErrorKind::Degenerate, "benign set is empty");
  std::vector<Image> patched;
  patched.reserve(benign.size());
  for (const auto& b : benign) patched.push_back(apply_patch(b, patch.delta, patch.mask));
  LossPoint lp;
  lp.attack = attack_loss(model, patched, e_w);
  lp.usability = usability_term(patch.delta, patch.delta_o);
  lp.total = lp.attack + patch.lambda * lp.usability;
  return lp;
}

Image patch_gradient(const MatcherModel& model, std::span<const Image> benign,
                     const PatchState& patch, const Embedding& e_w) {
  PatchObjective obj(model, benign, patch.mask, e_w, patch.delta_o, patch.lambda);
  Image grad;
  obj.evaluate_with_grad(patch.delta, grad);
  return grad;
}

PatchState update_patch(PatchState patch, const Image& grad, const std::optional<LossPoint>& loss) {
  if (grad.shape() != patch.delta.shape()) raise(ErrorKind::Dimension, "gradient shape differs from the patch");
  auto d = patch.delta.pixels();
  const auto g = grad.pixels();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::clamp(d[i] - patch.eta * g[i], 0.0, 255.0);
  ++patch.iter;
  if (loss) patch.trace.push_back(*loss);
  return patch;
}

Image anchor_patch(const AttackConfig& cfg, std::size_t side, BeaconCode* beacon_out) {
  const auto bits = bits_from_hex(cfg.payload_hex);
  if (side >= 2 * cfg.beacon_k) {
    BeaconCode code = make_beacon(bits, cfg.beacon_k, side);
    Image img = code.rendered;
    if (beacon_out) *beacon_out = std::move(code);
    return img;
  }
  const BeaconCode code = make_beacon(bits, cfg.beacon_k, 2 * cfg.beacon_k);
  Image img = render_beacon_grid(code.grid, cfg.beacon_k, side);
  if (beacon_out) {
    *beacon_out = code;
    beacon_out->rendered = img;
  }
  return img;
}

TrojanSet generate_trojan_set(const MatcherModel& model, const Corpus& corpus,
                              const BenignSet& benign, TokenId w, const AttackConfig& cfg) {
  if (cfg.m == 0) raise(ErrorKind::Config, "keyword sample size m must be at least 1");
  return generate_trojan_set(model, build_keyword_context(model, corpus, w, cfg.m, cfg.seed), benign, cfg);
}

TrojanSet generate_trojan_set(const MatcherModel& model, const KeywordContext& context,
                              const BenignSet& benign, const AttackConfig& cfg) {
  if (!(cfg.eta > 0.0)) raise(ErrorKind::Config, "eta must be positive");
  if (!(cfg.lambda >= 0.0)) raise(ErrorKind::Config, "lambda must be non-negative");
  if (benign.images.empty()) raise(ErrorKind::Config, "benign set is empty");
  MaskSpec mask{benign.images.front().shape(), cfg.patch_ratio, cfg.placement, cfg.offset_y, cfg.offset_x};
  mask.validate();
  if (mask.image != model.input) raise(ErrorKind::Dimension, "benign images do not match the model input");

  TrojanSet out;
  out.keyword = context.keyword;
  out.word = context.word;
  out.context = context;
  const Image anchor = anchor_patch(cfg, mask.side(), &out.beacon);

  PatchObjective objective(model, benign.images, mask, context.e_w, anchor, cfg.lambda);
  PatchState state;
  state.delta = anchor;
  state.delta_o = anchor;
  state.mask = mask;
  state.lambda = cfg.lambda;
  state.max_iters = cfg.iters;

  Image best_delta = anchor;
  LossPoint best = objective.evaluate(anchor);
  out.initial = best;

  const auto run = [&](double eta, std::size_t iters) {
    state.delta = anchor;
    state.eta = eta;
    std::vector<double> best_by_iter{best.total};
    Image grad;
    for (std::size_t it = 0; it < iters; ++it) {
      const LossPoint lp = objective.evaluate_with_grad(state.delta, grad);
      if (lp.total < best.total) {
        best = lp;
        best_delta = state.delta;
      }
      best_by_iter.push_back(best.total);
      for (double& g : grad.pixels()) g = g > 0.0 ? 255.0 : (g < 0.0 ? -255.0 : 0.0);
      state = update_patch(std::move(state), grad, lp);
    }
    if (iters > 0) {
      const LossPoint last = objective.evaluate(state.delta);
      if (last.total < best.total) {
        best = last;
        best_delta = state.delta;
      }
      best_by_iter.push_back(best.total);
    }
    return run_converged(best_by_iter, best.attack);
  };

  out.converged = run(cfg.eta, cfg.iters);
  if (!out.converged && cfg.iters > 0) {
    out.restarted = true;
    state.max_iters = 2 * cfg.iters;
    out.converged = run(cfg.eta / 2.0, 2 * cfg.iters);
  }
  state.delta = quantized(best_delta);
  out.best = best;
  out.final = objective.evaluate(state.delta);
  out.patch = std::move(state);
  // A patch with fewer pixels than grid cells cannot carry the code; it stays unscannable.
  if (mask.side() >= cfg.beacon_k) out.usability = decode_beacon(out.patch.delta, cfg.beacon_k, &out.beacon);
  out.images.reserve(benign.images.size());
  for (std::size_t i = 0; i < benign.images.size(); ++i) {
    out.images.push_back(apply_patch(benign.images[i], out.patch.delta, mask));
    out.source_benign_ids.push_back(i);
  }
  return out;
}

}  // namespace tth
