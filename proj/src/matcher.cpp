#include "tthlab/matcher.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tthlab/error.hpp"
#include "tthlab/rng.hpp"

namespace tth {

using nlohmann::json;

namespace {

constexpr double kPixelScale = 1.0 / 255.0;

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = stddev * rng.normal();
  return Tensor({rows, cols}, std::move(v));
}

const Tensor& first_image_layer(const MatcherModel& m) {
  return m.arch == Arch::A ? m.img_proj : m.img_hidden;
}

// out[j] += sum_i in[i] * W[i, j]
void accumulate_rows(const Tensor& w, std::span<const double> in, std::span<double> out) {
  const std::size_t cols = w.dim(1);
  const double* data = w.values().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double a = in[i];
    if (a == 0.0) continue;
    const double* row = data + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += a * row[j];
  }
}

// out[i] = sum_j W[i, j] * g[j]
void row_dots(const Tensor& w, std::span<const double> g, std::span<double> out) {
  const std::size_t cols = w.dim(1);
  const double* data = w.values().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = data + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * g[j];
    out[i] = s;
  }
}

// G[i, :] += a[i] * b for all i
void add_outer(Tensor& grad, std::span<const double> a, std::span<const double> b) {
  const std::size_t cols = grad.dim(1);
  double* data = grad.values().data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    if (ai == 0.0) continue;
    double* row = data + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += ai * b[j];
  }
}

// d(upstream . z/|z|)/dz
std::vector<double> normalize_backward(std::span<const double> e, double norm,
                                       std::span<const double> upstream) {
  const double proj = dot(upstream, e);
  std::vector<double> dz(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) dz[i] = (upstream[i] - proj * e[i]) / norm;
  return dz;
}

struct TextForward {
  std::vector<double> mean;  // d_e
  std::vector<double> z;     // d
  double norm = 0.0;
  std::vector<double> e;
};

TextForward text_forward(const MatcherModel& m, std::span<const TokenId> tokens) {
  if (tokens.empty()) raise(ErrorKind::Degenerate, "empty caption");
  TextForward f;
  f.mean.assign(m.d_e, 0.0);
  for (TokenId t : tokens) {
    if (t >= m.vocab_size) raise(ErrorKind::Vocabulary, "token id " + std::to_string(t) + " outside the model vocabulary");
    const double* row = m.token_table.values().data() + static_cast<std::size_t>(t) * m.d_e;
    for (std::size_t j = 0; j < m.d_e; ++j) f.mean[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(tokens.size());
  for (double& x : f.mean) x *= inv;
  f.z.assign(m.d, 0.0);
  accumulate_rows(m.text_proj, f.mean, f.z);
  f.norm = l2_norm(f.z);
  if (!(f.norm > 0.0)) raise(ErrorKind::Degenerate, "text embedding has zero norm");
  require_finite(f.z, "text embedding");
  f.e = f.z;
  for (double& x : f.e) x /= f.norm;
  return f;
}

struct ImageForward {
  std::vector<double> act;  // hidden activation (B)
  std::vector<double> z;
  double norm = 0.0;
  std::vector<double> e;
};

void finish_image_forward(const MatcherModel& m, std::span<const double> pre, ImageForward& f) {
  if (m.arch == Arch::B) {
    f.act.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) f.act[i] = std::tanh(pre[i]);
    f.z.assign(m.d, 0.0);
    accumulate_rows(m.img_proj, f.act, f.z);
  } else {
    f.z.assign(pre.begin(), pre.end());
  }
  f.norm = l2_norm(f.z);
  if (!(f.norm > 0.0)) raise(ErrorKind::Degenerate, "image embedding has zero norm");
  require_finite(f.z, "image embedding");
  f.e = f.z;
  for (double& x : f.e) x /= f.norm;
}

ImageForward image_forward(const MatcherModel& m, std::span<const double> features) {
  const Tensor& first = first_image_layer(m);
  std::vector<double> pre(first.dim(1), 0.0);
  accumulate_rows(first, features, pre);
  ImageForward f;
  finish_image_forward(m, pre, f);
  return f;
}

// Gradient of (upstream . e) with respect to the first-layer pre-activation.
std::vector<double> image_pre_grad(const MatcherModel& m, const ImageForward& f,
                                   std::span<const double> upstream) {
  auto dz = normalize_backward(f.e, f.norm, upstream);
  if (m.arch == Arch::A) return dz;
  std::vector<double> dact(m.hidden);
  row_dots(m.img_proj, dz, dact);
  for (std::size_t i = 0; i < dact.size(); ++i) dact[i] *= 1.0 - f.act[i] * f.act[i];
  return dact;
}

void check_image(const MatcherModel& m, const Image& image) {
  if (image.shape() != m.input) {
    raise(ErrorKind::Dimension, "image " + image.shape().to_string() + " but model expects " + m.input.to_string());
  }
}

void write_text(std::ostream& out, const std::string& s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

void write_le_doubles(std::ostream& out, std::span<const double> values) {
  std::string buf(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (std::size_t b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  write_text(out, buf);
}

std::vector<double> read_le_doubles(std::string_view bytes) {
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i * 8 + b])) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace

const char* to_string(Arch arch) noexcept { return arch == Arch::A ? "A" : "B"; }

Arch parse_arch(std::string_view s) {
  if (s == "A") return Arch::A;
  if (s == "B") return Arch::B;
  raise(ErrorKind::Config, "unknown model arch '" + std::string(s) + "' (expected A or B)");
}

std::size_t MatcherModel::feature_len() const noexcept {
  if (pool_factor == 0) return 0;
  return (input.height / pool_factor) * (input.width / pool_factor) * input.channels;
}

std::string MatcherModel::arch_tag() const {
  std::string tag = std::string(to_string(arch)) + "/" + input.to_string() + "/pool" +
                    std::to_string(pool_factor) + "/vocab" + std::to_string(vocab_size) + "/de" +
                    std::to_string(d_e) + "/d" + std::to_string(d);
  if (arch == Arch::B) tag += "/h" + std::to_string(hidden);
  return tag;
}

MatcherModel init_matcher(const MatcherHyper& hyper, std::size_t vocab_size, ImageShape input) {
  if (hyper.pool_factor == 0 || input.height % hyper.pool_factor || input.width % hyper.pool_factor) {
    raise(ErrorKind::Config, "pool factor must divide the image size");
  }
  if (hyper.d == 0 || hyper.d_e == 0 || vocab_size == 0) raise(ErrorKind::Config, "model dims must be positive");
  if (hyper.arch == Arch::B && hyper.hidden == 0) raise(ErrorKind::Config, "arch B needs a hidden width");
  if (!(hyper.temperature > 0.0)) raise(ErrorKind::Config, "temperature must be positive");
  if (!std::isfinite(hyper.token_offset)) raise(ErrorKind::Config, "token offset must be finite");
  MatcherModel m;
  m.arch = hyper.arch;
  m.input = input;
  m.pool_factor = hyper.pool_factor;
  m.vocab_size = vocab_size;
  m.d_e = hyper.d_e;
  m.d = hyper.d;
  m.hidden = hyper.arch == Arch::B ? hyper.hidden : 0;
  m.temperature = hyper.temperature;
  m.seed = hyper.seed;
  Rng rng(derive_seed(hyper.seed, "init"));
  const std::size_t p = m.feature_len();
  m.token_table = random_matrix(vocab_size, m.d_e, 1.0, rng);
  const Tensor mu = random_matrix(1, m.d_e, 1.0, rng);
  for (std::size_t i = 0; i < vocab_size; ++i) {
    for (std::size_t j = 0; j < m.d_e; ++j) m.token_table(i, j) += hyper.token_offset * mu(0, j);
  }
  m.text_proj = random_matrix(m.d_e, m.d, 1.0 / std::sqrt(static_cast<double>(m.d_e)), rng);
  if (m.arch == Arch::B) {
    m.img_hidden = random_matrix(p, m.hidden, 1.0 / std::sqrt(static_cast<double>(p)), rng);
    m.img_proj = random_matrix(m.hidden, m.d, 1.0 / std::sqrt(static_cast<double>(m.hidden)), rng);
  } else {
    m.img_proj = random_matrix(p, m.d, 1.0 / std::sqrt(static_cast<double>(p)), rng);
  }
  return m;
}

std::vector<double> pooled_features(const MatcherModel& m, const Image& image) {
  check_image(m, image);
  const std::size_t pf = m.pool_factor;
  const std::size_t ph = m.input.height / pf, pw = m.input.width / pf, ch = m.input.channels;
  std::vector<double> f(ph * pw * ch, 0.0);
  for (std::size_t y = 0; y < m.input.height; ++y) {
    for (std::size_t x = 0; x < m.input.width; ++x) {
      double* cell = f.data() + ((y / pf) * pw + x / pf) * ch;
      for (std::size_t c = 0; c < ch; ++c) cell[c] += image.at(y, x, c);
    }
  }
  const double scale = kPixelScale / static_cast<double>(pf * pf);
  for (double& v : f) v *= scale;
  return f;
}

Embedding embed_text(const MatcherModel& model, std::span<const TokenId> tokens) {
  return {text_forward(model, tokens).e};
}

Embedding embed_text(const MatcherModel& model, const Caption& caption) {
  return embed_text(model, std::span<const TokenId>(caption.tokens));
}

Embedding embed_image(const MatcherModel& model, const Image& image) {
  return {image_forward(model, pooled_features(model, image)).e};
}

double similarity(const MatcherModel& model, const Caption& caption, const Image& image) {
  return cosine(embed_text(model, caption).vec, embed_image(model, image).vec);
}

Image image_embedding_input_grad(const MatcherModel& m, const Image& image,
                                 std::span<const double> upstream) {
  if (upstream.size() != m.d) raise(ErrorKind::Dimension, "upstream gradient must have length d");
  const auto features = pooled_features(m, image);
  const ImageForward f = image_forward(m, features);
  const auto dpre = image_pre_grad(m, f, upstream);
  std::vector<double> dfeat(features.size());
  row_dots(first_image_layer(m), dpre, dfeat);
  const std::size_t pf = m.pool_factor;
  const std::size_t pw = m.input.width / pf, ch = m.input.channels;
  const double scale = kPixelScale / static_cast<double>(pf * pf);
  Image grad(m.input);
  for (std::size_t y = 0; y < m.input.height; ++y) {
    for (std::size_t x = 0; x < m.input.width; ++x) {
      const double* cell = dfeat.data() + ((y / pf) * pw + x / pf) * ch;
      for (std::size_t c = 0; c < ch; ++c) grad.at(y, x, c) = cell[c] * scale;
    }
  }
  return grad;
}

RegionEncoder::RegionEncoder(const MatcherModel& model, const Image& base, const PixelRect& region)
    : model_(&model), region_(region) {
  check_image(model, base);
  if (region.height == 0 || region.width == 0 || region.y + region.height > base.height() ||
      region.x + region.width > base.width()) {
    raise(ErrorKind::Dimension, "region does not fit the image");
  }
  const std::size_t pf = model.pool_factor;
  const std::size_t pw = model.input.width / pf, ch = model.input.channels;
  Image outside = base;
  for (std::size_t y = region.y; y < region.y + region.height; ++y) {
    for (std::size_t x = region.x; x < region.x + region.width; ++x) {
      for (std::size_t c = 0; c < ch; ++c) outside.at(y, x, c) = 0.0;
    }
  }
  const Tensor& first = first_image_layer(model);
  first_width_ = first.dim(1);
  base_pre_.assign(first_width_, 0.0);
  accumulate_rows(first, pooled_features(model, outside), base_pre_);
  for (std::size_t py = region.y / pf; py <= (region.y + region.height - 1) / pf; ++py) {
    for (std::size_t px = region.x / pf; px <= (region.x + region.width - 1) / pf; ++px) {
      for (std::size_t c = 0; c < ch; ++c) touched_.push_back((py * pw + px) * ch + c);
    }
  }
  sums_.assign(touched_.size(), 0.0);
}

const Embedding& RegionEncoder::encode(const Image& region_pixels) {
  const MatcherModel& m = *model_;
  if (region_pixels.height() != region_.height || region_pixels.width() != region_.width ||
      region_pixels.channels() != m.input.channels) {
    raise(ErrorKind::Dimension, "region pixels do not match the region");
  }
  const std::size_t pf = m.pool_factor;
  const std::size_t pw = m.input.width / pf, ch = m.input.channels;
  const std::size_t py0 = region_.y / pf, px0 = region_.x / pf;
  const std::size_t tw = (region_.x + region_.width - 1) / pf - px0 + 1;
  std::fill(sums_.begin(), sums_.end(), 0.0);
  for (std::size_t y = 0; y < region_.height; ++y) {
    const std::size_t ty = (region_.y + y) / pf - py0;
    for (std::size_t x = 0; x < region_.width; ++x) {
      const std::size_t tx = (region_.x + x) / pf - px0;
      double* cell = sums_.data() + (ty * tw + tx) * ch;
      for (std::size_t c = 0; c < ch; ++c) cell[c] += region_pixels.at(y, x, c);
    }
  }
  (void)pw;
  const double scale = kPixelScale / static_cast<double>(pf * pf);
  std::vector<double> pre = base_pre_;
  const Tensor& first = first_image_layer(m);
  const double* data = first.values().data();
  for (std::size_t i = 0; i < touched_.size(); ++i) {
    const double a = sums_[i] * scale;
    if (a == 0.0) continue;
    const double* row = data + touched_[i] * first_width_;
    for (std::size_t j = 0; j < first_width_; ++j) pre[j] += a * row[j];
  }
  ImageForward f;
  finish_image_forward(m, pre, f);
  act_ = std::move(f.act);
  z_ = std::move(f.z);
  norm_ = f.norm;
  e_.vec = std::move(f.e);
  encoded_ = true;
  return e_;
}

Image RegionEncoder::backward(std::span<const double> upstream) const {
  if (!encoded_) raise(ErrorKind::Numeric, "backward before encode");
  const MatcherModel& m = *model_;
  if (upstream.size() != m.d) raise(ErrorKind::Dimension, "upstream gradient must have length d");
  ImageForward f;
  f.act = act_;
  f.e = e_.vec;
  f.norm = norm_;
  const auto dpre = image_pre_grad(m, f, upstream);
  const Tensor& first = first_image_layer(m);
  const double* data = first.values().data();
  std::vector<double> dsum(touched_.size());
  for (std::size_t i = 0; i < touched_.size(); ++i) {
    const double* row = data + touched_[i] * first_width_;
    double s = 0.0;
    for (std::size_t j = 0; j < first_width_; ++j) s += row[j] * dpre[j];
    dsum[i] = s;
  }
  const std::size_t pf = m.pool_factor, ch = m.input.channels;
  const std::size_t py0 = region_.y / pf, px0 = region_.x / pf;
  const std::size_t tw = (region_.x + region_.width - 1) / pf - px0 + 1;
  const double scale = kPixelScale / static_cast<double>(pf * pf);
  Image grad({region_.height, region_.width, ch});
  for (std::size_t y = 0; y < region_.height; ++y) {
    const std::size_t ty = (region_.y + y) / pf - py0;
    for (std::size_t x = 0; x < region_.width; ++x) {
      const std::size_t tx = (region_.x + x) / pf - px0;
      const double* cell = dsum.data() + (ty * tw + tx) * ch;
      for (std::size_t c = 0; c < ch; ++c) grad.at(y, x, c) = cell[c] * scale;
    }
  }
  return grad;
}

double split_recall(const MatcherModel& model, const Corpus& corpus, Split split, std::size_t k) {
  const auto items = corpus.split(split);
  if (items.empty()) raise(ErrorKind::Degenerate, "empty split");
  std::vector<Embedding> images;
  images.reserve(items.size());
  for (const auto* item : items) images.push_back(embed_image(model, item->image));
  std::size_t hits = 0, total = 0;
  for (std::size_t src = 0; src < items.size(); ++src) {
    for (const auto& cap : items[src]->captions) {
      const auto q = embed_text(model, cap);
      const double own = dot(q.vec, images[src].vec);
      // Rank of the source image under descending score, ties by ascending id.
      std::size_t better = 0;
      for (std::size_t j = 0; j < items.size(); ++j) {
        if (j == src) continue;
        const double s = dot(q.vec, images[j].vec);
        if (s > own || (s == own && items[j]->id < items[src]->id)) ++better;
      }
      if (better < k) ++hits;
      ++total;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

std::pair<MatcherModel, TrainLog> fit(const Corpus& corpus, const MatcherHyper& hyper) {
  const auto train = corpus.split(Split::Train);
  if (train.empty()) raise(ErrorKind::Training, "train split is empty");
  if (hyper.batch < 2) raise(ErrorKind::Config, "contrastive batches need at least 2 pairs");
  if (!(hyper.lr > 0.0)) raise(ErrorKind::Config, "learning rate must be positive");
  MatcherModel m = init_matcher(hyper, corpus.vocab().size(), corpus.image_shape());
  TrainLog log;
  log.epochs = hyper.epochs;

  std::vector<std::vector<double>> features;
  features.reserve(train.size());
  for (const auto* item : train) features.push_back(pooled_features(m, item->image));

  Rng rng(derive_seed(hyper.seed, "train"));
  std::vector<std::size_t> order(train.size());
  const double inv_t = 1.0 / m.temperature;
  const std::size_t p = m.feature_len();

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::size_t> caption_pick(order.size());
    for (auto& c : caption_pick) c = rng.below(corpus.params.captions_per_image);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += hyper.batch) {
      const std::size_t b = std::min(hyper.batch, order.size() - start);
      if (b < 2) break;
      std::vector<TextForward> tf(b);
      std::vector<ImageForward> imf(b);
      std::vector<const Caption*> caps(b);
      std::vector<std::vector<double>> pre(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        const auto& captions = train[idx]->captions;
        caps[i] = &captions[caption_pick[start + i] % captions.size()];
        tf[i] = text_forward(m, caps[i]->tokens);
        imf[i] = image_forward(m, features[idx]);
      }
      // Similarity logits and the symmetric cross-entropy gradient.
      std::vector<double> logits(b * b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) logits[i * b + j] = dot(tf[i].e, imf[j].e) * inv_t;
      }
      std::vector<double> g(b * b, 0.0);
      double loss = 0.0;
      const double half_inv_b = 0.5 / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, logits[i * b + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < b; ++j) z += std::exp(logits[i * b + j] - mx);
        for (std::size_t j = 0; j < b; ++j) {
          const double pr = std::exp(logits[i * b + j] - mx) / z;
          g[i * b + j] += half_inv_b * (pr - (i == j ? 1.0 : 0.0));
        }
        loss += half_inv_b * (mx + std::log(z) - logits[i * b + i]);
      }
      for (std::size_t j = 0; j < b; ++j) {
        double mx = -1e300;
        for (std::size_t i = 0; i < b; ++i) mx = std::max(mx, logits[i * b + j]);
        double z = 0.0;
        for (std::size_t i = 0; i < b; ++i) z += std::exp(logits[i * b + j] - mx);
        for (std::size_t i = 0; i < b; ++i) {
          const double pr = std::exp(logits[i * b + j] - mx) / z;
          g[i * b + j] += half_inv_b * (pr - (i == j ? 1.0 : 0.0));
        }
        loss += half_inv_b * (mx + std::log(z) - logits[j * b + j]);
      }
      if (!std::isfinite(loss)) raise(ErrorKind::Training, "contrastive loss diverged at epoch " + std::to_string(epoch));

      Tensor g_tokens({m.vocab_size, m.d_e});
      Tensor g_text_proj({m.d_e, m.d});
      Tensor g_img_proj(m.img_proj.shape());
      Tensor g_img_hidden(m.img_hidden.shape());
      for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> du(m.d, 0.0), dv(m.d, 0.0);
        for (std::size_t j = 0; j < b; ++j) {
          const double gij = g[i * b + j] * inv_t;
          const double gji = g[j * b + i] * inv_t;
          for (std::size_t k = 0; k < m.d; ++k) {
            du[k] += gij * imf[j].e[k];
            dv[k] += gji * tf[j].e[k];
          }
        }
        // Text path.
        const auto dza = normalize_backward(tf[i].e, tf[i].norm, du);
        add_outer(g_text_proj, tf[i].mean, dza);
        std::vector<double> dmean(m.d_e);
        row_dots(m.text_proj, dza, dmean);
        const double inv_len = 1.0 / static_cast<double>(caps[i]->tokens.size());
        for (TokenId t : caps[i]->tokens) {
          double* row = g_tokens.values().data() + static_cast<std::size_t>(t) * m.d_e;
          for (std::size_t k = 0; k < m.d_e; ++k) row[k] += dmean[k] * inv_len;
        }
        // Image path.
        const auto dzb = normalize_backward(imf[i].e, imf[i].norm, dv);
        const auto& feat = features[order[start + i]];
        if (m.arch == Arch::A) {
          add_outer(g_img_proj, feat, dzb);
        } else {
          add_outer(g_img_proj, imf[i].act, dzb);
          std::vector<double> dact(m.hidden);
          row_dots(m.img_proj, dzb, dact);
          for (std::size_t k = 0; k < m.hidden; ++k) dact[k] *= 1.0 - imf[i].act[k] * imf[i].act[k];
          add_outer(g_img_hidden, feat, dact);
        }
      }
      const auto step = [&](Tensor& param, const Tensor& grad) {
        auto pv = param.values();
        auto gv = grad.values();
        for (std::size_t k = 0; k < pv.size(); ++k) pv[k] -= hyper.lr * gv[k];
      };
      step(m.token_table, g_tokens);
      step(m.text_proj, g_text_proj);
      step(m.img_proj, g_img_proj);
      if (m.arch == Arch::B) step(m.img_hidden, g_img_hidden);
      epoch_loss += loss;
      ++batches;
    }
    const double mean_loss = batches ? epoch_loss / static_cast<double>(batches) : 0.0;
    if (!std::isfinite(mean_loss)) raise(ErrorKind::Training, "contrastive loss diverged");
    log.losses.push_back(mean_loss);
  }
  (void)p;
  for (const Tensor* t : {&m.token_table, &m.text_proj, &m.img_proj, &m.img_hidden}) {
    for (double v : t->values()) {
      if (!std::isfinite(v)) raise(ErrorKind::Training, "parameters diverged");
    }
  }
  log.val_r10 = corpus.split(Split::Val).empty() ? 0.0 : split_recall(m, corpus, Split::Val, 10);
  return {std::move(m), std::move(log)};
}

}  // namespace

std::pair<MatcherModel, TrainLog> train_matcher(const Corpus& corpus, const MatcherHyper& hyper) {
  try {
    return fit(corpus, hyper);
  } catch (const Error& e) {
    // A blown-up step surfaces as a zero or non-finite embedding on the next batch.
    if (e.kind() == ErrorKind::Degenerate || e.kind() == ErrorKind::Numeric) {
      raise(ErrorKind::Training, std::string("training diverged: ") + e.what());
    }
    throw;
  }
}

void save_model(const MatcherModel& m, const std::filesystem::path& path) {
  json params = json::array();
  const auto add = [&](const char* name, const Tensor& t) {
    if (t.size()) params.push_back({{"name", name}, {"shape", t.shape()}});
  };
  add("token_table", m.token_table);
  add("text_proj", m.text_proj);
  add("img_hidden", m.img_hidden);
  add("img_proj", m.img_proj);
  json header = {{"format", "tthlab-model/1"},
                 {"arch", to_string(m.arch)},
                 {"arch_tag", m.arch_tag()},
                 {"input", {m.input.height, m.input.width, m.input.channels}},
                 {"pool_factor", m.pool_factor},
                 {"vocab_size", m.vocab_size},
                 {"d_e", m.d_e},
                 {"d", m.d},
                 {"hidden", m.hidden},
                 {"temperature", m.temperature},
                 {"seed", m.seed},
                 {"byte_order", "little"},
                 {"params", params}};
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorKind::Io, "cannot write " + path.string());
  write_text(out, header.dump() + "\n");
  for (const Tensor* t : {&m.token_table, &m.text_proj, &m.img_hidden, &m.img_proj}) write_le_doubles(out, t->values());
  if (!out) raise(ErrorKind::Io, "write failed for " + path.string());
}

MatcherModel load_model(const std::filesystem::path& path, const std::optional<std::string>& expected_arch_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) raise(ErrorKind::Format, path.string() + ": missing model header");
  MatcherModel m;
  std::size_t offset = nl + 1;
  try {
    const json h = json::parse(bytes.substr(0, nl));
    if (h.at("format") != "tthlab-model/1") raise(ErrorKind::Format, path.string() + ": unsupported model format");
    m.arch = parse_arch(h.at("arch").get<std::string>());
    const auto in_shape = h.at("input").get<std::vector<std::size_t>>();
    if (in_shape.size() != 3) raise(ErrorKind::Format, path.string() + ": bad input shape");
    m.input = {in_shape[0], in_shape[1], in_shape[2]};
    m.pool_factor = h.at("pool_factor").get<std::size_t>();
    m.vocab_size = h.at("vocab_size").get<std::size_t>();
    m.d_e = h.at("d_e").get<std::size_t>();
    m.d = h.at("d").get<std::size_t>();
    m.hidden = h.at("hidden").get<std::size_t>();
    m.temperature = h.at("temperature").get<double>();
    m.seed = h.at("seed").get<std::uint64_t>();
    if (h.at("arch_tag").get<std::string>() != m.arch_tag()) {
      raise(ErrorKind::Format, path.string() + ": header arch_tag disagrees with its dims");
    }
    if (expected_arch_tag && *expected_arch_tag != m.arch_tag()) {
      raise(ErrorKind::Config, path.string() + ": model is " + m.arch_tag() + ", expected " + *expected_arch_tag);
    }
    for (const auto& p : h.at("params")) {
      const auto name = p.at("name").get<std::string>();
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      if (bytes.size() - offset < n * 8) raise(ErrorKind::Format, path.string() + ": truncated parameter block");
      Tensor t(shape, read_le_doubles(std::string_view(bytes).substr(offset, n * 8)));
      offset += n * 8;
      if (name == "token_table") m.token_table = std::move(t);
      else if (name == "text_proj") m.text_proj = std::move(t);
      else if (name == "img_hidden") m.img_hidden = std::move(t);
      else if (name == "img_proj") m.img_proj = std::move(t);
      else raise(ErrorKind::Format, path.string() + ": unknown parameter " + name);
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::Format, path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Dimension || e.kind() == ErrorKind::Numeric) {
      raise(ErrorKind::Format, path.string() + ": " + e.what());
    }
    throw;
  }
  if (offset != bytes.size()) raise(ErrorKind::Format, path.string() + ": trailing bytes after parameters");
  const std::size_t p = m.feature_len();
  const std::size_t first_out = m.arch == Arch::A ? m.d : m.hidden;
  const bool shapes_ok =
      m.token_table.shape() == std::vector<std::size_t>{m.vocab_size, m.d_e} &&
      m.text_proj.shape() == std::vector<std::size_t>{m.d_e, m.d} &&
      (m.arch == Arch::A ? m.img_proj.shape() == std::vector<std::size_t>{p, first_out}
                         : m.img_hidden.shape() == std::vector<std::size_t>{p, m.hidden} &&
                               m.img_proj.shape() == std::vector<std::size_t>{m.hidden, m.d});
  if (!shapes_ok) raise(ErrorKind::Format, path.string() + ": parameter shapes disagree with header");
  if (!(m.temperature > 0.0)) raise(ErrorKind::Format, path.string() + ": temperature must be positive");
  return m;
}

}  // namespace tth
