#include <algorithm>
#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "tthlab/gradcheck.hpp"

using namespace tth;
using testutil::random_image;
using testutil::tiny_model;

namespace {

double norm_of(const Embedding& e) { return l2_norm(e.vec); }

// Independent forward pass: pool, project (tanh for B), normalize.
std::vector<double> oracle_image_embedding(const MatcherModel& m, const Image& img) {
  const std::size_t pf = m.pool_factor, ph = img.height() / pf, pw = img.width() / pf;
  std::vector<double> feat;
  for (std::size_t py = 0; py < ph; ++py) {
    for (std::size_t px = 0; px < pw; ++px) {
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < pf; ++dy) {
          for (std::size_t dx = 0; dx < pf; ++dx) s += img.at(py * pf + dy, px * pf + dx, c);
        }
        feat.push_back(s / static_cast<double>(pf * pf) / 255.0);
      }
    }
  }
  auto affine = [](const Tensor& w, const std::vector<double>& in) {
    std::vector<double> out(w.dim(1), 0.0);
    for (std::size_t i = 0; i < in.size(); ++i) {
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += in[i] * w(i, j);
    }
    return out;
  };
  std::vector<double> z;
  if (m.arch == Arch::B) {
    auto h = affine(m.img_hidden, feat);
    for (double& v : h) v = std::tanh(v);
    z = affine(m.img_proj, h);
  } else {
    z = affine(m.img_proj, feat);
  }
  const double n = l2_norm(z);
  for (double& v : z) v /= n;
  return z;
}

}  // namespace

TEST_CASE("text embedding") {
  const MatcherModel m = tiny_model(Arch::A, 8, 3);
  const Vocabulary v = Vocabulary::standard();
  const TokenId red = v.id("red"), square = v.id("square"), a = v.id("a");

  // One token: normalize(token_row . text_proj).
  std::vector<double> z(m.d, 0.0);
  for (std::size_t i = 0; i < m.d_e; ++i) {
    for (std::size_t j = 0; j < m.d; ++j) z[j] += m.token_table(red, i) * m.text_proj(i, j);
  }
  const auto want = l2_normalize(z);
  const std::vector<TokenId> one{red};
  const Embedding e = embed_text(m, one);
  for (std::size_t j = 0; j < m.d; ++j) CHECK(e.vec[j] == doctest::Approx(want[j]).epsilon(1e-12));

  const std::vector<TokenId> fwd{a, red, square}, rev{square, red, a};
  const Embedding ef = embed_text(m, fwd), er = embed_text(m, rev);
  for (std::size_t j = 0; j < m.d; ++j) CHECK(ef.vec[j] == doctest::Approx(er.vec[j]).epsilon(1e-14));
  CHECK(std::abs(norm_of(ef) - 1.0) <= 1e-9);

  CHECK_ERROR_KIND(embed_text(m, std::vector<TokenId>{}), ErrorKind::Degenerate);
  CHECK_ERROR_KIND(embed_text(m, std::vector<TokenId>{999}), ErrorKind::Vocabulary);
}

TEST_CASE("image embedding") {
  Rng rng(5);
  for (Arch arch : {Arch::A, Arch::B}) {
    const MatcherModel m = tiny_model(arch, 8, 4);
    for (int trial = 0; trial < 5; ++trial) {
      const Image img = random_image(m.input, rng);
      const Embedding e = embed_image(m, img);
      CHECK(std::abs(norm_of(e) - 1.0) <= 1e-9);
      const auto oracle = oracle_image_embedding(m, img);
      for (std::size_t j = 0; j < m.d; ++j) CHECK(e.vec[j] == doctest::Approx(oracle[j]).epsilon(1e-10));
    }
    CHECK_ERROR_KIND(embed_image(m, Image({4, 4, 3}, 1.0)), ErrorKind::Dimension);
  }
  const MatcherModel a = tiny_model(Arch::A, 8, 4);
  CHECK_ERROR_KIND(embed_image(a, Image(a.input, 0.0)), ErrorKind::Degenerate);
  // Linear encoder: uniform 128 and 255 images share a direction.
  const Embedding e128 = embed_image(a, Image(a.input, 128.0));
  const Embedding e255 = embed_image(a, Image(a.input, 255.0));
  for (std::size_t j = 0; j < a.d; ++j) CHECK(e128.vec[j] == doctest::Approx(e255.vec[j]).epsilon(1e-12));
}

TEST_CASE("similarity") {
  Rng rng(6);
  const MatcherModel m = tiny_model(Arch::B, 8, 7);
  const Vocabulary v = Vocabulary::standard();
  const Caption cap = make_caption(v, {v.id("a"), v.id("blue"), v.id("ring"), v.id("falling")});
  const Image img = random_image(m.input, rng);
  const double s = similarity(m, cap, img);
  CHECK(s == cosine(embed_text(m, cap).vec, embed_image(m, img).vec));
  CHECK(std::abs(cosine(embed_image(m, img).vec, embed_text(m, cap).vec) - s) <= 1e-12);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);
}

TEST_CASE("scaling img_proj leaves embeddings unchanged") {
  Rng rng(8);
  for (Arch arch : {Arch::A, Arch::B}) {
    const MatcherModel m = tiny_model(arch, 8, 9);
    MatcherModel scaled = m;
    for (double& w : scaled.img_proj.values()) w *= 3.7;
    const Image img = random_image(m.input, rng);
    const auto e1 = embed_image(m, img), e2 = embed_image(scaled, img);
    for (std::size_t j = 0; j < m.d; ++j) CHECK(std::abs(e1.vec[j] - e2.vec[j]) <= 1e-9);
  }
}

TEST_CASE("image input gradient matches finite differences") {
  Rng rng(10);
  for (Arch arch : {Arch::A, Arch::B}) {
    for (int probe = 0; probe < 10; ++probe) {
      const MatcherModel m = tiny_model(arch, 8, 100 + probe);
      const Image img = random_image(m.input, rng, 20.0, 235.0);
      std::vector<double> up(m.d);
      for (double& u : up) u = rng.uniform(-1.0, 1.0);
      const Image analytic = image_embedding_input_grad(m, img, up);
      const ScalarFunction f = [&](const Tensor& t) { return dot(up, embed_image(m, Image::from_tensor(t)).vec); };
      const Tensor numeric = finite_diff_grad(f, img.to_tensor());
      const auto report = grad_check(analytic.to_tensor(), numeric);
      CHECK_MESSAGE(report.passed, "arch " << to_string(arch) << " probe " << probe << " err " << report.max_rel_error);
    }
  }
  const MatcherModel m = tiny_model(Arch::A, 8, 1);
  const Image zero_up = image_embedding_input_grad(m, random_image(m.input, rng), std::vector<double>(m.d, 0.0));
  for (double g : zero_up.pixels()) CHECK(g == 0.0);
}

TEST_CASE("region encoder agrees with full encoding") {
  Rng rng(11);
  for (Arch arch : {Arch::A, Arch::B}) {
    const MatcherModel m = tiny_model(arch, 16, 12);
    const Image base = random_image(m.input, rng);
    const PixelRect rect{0, 11, 5, 5};  // straddles pooling cells
    RegionEncoder enc(m, base, rect);
    for (int trial = 0; trial < 3; ++trial) {
      const Image patch = random_image({5, 5, 3}, rng);
      Image full = base;
      for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
          for (std::size_t c = 0; c < 3; ++c) full.at(y, 11 + x, c) = patch.at(y, x, c);
        }
      }
      const Embedding got = enc.encode(patch);
      const Embedding want = embed_image(m, full);
      for (std::size_t j = 0; j < m.d; ++j) CHECK(got.vec[j] == doctest::Approx(want.vec[j]).epsilon(1e-10));
      std::vector<double> up(m.d);
      for (double& u : up) u = rng.uniform(-1.0, 1.0);
      const Image g = enc.backward(up);
      const Image gfull = image_embedding_input_grad(m, full, up);
      for (std::size_t y = 0; y < 5; ++y) {
        for (std::size_t x = 0; x < 5; ++x) {
          for (std::size_t c = 0; c < 3; ++c) CHECK(g.at(y, x, c) == doctest::Approx(gfull.at(y, 11 + x, c)).epsilon(1e-10));
        }
      }
    }
  }
}

TEST_CASE("training") {
  const Corpus corpus = testutil::small_corpus(2, Flavor::Blobs, 60, 10, 20);
  MatcherHyper h;
  h.d = 16;
  h.d_e = 16;
  h.epochs = 0;
  h.pool_factor = 4;
  auto [init, log0] = train_matcher(corpus, h);
  CHECK(log0.losses.empty());
  CHECK(init == init_matcher(h, corpus.vocab().size(), corpus.image_shape()));

  h.epochs = 8;
  h.batch = 20;
  for (Arch arch : {Arch::A, Arch::B}) {
    h.arch = arch;
    h.lr = arch == Arch::A ? 0.3 : 0.1;
    const auto [m1, log1] = train_matcher(corpus, h);
    const auto [m2, log2] = train_matcher(corpus, h);
    CHECK(m1 == m2);
    CHECK(log1.losses == log2.losses);
    REQUIRE(log1.losses.size() == 8);
    for (double l : log1.losses) CHECK(std::isfinite(l));
    CHECK(log1.losses.back() < log1.losses.front());
    CHECK(log1.val_r10 >= 0.0);
    CHECK(log1.val_r10 <= 100.0);
  }
  h.lr = 1e300;
  h.arch = Arch::A;
  CHECK_ERROR_KIND(train_matcher(corpus, h), ErrorKind::Training);
}

TEST_CASE("model file round trip") {
  const auto dir = testutil::scratch_dir("model_rt");
  for (Arch arch : {Arch::A, Arch::B}) {
    const MatcherModel m = tiny_model(arch, 8, 21);
    const auto path = dir / (std::string(to_string(arch)) + ".model");
    save_model(m, path);
    CHECK(load_model(path) == m);
    CHECK(load_model(path, m.arch_tag()) == m);
    CHECK_ERROR_KIND(load_model(path, std::string("A/64x64x3/pool4/vocab33/de64/d64")), ErrorKind::Config);

    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto cut = dir / "cut.model";
    std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
    CHECK_ERROR_KIND(load_model(cut), ErrorKind::Format);
    std::ofstream(cut, std::ios::binary) << "not a model";
    CHECK_ERROR_KIND(load_model(cut), ErrorKind::Format);
  }
  CHECK_ERROR_KIND(load_model(dir / "absent.model"), ErrorKind::Io);
  std::filesystem::remove_all(dir);
}
