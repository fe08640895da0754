#pragma once

#include <filesystem>
#include <string>

#include <doctest.h>

#include "tthlab/error.hpp"
#include "tthlab/image.hpp"
#include "tthlab/matcher.hpp"
#include "tthlab/rng.hpp"
#include "tthlab/synthworld.hpp"
#include "tthlab/tensor.hpp"

#define CHECK_ERROR_KIND(expr, expected_kind)                 \
  do {                                                        \
    bool caught_ = false;                                     \
    try {                                                     \
      (void)(expr);                                           \
    } catch (const tth::Error& e) {                           \
      caught_ = true;                                         \
      CHECK_MESSAGE(e.kind() == (expected_kind), std::string(e.what()));   \
    }                                                         \
    CHECK_MESSAGE(caught_, "expected a tth::Error");          \
  } while (0)

namespace testutil {

inline tth::Tensor random_tensor(std::vector<std::size_t> shape, tth::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tth::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline tth::Image random_image(tth::ImageShape shape, tth::Rng& rng, double lo = 0.0, double hi = 255.0) {
  tth::Image img(shape);
  for (double& v : img.pixels()) v = rng.uniform(lo, hi);
  return img;
}

// Untrained model over the standard vocabulary for `size` x `size` images.
inline tth::MatcherModel tiny_model(tth::Arch arch, std::size_t size, std::uint64_t seed,
                                    std::size_t pool = 2) {
  tth::MatcherHyper h;
  h.arch = arch;
  h.d = 8;
  h.d_e = 8;
  h.hidden = 6;
  h.pool_factor = pool;
  h.seed = seed;
  return tth::init_matcher(h, tth::Vocabulary::standard().size(), {size, size, 3});
}

inline tth::Corpus small_corpus(std::uint64_t seed, tth::Flavor flavor = tth::Flavor::Blobs,
                                std::size_t n_train = 60, std::size_t n_val = 10, std::size_t n_test = 20) {
  tth::WorldParams p;
  p.flavor = flavor;
  p.image_size = 32;
  return tth::generate_corpus(seed, n_train, n_val, n_test, p);
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("tthlab_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
