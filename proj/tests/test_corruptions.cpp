#include <doctest.h>

#include <set>

#include "gradient_oracle.hpp"
#include "onestream/corruption.hpp"
#include "onestream/errors.hpp"

using namespace onestream;
using onestream::testing::random_tensor;

namespace {

// Grid positions whose patch differs from `input` in any frame.
std::set<std::size_t> changed_patches(const Tensor& input, const Tensor& out, std::size_t s) {
  std::set<std::size_t> changed;
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2), gw = W / s;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (input.at(c, y, x) != out.at(c, y, x)) changed.insert((y / s) * gw + x / s);
  return changed;
}

}  // namespace

TEST_CASE("rounding rule for the patch count") {
  CHECK(corrupted_patch_count(0.05, 49) == 2);
  CHECK(corrupted_patch_count(0.10, 49) == 5);
  CHECK(corrupted_patch_count(0.50, 49) == 25);
  CHECK(corrupted_patch_count(0.75, 49) == 37);
  CHECK(corrupted_patch_count(0.0, 49) == 0);
  CHECK(corrupted_patch_count(1.0, 49) == 49);
}

TEST_CASE("replaced patches on a 224 x 224 clip with 32-pixel patches") {
  Rng data(1);
  const Tensor input = random_tensor({12, 224, 224}, data, 0.6, 1);
  const Tensor future = random_tensor({12, 224, 224}, data, 0, 0.4);
  for (double f : {0.05, 0.10, 0.50, 0.75}) {
    for (CorruptionMode mode : {CorruptionMode::guided, CorruptionMode::masked}) {
      CorruptionConfig c;
      c.mode = mode;
      c.fraction = f;
      c.patch_size = 32;
      Rng rng(7);
      const Corrupted out = corrupt(input, future, c, rng);
      const std::size_t k = corrupted_patch_count(f, 49);
      CHECK(out.patches.size() == k);
      const auto changed = changed_patches(input, out.clip, 32);
      CHECK(changed.size() == k);
      CHECK(changed == std::set<std::size_t>(out.patches.begin(), out.patches.end()));
      // Same positions in every frame, and replaced with the right source.
      for (std::size_t p : out.patches) {
        const std::size_t py = (p / 7) * 32, px = (p % 7) * 32;
        for (std::size_t ch = 0; ch < 12; ++ch)
          for (std::size_t y = py; y < py + 32; y += 7)
            for (std::size_t x = px; x < px + 32; x += 5) {
              const Real expect = mode == CorruptionMode::guided ? future.at(ch, y, x) : kMaskGray;
              CHECK(out.clip.at(ch, y, x) == expect);
            }
      }
    }
  }
}

TEST_CASE("masked 50% on a 7 x 7 grid writes exactly 25 gray patches") {
  Rng data(2);
  const Tensor input = random_tensor({3, 224, 224}, data, 0.6, 1);
  CorruptionConfig c;
  c.mode = CorruptionMode::masked;
  c.fraction = 0.5;
  c.patch_size = 32;
  Rng rng(3);
  const Corrupted out = corrupt(input, input, c, rng);
  std::size_t gray = 0;
  for (std::size_t p = 0; p < 49; ++p) {
    bool all_gray = true;
    for (std::size_t y = (p / 7) * 32; y < (p / 7) * 32 + 32; ++y)
      for (std::size_t x = (p % 7) * 32; x < (p % 7) * 32 + 32; ++x) all_gray &= out.clip.at(0, y, x) == kMaskGray;
    gray += all_gray;
  }
  CHECK(gray == 25);
}

TEST_CASE("corruption identities") {
  Rng data(3);
  const Tensor input = random_tensor({6, 16, 16}, data);
  const Tensor future = random_tensor({6, 16, 16}, data);
  for (CorruptionMode mode : {CorruptionMode::vanilla, CorruptionMode::guided, CorruptionMode::masked}) {
    CorruptionConfig c;
    c.mode = mode;
    c.fraction = 0;
    c.patch_size = 4;
    Rng rng(1);
    CHECK(corrupt(input, future, c, rng).clip == input);
  }
  CorruptionConfig vanilla;
  vanilla.mode = CorruptionMode::vanilla;
  vanilla.fraction = 0.5;
  vanilla.patch_size = 4;
  Rng rng(1);
  CHECK(corrupt(input, future, vanilla, rng).clip == input);

  CorruptionConfig all;
  all.mode = CorruptionMode::guided;
  all.fraction = 1;
  all.patch_size = 4;
  CHECK(corrupt(input, future, all, rng).clip == future);
}

TEST_CASE("corruption is deterministic under a fixed seed") {
  Rng data(4);
  const Tensor input = random_tensor({3, 16, 16}, data);
  const Tensor future = random_tensor({3, 16, 16}, data);
  CorruptionConfig c;
  c.fraction = 0.3;
  c.patch_size = 4;
  Rng a(9), b(9), other(10);
  const Corrupted x = corrupt(input, future, c, a);
  CHECK(x.clip == corrupt(input, future, c, b).clip);
  CHECK(x.patches != corrupt(input, future, c, other).patches);
}

TEST_CASE("patch choice is uniform without replacement") {
  Rng rng(5);
  std::vector<int> hits(10);
  for (int trial = 0; trial < 5000; ++trial) {
    const auto chosen = choose_patches(10, 3, rng);
    REQUIRE(chosen.size() == 3);
    CHECK(std::is_sorted(chosen.begin(), chosen.end()));
    CHECK(std::set<std::size_t>(chosen.begin(), chosen.end()).size() == 3);
    for (std::size_t p : chosen) hits[p]++;
  }
  for (int h : hits) CHECK(std::abs(h / 15000.0 - 0.1) <= 0.01);
}

TEST_CASE("corruption errors") {
  Rng rng(1);
  CorruptionConfig c;
  c.patch_size = 5;
  CHECK_THROWS_AS(corrupt(Tensor({3, 16, 16}), Tensor({3, 16, 16}), c, rng), ConfigError);
  c.patch_size = 4;
  CHECK_THROWS_AS(corrupt(Tensor({3, 16, 16}), Tensor({3, 8, 16}), c, rng), ShapeError);
  c.fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
