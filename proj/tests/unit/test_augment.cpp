#include "adt/augment.hpp"
#include "adt/synthdata.hpp"
#include "doctest.h"

using namespace adt;
using namespace adt::aug;

namespace {

ImageTensor test_image(std::uint64_t seed = 21) {
  synth::SceneSpec spec;
  spec.seed = seed;
  spec.object_count = 4;
  return synth::generate_scene(spec).image;
}

}  // namespace

TEST_CASE("weak_augment flip reflects boxes; forced branches") {
  ImageTensor img = test_image();
  LabeledBoxes labels;
  labels.push_back({10, 20, 30, 40}, 2);

  AugmentConfig no_flip;
  no_flip.flip_prob = 0.0;
  AugmentConfig always_flip;
  always_flip.flip_prob = 1.0;

  Rng rng(1);
  const WeakResult none = weak_augment(img, labels, rng, no_flip);
  CHECK(none.image.data == img.data);
  CHECK(none.labels.boxes[0].x_min == 10.0);
  CHECK(!none.record.flipped);

  const WeakResult flipped = weak_augment(img, labels, rng, always_flip);
  CHECK(flipped.record.flipped);
  // width 96: x'_min = 96 - 30 = 66, x'_max = 96 - 10 = 86
  CHECK(flipped.labels.boxes[0].x_min == doctest::Approx(66.0));
  CHECK(flipped.labels.boxes[0].x_max == doctest::Approx(86.0));
  CHECK(flipped.labels.boxes[0].y_min == 20.0);

  // involution: flipping the flipped image restores everything
  const WeakResult twice = weak_augment(flipped.image, flipped.labels, rng, always_flip);
  CHECK(twice.image.data == img.data);
  CHECK(twice.labels.boxes[0].x_min == doctest::Approx(10.0));
  CHECK(twice.labels.boxes[0].x_max == doctest::Approx(30.0));

  // area preserved exactly
  CHECK(flipped.labels.boxes[0].area() == labels.boxes[0].area());
}

TEST_CASE("strong_augment identity when nothing fires") {
  ImageTensor img = test_image();
  AugmentConfig off;
  off.jitter_prob = off.grayscale_prob = off.blur_prob = off.cutout_prob = 0.0;
  Rng rng(5);
  const StrongResult res = strong_augment(img, rng, off);
  CHECK(res.image.data == img.data);
  CHECK(!res.record.jitter);
  CHECK(!res.record.grayscale);
  CHECK(!res.record.blur);
  CHECK(res.record.cutouts.empty());
}

TEST_CASE("grayscale maps pure red to its luma weight") {
  ImageTensor red(4, 4, 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) red.at(y, x, 0) = 1.0f;

  AugmentConfig only_gray;
  only_gray.jitter_prob = only_gray.blur_prob = only_gray.cutout_prob = 0.0;
  only_gray.grayscale_prob = 1.0;
  Rng rng(3);
  const StrongResult res = strong_augment(red, rng, only_gray);
  for (int c = 0; c < 3; ++c) CHECK(res.image.at(2, 2, c) == doctest::Approx(0.299).epsilon(1e-6));
}

TEST_CASE("cutout fills its region with the configured value") {
  ImageTensor img = test_image();
  AugmentConfig only_cut;
  only_cut.jitter_prob = only_cut.grayscale_prob = only_cut.blur_prob = 0.0;
  only_cut.cutout_prob = 1.0;
  only_cut.cutout_fill = {0.25f, 0.5f, 0.75f};
  Rng rng(8);
  const StrongResult res = strong_augment(img, rng, only_cut);
  REQUIRE(!res.record.cutouts.empty());
  for (const CutoutRect& r : res.record.cutouts) {
    for (int y = r.y0; y < r.y0 + r.h; ++y)
      for (int x = r.x0; x < r.x0 + r.w; ++x) {
        CHECK(res.image.at(y, x, 0) == 0.25f);
        CHECK(res.image.at(y, x, 1) == 0.5f);
        CHECK(res.image.at(y, x, 2) == 0.75f);
      }
  }
}

TEST_CASE("strong output stays in range across random draws") {
  ImageTensor img = test_image(33);
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    const StrongResult res = strong_augment(img, rng);
    for (float v : res.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("replay reproduces recorded augmentations bit-exactly") {
  ImageTensor img = test_image(44);
  LabeledBoxes labels;
  labels.push_back({5, 5, 25, 30}, 1);
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    const WeakResult weak = weak_augment(img, labels, rng);
    const StrongResult strong = strong_augment(weak.image, rng);

    const auto weak_replay = replay(img, labels, weak.record);
    CHECK(weak_replay.first.data == weak.image.data);
    const auto strong_replay = replay(weak.image, weak.labels, strong.record);
    CHECK(strong_replay.first.data == strong.image.data);
  }
}

TEST_CASE("replay rejects mismatched shapes") {
  ImageTensor img = test_image();
  Rng rng(3);
  const StrongResult res = strong_augment(img, rng);
  ImageTensor other(48, 48, 3);
  CHECK_THROWS_AS(replay(other, LabeledBoxes{}, res.record), std::invalid_argument);
  const auto same = replay(img, LabeledBoxes{}, AugmentRecord{img.height, img.width});
  CHECK(same.first.data == img.data);  // identity record
}
