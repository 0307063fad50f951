/*
 * Copyright 2026 The cmrsynth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"

#include "cmr/io/nifti.hpp"
#include "cmr/io/subject_io.hpp"
#include "cmr/phantom.hpp"
#include "cmr/preprocess.hpp"
#include "test_util.hpp"

using namespace cmr;

namespace {

Subject small_subject(int slices, int rows, int cols, Spacing sp) {
  Subject s;
  s.meta = {"P001", Pathology::HCM, "A", Phase::ES};
  s.spacing = sp;
  s.image = ImageVolume(slices, rows, cols);
  s.labels = LabelVolume(slices, rows, cols);
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(0.0f, 500.0f);
  for (auto& v : s.image.data()) v = u(rng);
  for (int k = 0; k < slices; ++k)
    for (int r = rows / 3; r < 2 * rows / 3; ++r)
      for (int c = cols / 3; c < 2 * cols / 3; ++c) s.labels(k, r, c) = static_cast<std::uint8_t>(1 + (r + c) % 3);
  return s;
}

std::map<int, std::size_t> class_counts(const LabelVolume& v) {
  std::map<int, std::size_t> m;
  for (auto x : v.data()) ++m[x];
  return m;
}

}  // namespace

TEST_CASE("save/load round trip is field-for-field equal") {
  testing::TempDir dir;
  const auto s = small_subject(10, 20, 24, {1.25, 1.25, 10.0});
  const auto path = io::save_subject(s, dir.path());
  const auto back = io::load_subject(path);
  CHECK(back == s);
  CHECK(back.spacing == Spacing{1.25, 1.25, 10.0});
}

TEST_CASE("load errors are distinct") {
  testing::TempDir dir;
  CHECK_THROWS_AS(io::load_subject(dir.path() / "nope.nii"), MissingFileError);

  {
    std::ofstream bad(dir.path() / "bad.nii", std::ios::binary);
    bad << "this is not a volume";
  }
  CHECK_THROWS_AS(io::load_subject(dir.path() / "bad.nii"), CorruptHeaderError);

  auto s = small_subject(3, 8, 8, {1.5, 1.5, 8.0});
  io::write_image(dir.path() / "X.nii", s.image, s.spacing);
  io::write_labels(dir.path() / "X_gt.nii", LabelVolume(3, 8, 9), s.spacing);
  CHECK_THROWS_AS(io::load_subject(dir.path() / "X.nii"), ShapeMismatchError);

  // A label file containing value 5 violates the label domain.
  ImageVolume fake(3, 8, 8, 0.0f);
  fake(1, 2, 3) = 5.0f;
  io::write_image(dir.path() / "Y.nii", s.image, s.spacing);
  io::write_image(dir.path() / "Y_gt.nii", fake, s.spacing);
  CHECK_THROWS_AS(io::load_subject(dir.path() / "Y.nii"), LabelDomainError);
}

TEST_CASE("manifest round trip") {
  testing::TempDir dir;
  std::vector<io::ManifestEntry> entries{{"A1", Pathology::NOR, "A", Phase::ED},
                                         {"B2", Pathology::DRV, "B", Phase::ES}};
  io::write_manifest(dir.path() / "manifest.txt", entries);
  CHECK(io::read_manifest(dir.path() / "manifest.txt") == entries);
}

TEST_CASE("resample_inplane") {
  auto s = small_subject(2, 16, 16, {1.5, 1.5, 10.0});
  SUBCASE("identity at target spacing") {
    const auto r = resample_inplane(s, 1.5);
    CHECK(r.image == s.image);
    CHECK(r.labels == s.labels);
  }
  SUBCASE("64x64 at 3mm becomes 128x128 at 1.5mm") {
    auto t = small_subject(3, 64, 64, {3.0, 3.0, 10.0});
    const auto r = resample_inplane(t, 1.5);
    CHECK(r.image.rows() == 128);
    CHECK(r.image.cols() == 128);
    CHECK(r.image.slices() == 3);
    CHECK(r.spacing == Spacing{1.5, 1.5, 10.0});
    for (auto v : r.labels.data()) CHECK(v <= 3);
  }
  SUBCASE("constant image stays constant") {
    auto t = small_subject(2, 30, 40, {2.0, 1.0, 5.0});
    std::fill(t.image.data().begin(), t.image.data().end(), 42.5f);
    const auto r = resample_inplane(t, 1.5);
    for (auto v : r.image.data()) CHECK(v == doctest::Approx(42.5f).epsilon(1e-6));
  }
  CHECK_THROWS_AS(resample_inplane(s, 0.0), InvalidArgumentError);
  CHECK_THROWS_AS(resample_inplane(s, -1.0), InvalidArgumentError);
}

TEST_CASE("crop_around_heart") {
  SUBCASE("centred heart gives the central window") {
    Subject s;
    s.spacing = {1.5, 1.5, 10};
    s.image = ImageVolume(1, 256, 256);
    s.labels = LabelVolume(1, 256, 256);
    for (int r = 0; r < 256; ++r)
      for (int c = 0; c < 256; ++c) s.image(0, r, c) = float(r * 256 + c);
    for (int r = 118; r < 138; ++r)
      for (int c = 118; c < 138; ++c) s.labels(0, r, c) = 3;
    const auto out = crop_around_heart(s, 128);
    CHECK(out.image.rows() == 128);
    CHECK(out.image(0, 0, 0) == s.image(0, 64, 64));
    CHECK(out.image(0, 127, 127) == s.image(0, 191, 191));
  }
  SUBCASE("window near the edge is padded and preserves class counts") {
    Subject s;
    s.spacing = {1.5, 1.5, 10};
    s.image = ImageVolume(2, 200, 200, 5.0f);
    s.labels = LabelVolume(2, 200, 200);
    for (int k = 0; k < 2; ++k)
      for (int r = 90; r < 110; ++r)
        for (int c = 4; c < 17; ++c) s.labels(k, r, c) = static_cast<std::uint8_t>(1 + (c % 3));
    const auto out = crop_around_heart(s, 128);
    auto before = class_counts(s.labels);
    auto after = class_counts(out.labels);
    for (int c = 1; c <= 3; ++c) CHECK(before[c] == after[c]);
  }
  SUBCASE("window larger than the image holds the whole image") {
    auto s = small_subject(2, 100, 100, {1.5, 1.5, 10});
    const auto out = crop_around_heart(s, 128);
    CHECK(out.image.rows() == 128);
    auto before = class_counts(s.labels);
    auto after = class_counts(out.labels);
    for (int c = 1; c <= 3; ++c) CHECK(before[c] == after[c]);
    double sum_in = 0, sum_out = 0;
    const float mn = *std::min_element(s.image.data().begin(), s.image.data().end());
    for (auto v : s.image.data()) sum_in += v - mn;
    for (auto v : out.image.data()) sum_out += v - mn;
    CHECK(sum_out == doctest::Approx(sum_in).epsilon(1e-9));
  }
  SUBCASE("all-background labels are rejected") {
    Subject s;
    s.image = ImageVolume(1, 10, 10);
    s.labels = LabelVolume(1, 10, 10);
    CHECK_THROWS_AS(crop_around_heart(s), DegenerateInputError);
  }
}

TEST_CASE("normalize_intensity") {
  SUBCASE("ramp 0..100 with 0/100 percentiles maps 50 to 0") {
    Subject s;
    s.image = ImageVolume(1, 1, 101);
    for (int i = 0; i <= 100; ++i) s.image(0, 0, i) = float(i);
    const auto out = normalize_intensity(s, 0.0, 100.0);
    CHECK(out.image(0, 0, 0) == -1.0f);
    CHECK(out.image(0, 0, 100) == 1.0f);
    CHECK(out.image(0, 0, 50) == doctest::Approx(0.0).epsilon(1e-7));
  }
  SUBCASE("outliers are clipped and the 1-99 window decides the median") {
    Subject s;
    const int n = 1000;
    s.image = ImageVolume(1, 1, n);
    for (int i = 0; i < n; ++i) s.image(0, 0, i) = float(i);
    for (int i = n - 20; i < n; ++i) s.image(0, 0, i) = 1.0e6f;  // 2% outliers
    // Oracle: sort and pick nearest-rank percentiles.
    std::vector<float> sorted(s.image.data());
    std::sort(sorted.begin(), sorted.end());
    const float lo = sorted[static_cast<std::size_t>(std::floor(0.01 * (n - 1)))];
    const float hi = sorted[static_cast<std::size_t>(std::ceil(0.99 * (n - 1)))];
    const auto out = normalize_intensity(s, 1.0, 99.0);
    for (int i = n - 20; i < n; ++i) CHECK(out.image(0, 0, i) == 1.0f);
    const float median_in = sorted[n / 2];
    const double expected = 2.0 * (median_in - lo) / (hi - lo) - 1.0;
    std::vector<float> o(out.image.data());
    std::sort(o.begin(), o.end());
    CHECK(o[n / 2] == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("output always within [-1,1]") {
    auto s = small_subject(3, 20, 20, {1, 1, 1});
    const auto out = normalize_intensity(s);
    for (auto v : out.image.data()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(out.labels == s.labels);
  }
  SUBCASE("degenerate volume") {
    Subject s;
    s.image = ImageVolume(1, 4, 4, 3.0f);
    CHECK_THROWS_AS(normalize_intensity(s), DegenerateInputError);
    CHECK_THROWS_AS(normalize_intensity(s, 50, 50), InvalidArgumentError);
  }
}

TEST_CASE("one_hot") {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<std::uint8_t> labels(12 * 9);
  for (auto& v : labels) v = static_cast<std::uint8_t>(cls(rng));
  const auto map = one_hot(labels, 12, 9);
  SUBCASE("binary, sums to one, argmax inverts") {
    for (Eigen::Index i = 0; i < map.channels.cols(); ++i) {
      CHECK(map.channels.col(i).sum() == 1.0f);
      for (int c = 0; c < 4; ++c) CHECK((map.channels(c, i) == 0.0f || map.channels(c, i) == 1.0f));
    }
    CHECK(argmax(map) == labels);
  }
  SUBCASE("projection: one_hot(argmax(one_hot(L))) == one_hot(L)") {
    const auto again = one_hot(argmax(map), 12, 9);
    CHECK(again.channels == map.channels);
  }
  SUBCASE("all background") {
    std::vector<std::uint8_t> bg(16, 0);
    const auto m = one_hot(bg, 4, 4);
    CHECK(m.channels.row(0).sum() == 16.0f);
    CHECK(m.channels.bottomRows(3).sum() == 0.0f);
  }
  SUBCASE("class count") {
    const auto k = std::count(labels.begin(), labels.end(), 3);
    CHECK(map.channels.row(3).sum() == doctest::Approx(double(k)));
  }
  std::vector<std::uint8_t> bad{0, 1, 4, 2};
  CHECK_THROWS_AS(one_hot(bad, 2, 2), LabelDomainError);
}

TEST_CASE("preprocessing is idempotent and never adds label classes") {
  auto params = phantom_preset(Pathology::NOR, 11);
  const auto raw = generate_phantom(params);
  const auto once = preprocess(raw);
  CHECK(once.image.rows() == 128);
  CHECK(once.image.cols() == 128);
  CHECK(once.spacing.row_mm == 1.5);
  CHECK(once.spacing.col_mm == 1.5);
  CHECK(is_conforming(once));
  const auto twice = preprocess(once);
  REQUIRE(twice.image.same_shape(once.image));
  double max_diff = 0.0;
  for (std::size_t i = 0; i < once.image.size(); ++i)
    max_diff = std::max(max_diff, double(std::abs(once.image.data()[i] - twice.image.data()[i])));
  CHECK(max_diff < 1e-6);
  CHECK(twice.labels == once.labels);
  for (auto v : once.labels.data()) CHECK(v <= 3);
}
