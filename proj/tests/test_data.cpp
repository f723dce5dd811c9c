#include "doctest.h"

#include "dosgan/data.hpp"
#include "dosgan/image_io.hpp"
#include "support.hpp"

#include <cstdlib>
#include <set>

using namespace dosgan;
using namespace dosgan::testing;
namespace fs = std::filesystem;

namespace {

std::uint64_t tree_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& f : files) {
    for (unsigned char c : fs::relative(f, root).string() + read_file(f)) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

TEST_CASE("synthetic domains: layout, factors and determinism") {
  TempDir a("synth_a"), b("synth_b");
  SyntheticSpec spec;
  spec.num_domains = 3;
  spec.per_domain = 5;
  spec.image_size = 16;
  spec.seed = 11;
  spec.out = a.path();
  const DatasetManifest m = make_synthetic_domains(spec);
  CHECK(m.num_domains() == 3);
  CHECK(m.total_images() == 15);
  CHECK(m.counts() == std::vector<std::size_t>{5, 5, 5});
  CHECK(m.domains[0].name == "domain_0");
  CHECK(fs::exists(a / "domain_2/img_00004.png"));
  CHECK(m.image_h == 16);

  const auto rows = read_factor_table(a.path());
  REQUIRE(rows.size() == 15);
  for (const auto& r : rows) {
    CHECK(fs::exists(a.path() / r.path));
    CHECK(r.content_shape >= 0);
    CHECK(r.content_shape <= 2);
    CHECK(r.content_x >= 0.3 * 16);
    CHECK(r.content_x <= 0.7 * 16);
  }

  spec.out = b.path();
  make_synthetic_domains(spec);
  CHECK(tree_hash(a.path()) == tree_hash(b.path()));
  spec.seed = 12;
  make_synthetic_domains(spec);
  CHECK(tree_hash(a.path()) != tree_hash(b.path()));

  spec.num_domains = 1;
  CHECK_THROWS_AS(make_synthetic_domains(spec), Error);
}

TEST_CASE("synthetic domains differ in background colour only") {
  TempDir t("synth_bg");
  SyntheticSpec spec{2, 4, 16, 3, t.path()};
  const DatasetManifest m = make_synthetic_domains(spec);
  const ImageBatch d0 = domain_images(m, 0);
  const ImageBatch d1 = domain_images(m, 1);
  // corner pixels are background
  for (int n = 0; n < 4; ++n) {
    CHECK(d0.pixels(n, 0, 0, 0) == d0.pixels(0, 0, 0, 0));
    CHECK(d1.pixels(n, 1, 15, 15) == d1.pixels(0, 1, 15, 15));
  }
  bool differs = false;
  for (int c = 0; c < 3; ++c) differs |= d0.pixels(0, c, 0, 0) != d1.pixels(0, c, 0, 0);
  CHECK(differs);
}

TEST_CASE("manifest loading") {
  TempDir t("manifest");
  SyntheticSpec spec{3, 4, 16, 1, t.path()};
  make_synthetic_domains(spec);
  fs::create_directories(t / ".hidden");
  { std::ofstream(t / "domain_1/broken.png") << "not an image"; }
  const DatasetManifest m = load_manifest(t.path(), 16, 16, 3);
  CHECK(m.num_domains() == 3);
  CHECK(m.domains[1].images.size() == 4);
  CHECK(std::is_sorted(m.domains[0].images.begin(), m.domains[0].images.end()));
  CHECK(m.fingerprint() == load_manifest(t.path(), 16, 16, 3).fingerprint());
  CHECK(m.fingerprint() != load_manifest(t.path(), 8, 8, 3).fingerprint());

  const auto& px = m.pixels(m.domains[0].images[0]);
  CHECK(px.size() == 3u * 16 * 16);
  for (float v : px) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
  const DatasetManifest small = load_manifest(t.path(), 8, 8, 1);
  CHECK(small.pixels(small.domains[0].images[0]).size() == 64u);

  CHECK_THROWS_WITH_AS(load_manifest(t / "missing", 16, 16, 3), doctest::Contains("does not exist"), Error);
  TempDir empty("manifest_empty");
  CHECK_THROWS_WITH_AS(load_manifest(empty.path(), 16, 16, 3), doctest::Contains("no domain directories"), Error);
  fs::create_directories(empty / "only");
  fs::copy_file(m.domains[0].images[0], empty / "only/a.png");
  CHECK_THROWS_AS(load_manifest(empty.path(), 16, 16, 3), Error);
  fs::create_directories(empty / "void");
  CHECK_THROWS_WITH_AS(load_manifest(empty.path(), 16, 16, 3), doctest::Contains("no decodable images"), Error);
}

TEST_CASE("batches, splits and domain selection") {
  TempDir t("batches");
  const DatasetManifest m = make_synthetic_domains(SyntheticSpec{3, 10, 16, 2, t.path()});
  Rng rng(1);
  const ImageBatch b = sample_batch(m, 2, 7, rng);
  CHECK(b.pixels.shape() == Shape4{7, 3, 16, 16});
  CHECK(b.labels == std::vector<int>(7, 2));
  CHECK_THROWS_AS(sample_batch(m, 3, 2, rng), Error);
  CHECK_THROWS_AS(sample_batch(m, 0, 0, rng), Error);
  const ImageBatch p = sample_pooled_batch(m, 64, rng);
  CHECK(std::set<int>(p.labels.begin(), p.labels.end()).size() == 3);

  Rng r1(5), r2(5);
  CHECK(sample_batch(m, 1, 4, r1).pixels.data() == sample_batch(m, 1, 4, r2).pixels.data());

  Rng srng(3);
  const auto [train, test] = split_train_test(m, 0.2, srng);
  for (int d = 0; d < 3; ++d) {
    CHECK(train.domains[std::size_t(d)].images.size() == 8);
    CHECK(test.domains[std::size_t(d)].images.size() == 2);
    std::set<fs::path> seen(train.domains[std::size_t(d)].images.begin(), train.domains[std::size_t(d)].images.end());
    for (const auto& f : test.domains[std::size_t(d)].images) CHECK(seen.count(f) == 0);
  }
  CHECK_THROWS_AS(split_train_test(m, 0.0, srng), Error);
  CHECK_THROWS_AS(split_train_test(m, 0.01, srng), Error);
  const auto [tr2, te2] = split_train_test_count(m, 3, srng);
  CHECK(te2.domains[0].images.size() == 3);
  CHECK(tr2.domains[0].images.size() == 7);

  const DatasetManifest sel = select_domains(m, {2, 0});
  CHECK(sel.num_domains() == 2);
  CHECK(sel.domains[0].name == "domain_2");
  CHECK(domain_images(sel, 0).labels == std::vector<int>(10, 0));
}

TEST_CASE("pixel conversion") {
  CHECK(to_uint8(-1.0f) == 0);
  CHECK(to_uint8(1.0f) == 255);
  CHECK(to_uint8(-2.0f) == 0);
  CHECK(to_uint8(3.0f) == 255);
  CHECK(to_uint8(0.0f) == 128);  // 127.5 rounds to even
  for (int b = 0; b < 256; ++b) CHECK(to_uint8(2.0f * float(b) / 255.0f - 1.0f) == b);

  TempDir t("png");
  Tensor<float> img(Shape4{1, 3, 4, 4});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) img(0, c, y, x) = 2.0f * float(c * 80 + y * 10 + x) / 255.0f - 1.0f;
  write_png(t / "a.png", img, 0);
  const auto back = decode_image(t / "a.png", 4, 4, 3);
  REQUIRE(back.has_value());
  for (std::size_t i = 0; i < back->size(); ++i) CHECK((*back)[i] == doctest::Approx(img.ptr()[i]).epsilon(1e-6));
  CHECK_FALSE(decode_image(t / "missing.png", 4, 4, 3).has_value());
  write_png_row(t / "row.png", {img, img, img});
  CHECK(decode_image(t / "row.png", 4, 12, 3).has_value());
}

TEST_CASE("decoded-image cache directory") {
  TempDir data("cache_data"), cache("cache_dir");
  make_synthetic_domains(SyntheticSpec{2, 3, 16, 4, data.path()});
  ::setenv("DOSGAN_CACHE", cache.path().c_str(), 1);
  const DatasetManifest m = load_manifest(data.path(), 16, 16, 3);
  const auto first = m.pixels(m.domains[0].images[0]);
  ::unsetenv("DOSGAN_CACHE");
  std::size_t cached = 0;
  for (const auto& e : fs::directory_iterator(cache.path())) cached += e.path().extension() == ".f32";
  CHECK(cached >= 1);
  ::setenv("DOSGAN_CACHE", cache.path().c_str(), 1);
  const DatasetManifest again = load_manifest(data.path(), 16, 16, 3);
  CHECK(again.pixels(again.domains[0].images[0]) == first);
  ::unsetenv("DOSGAN_CACHE");
}
