#include "dosgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <functional>
#include <unordered_map>

namespace fs = std::filesystem;

namespace dosgan {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) { return fnv1a(h, s.data(), s.size()); }

constexpr std::uint64_t kFnvBasis = 1469598103934665603ull;

}  // namespace

/// Decoded pixels keyed by path. Optionally mirrored to a directory given by
/// DOSGAN_CACHE so later processes skip decoding.
class ImageCache {
 public:
  ImageCache(int h, int w, int c) : h_(h), w_(w), c_(c) {
    if (const char* dir = std::getenv("DOSGAN_CACHE"); dir && *dir) {
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (!ec) disk_dir_ = fs::path(dir);
    }
  }

  /// nullptr when the file cannot be decoded.
  const std::vector<float>* get(const fs::path& path) {
    const std::string key = path.string();
    {
      std::lock_guard lock(mu_);
      if (auto it = store_.find(key); it != store_.end()) return it->second.get();
    }
    std::optional<std::vector<float>> px = read_disk(path);
    const bool from_disk = px.has_value();
    if (!px) px = decode_image(path, h_, w_, c_);
    std::lock_guard lock(mu_);
    auto& slot = store_[key];
    if (!slot && px) {
      slot = std::make_unique<std::vector<float>>(std::move(*px));
      if (!from_disk) write_disk(path, *slot);
    }
    return slot.get();
  }

 private:
  fs::path disk_file(const fs::path& path) const {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    const auto mtime = fs::last_write_time(path, ec).time_since_epoch().count();
    std::uint64_t h = fnv1a(kFnvBasis, fs::absolute(path).string());
    h = fnv1a(h, &size, sizeof size);
    h = fnv1a(h, &mtime, sizeof mtime);
    const int geom[3] = {h_, w_, c_};
    h = fnv1a(h, geom, sizeof geom);
    std::ostringstream name;
    name << std::hex << h << ".f32";
    return *disk_dir_ / name.str();
  }

  std::optional<std::vector<float>> read_disk(const fs::path& path) const {
    if (!disk_dir_) return std::nullopt;
    std::ifstream in(disk_file(path), std::ios::binary);
    if (!in) return std::nullopt;
    std::vector<float> px(std::size_t(h_) * w_ * c_);
    in.read(reinterpret_cast<char*>(px.data()), std::streamsize(px.size() * sizeof(float)));
    if (!in || in.peek() != std::char_traits<char>::eof()) return std::nullopt;
    return px;
  }

  void write_disk(const fs::path& path, const std::vector<float>& px) const {
    if (!disk_dir_) return;
    const fs::path target = disk_file(path);
    const fs::path tmp = target.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size() * sizeof(float)));
      if (!out) return;
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
  }

  int h_;
  int w_;
  int c_;
  std::optional<fs::path> disk_dir_;
  std::mutex mu_;
  std::unordered_map<std::string, std::unique_ptr<std::vector<float>>> store_;
};

std::size_t DatasetManifest::total_images() const {
  std::size_t n = 0;
  for (const auto& d : domains) n += d.images.size();
  return n;
}

std::vector<std::size_t> DatasetManifest::counts() const {
  std::vector<std::size_t> out;
  for (const auto& d : domains) out.push_back(d.images.size());
  return out;
}

std::uint64_t DatasetManifest::fingerprint() const {
  std::uint64_t h = kFnvBasis;
  const int geom[3] = {image_h, image_w, channels};
  h = fnv1a(h, geom, sizeof geom);
  for (const auto& d : domains) {
    h = fnv1a(h, d.name);
    for (const auto& p : d.images) h = fnv1a(h, p.string());
  }
  return h;
}

const std::vector<float>& DatasetManifest::pixels(const fs::path& image) const {
  if (!cache) throw Error("manifest has no image cache");
  const auto* px = cache->get(image);
  if (!px) throw Error("cannot decode " + image.string());
  return *px;
}

DatasetManifest load_manifest(const fs::path& root, int image_h, int image_w, int channels) {
  if (!fs::is_directory(root)) throw Error("dataset root does not exist: " + root.string());
  if (image_h < 1 || image_w < 1) throw Error("image size must be positive");
  if (channels != 1 && channels != 3) throw Error("channels must be 1 or 3");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind('.', 0) != 0) dirs.push_back(e.path());
  if (dirs.empty()) throw Error("no domain directories in " + root.string());
  std::sort(dirs.begin(), dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  DatasetManifest m;
  m.root = root;
  m.image_h = image_h;
  m.image_w = image_w;
  m.channels = channels;
  m.cache = std::make_shared<ImageCache>(image_h, image_w, channels);
  for (const auto& dir : dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    DomainEntry d{dir.filename().string(), {}};
    for (const auto& f : files) {
      if (m.cache->get(f))
        d.images.push_back(f);
      else
        std::cerr << "warning: skipping undecodable file " << f.string() << "\n";
    }
    if (d.images.empty()) throw Error("domain directory has no decodable images: " + dir.string());
    m.domains.push_back(std::move(d));
  }
  if (m.domains.size() < 2)
    throw Error("need at least 2 domain directories in " + root.string() + ", found " +
                std::to_string(m.domains.size()));
  return m;
}

ImageBatch load_batch(const DatasetManifest& manifest, const std::vector<fs::path>& images, int label) {
  ImageBatch b;
  b.pixels = Tensor<float>(Shape4{int(images.size()), manifest.channels, manifest.image_h, manifest.image_w});
  b.labels.assign(images.size(), label);
  const std::int64_t per = b.pixels.shape().image_size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& px = manifest.pixels(images[i]);
    std::copy(px.begin(), px.end(), b.pixels.ptr() + std::int64_t(i) * per);
  }
  return b;
}

ImageBatch sample_batch(const DatasetManifest& manifest, int domain, int k, Rng& rng) {
  if (domain < 0 || domain >= manifest.num_domains())
    throw Error("domain index " + std::to_string(domain) + " out of range [0, " +
                std::to_string(manifest.num_domains()) + ")");
  if (k < 1) throw Error("batch size must be >= 1");
  const auto& pool = manifest.domains[std::size_t(domain)].images;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<fs::path> chosen;
  chosen.reserve(std::size_t(k));
  for (int i = 0; i < k; ++i) chosen.push_back(pool[pick(rng)]);
  return load_batch(manifest, chosen, domain);
}

ImageBatch sample_pooled_batch(const DatasetManifest& manifest, int k, Rng& rng) {
  if (k < 1) throw Error("batch size must be >= 1");
  const std::size_t total = manifest.total_images();
  if (total == 0) throw Error("empty manifest");
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  ImageBatch b;
  b.pixels = Tensor<float>(Shape4{k, manifest.channels, manifest.image_h, manifest.image_w});
  const std::int64_t per = b.pixels.shape().image_size();
  for (int i = 0; i < k; ++i) {
    std::size_t idx = pick(rng);
    int d = 0;
    while (idx >= manifest.domains[std::size_t(d)].images.size()) idx -= manifest.domains[std::size_t(d++)].images.size();
    const auto& px = manifest.pixels(manifest.domains[std::size_t(d)].images[idx]);
    std::copy(px.begin(), px.end(), b.pixels.ptr() + i * per);
    b.labels.push_back(d);
  }
  return b;
}

ImageBatch domain_images(const DatasetManifest& manifest, int domain) {
  if (domain < 0 || domain >= manifest.num_domains()) throw Error("domain index out of range");
  return load_batch(manifest, manifest.domains[std::size_t(domain)].images, domain);
}

namespace {

struct Rgb {
  double r;
  double g;
  double b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int i = int(hh);
  const double f = hh - i;
  const double p = v * (1 - s);
  const double q = v * (1 - s * f);
  const double t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

bool inside_shape(int shape, double px, double py, double cx, double cy, double r) {
  const double dx = px - cx;
  const double dy = py - cy;
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    default: {
      // upward triangle with apex at (cx, cy - r) and base at cy + r
      if (dy < -r || dy > r) return false;
      const double half = (dy + r) * 0.5 * 1.1;
      return std::abs(dx) <= half;
    }
  }
}

std::string domain_dir_name(int k, int n) {
  const int digits = int(std::to_string(std::max(n - 1, 0)).size());
  std::string idx = std::to_string(k);
  return "domain_" + std::string(std::size_t(digits) - idx.size(), '0') + idx;
}

}  // namespace

DatasetManifest make_synthetic_domains(const SyntheticSpec& spec) {
  if (spec.num_domains < 2) throw Error("synthetic data needs at least 2 domains");
  if (spec.per_domain < 1) throw Error("synthetic data needs at least 1 image per domain");
  if (spec.image_size < 8) throw Error("synthetic image size must be >= 8");
  if (spec.out.empty()) throw Error("synthetic output path is empty");
  std::error_code ec;
  fs::create_directories(spec.out, ec);
  if (ec || !fs::is_directory(spec.out)) throw Error("cannot create output directory " + spec.out.string());

  Rng rng(spec.seed);
  std::uniform_int_distribution<int> shape_dist(0, 2);
  const int s = spec.image_size;
  std::uniform_real_distribution<double> pos(0.32 * s, 0.68 * s);
  const double radius = 0.22 * s;
  constexpr int kSuper = 4;

  const fs::path factors_path = spec.out / "factors.tsv";
  std::ofstream factors(factors_path);
  if (!factors) throw Error("cannot write " + factors_path.string());
  factors << "path\tdomain\tcontent_shape\tcontent_x\tcontent_y\n";
  factors.setf(std::ios::fixed);
  factors.precision(4);

  std::vector<std::uint8_t> pixels(std::size_t(s) * s * 3);
  for (int k = 0; k < spec.num_domains; ++k) {
    const std::string dname = domain_dir_name(k, spec.num_domains);
    fs::create_directories(spec.out / dname, ec);
    if (ec) throw Error("cannot create " + (spec.out / dname).string());
    const Rgb bg = hsv_to_rgb(double(k) / spec.num_domains, 0.8, 0.85);
    const Rgb fg{0.95, 0.95, 0.95};
    for (int i = 0; i < spec.per_domain; ++i) {
      const int shape = shape_dist(rng);
      const double cx = pos(rng);
      const double cy = pos(rng);
      for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
          int hits = 0;
          for (int sy = 0; sy < kSuper; ++sy)
            for (int sx = 0; sx < kSuper; ++sx)
              hits += inside_shape(shape, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper, cx, cy, radius);
          const double a = double(hits) / (kSuper * kSuper);
          const double rgb[3] = {a * fg.r + (1 - a) * bg.r, a * fg.g + (1 - a) * bg.g, a * fg.b + (1 - a) * bg.b};
          for (int c = 0; c < 3; ++c)
            pixels[(std::size_t(y) * s + x) * 3 + c] = std::uint8_t(std::lround(rgb[c] * 255.0));
        }
      }
      char name[32];
      std::snprintf(name, sizeof name, "img_%05d.png", i);
      const fs::path rel = fs::path(dname) / name;
      write_png_bytes(spec.out / rel, pixels, s, s, 3);
      factors << rel.generic_string() << '\t' << k << '\t' << shape << '\t' << cx << '\t' << cy << '\n';
    }
  }
  factors.close();
  if (!factors) throw Error("cannot write " + factors_path.string());
  return load_manifest(spec.out, s, s, 3);
}

std::vector<FactorRow> read_factor_table(const fs::path& root) {
  std::ifstream in(root / "factors.tsv");
  if (!in) throw Error("missing factor table in " + root.string());
  std::string line;
  std::getline(in, line);
  if (line != "path\tdomain\tcontent_shape\tcontent_x\tcontent_y") throw Error("unexpected factor table header");
  std::vector<FactorRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FactorRow r;
    std::getline(ls, r.path, '\t');
    ls >> r.domain >> r.content_shape >> r.content_x >> r.content_y;
    if (!ls) throw Error("malformed factor table row: " + line);
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::pair<DatasetManifest, DatasetManifest> split_with(const DatasetManifest& manifest, Rng& rng,
                                                       const std::function<long(std::size_t)>& test_count) {
  DatasetManifest train = manifest;
  DatasetManifest test = manifest;
  for (std::size_t d = 0; d < manifest.domains.size(); ++d) {
    std::vector<fs::path> shuffled = manifest.domains[d].images;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const long n = long(shuffled.size());
    const long t = test_count(shuffled.size());
    if (t <= 0 || t >= n)
      throw Error("domain too small to split: " + manifest.domains[d].name + " (" + std::to_string(n) + " images)");
    test.domains[d].images.assign(shuffled.begin(), shuffled.begin() + t);
    train.domains[d].images.assign(shuffled.begin() + t, shuffled.end());
    std::sort(test.domains[d].images.begin(), test.domains[d].images.end());
    std::sort(train.domains[d].images.begin(), train.domains[d].images.end());
  }
  return {std::move(train), std::move(test)};
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest, double test_fraction,
                                                             Rng& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw Error("test fraction must lie in (0, 1)");
  return split_with(manifest, rng, [&](std::size_t n) { return std::lround(double(n) * test_fraction); });
}

std::pair<DatasetManifest, DatasetManifest> split_train_test_count(const DatasetManifest& manifest,
                                                                   int test_per_domain, Rng& rng) {
  if (test_per_domain < 1) throw Error("test count per domain must be >= 1");
  return split_with(manifest, rng, [&](std::size_t) { return long(test_per_domain); });
}

DatasetManifest select_domains(const DatasetManifest& manifest, const std::vector<int>& domains) {
  DatasetManifest out = manifest;
  out.domains.clear();
  for (int d : domains) {
    if (d < 0 || d >= manifest.num_domains()) throw Error("select_domains: index out of range");
    out.domains.push_back(manifest.domains[std::size_t(d)]);
  }
  return out;
}

}  // namespace dosgan
