#include "cnx/data.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <numeric>

#include "cnx/errors.hpp"

namespace cnx {

std::span<const std::uint8_t> Dataset::image(std::int64_t i) const {
  return std::span<const std::uint8_t>(images).subspan(static_cast<std::size_t>(i * kImageBytes),
                                                       static_cast<std::size_t>(kImageBytes));
}

Dataset Dataset::head(std::int64_t n) const {
  n = std::min(n, size());
  Dataset d;
  d.split = split;
  d.num_classes = num_classes;
  d.labels.assign(labels.begin(), labels.begin() + n);
  d.images.assign(images.begin(), images.begin() + n * kImageBytes);
  return d;
}

void Dataset::validate() const {
  if (static_cast<std::int64_t>(images.size()) != size() * kImageBytes) {
    throw DataError(fmt::format("dataset holds {} image bytes for {} labels", images.size(), labels.size()));
  }
  for (auto l : labels) {
    if (l >= num_classes) throw DataError(fmt::format("label {} outside [0, {})", l, num_classes));
  }
}

Dataset read_cifar_batch(const std::filesystem::path& file, Split split, std::optional<std::int64_t> expected_records) {
  std::ifstream f(file, std::ios::binary);
  if (!f) throw DataError(fmt::format("{}: missing or unreadable CIFAR-10 batch", file.string()));
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto bytes = static_cast<std::int64_t>(raw.size());
  if (bytes % kCifarRecordBytes != 0) {
    throw DataError(fmt::format("{}: {} bytes is not a whole number of {}-byte records", file.string(), bytes,
                                kCifarRecordBytes));
  }
  const auto records = bytes / kCifarRecordBytes;
  if (expected_records && records != *expected_records) {
    throw DataError(fmt::format("{}: {} records, expected {}", file.string(), records, *expected_records));
  }
  Dataset d;
  d.split = split;
  d.labels.resize(static_cast<std::size_t>(records));
  d.images.resize(static_cast<std::size_t>(records * kImageBytes));
  for (std::int64_t r = 0; r < records; ++r) {
    const auto* rec = raw.data() + r * kCifarRecordBytes;
    d.labels[static_cast<std::size_t>(r)] = rec[0];
    std::copy(rec + 1, rec + kCifarRecordBytes, d.images.begin() + r * kImageBytes);
  }
  try {
    d.validate();
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", file.string(), e.what()));
  }
  return d;
}

void write_cifar_batch(const std::filesystem::path& file, const Dataset& ds) {
  ds.validate();
  std::ofstream f(file, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(fmt::format("{}: cannot open for writing", file.string()));
  for (std::int64_t r = 0; r < ds.size(); ++r) {
    f.put(static_cast<char>(ds.labels[static_cast<std::size_t>(r)]));
    auto img = ds.image(r);
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  }
  if (!f) throw DataError(fmt::format("{}: write failed", file.string()));
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  constexpr std::int64_t kPerBatch = 10000;
  Cifar10 c;
  c.train.split = Split::kTrain;
  for (int i = 1; i <= 5; ++i) {
    auto part = read_cifar_batch(dir / fmt::format("data_batch_{}.bin", i), Split::kTrain, kPerBatch);
    c.train.labels.insert(c.train.labels.end(), part.labels.begin(), part.labels.end());
    c.train.images.insert(c.train.images.end(), part.images.begin(), part.images.end());
  }
  c.test = read_cifar_batch(dir / "test_batch.bin", Split::kTest, kPerBatch);
  return c;
}

NormalizationConfig NormalizationConfig::from_json(const nlohmann::json& j) {
  NormalizationConfig c;
  try {
    c.mean = j.at("mean").get<std::array<float, 3>>();
    c.std = j.at("std").get<std::array<float, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad normalization config: {}", e.what()));
  }
  for (float s : c.std) {
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive");
  }
  return c;
}

nlohmann::json NormalizationConfig::to_json() const { return {{"mean", mean}, {"std", std}}; }

float normalize_pixel(std::uint8_t v, int channel, const NormalizationConfig& cfg) {
  const auto c = static_cast<std::size_t>(channel);
  return (static_cast<float>(v) / 255.0f - cfg.mean[c]) / cfg.std[c];
}

float denormalize_pixel(float v, int channel, const NormalizationConfig& cfg) {
  const auto c = static_cast<std::size_t>(channel);
  return (v * cfg.std[c] + cfg.mean[c]) * 255.0f;
}

Tensor normalize(std::span<const std::uint8_t> images, const NormalizationConfig& cfg) {
  if (images.size() % kImageBytes != 0) throw DimensionError("normalize: byte count is not a multiple of 3x32x32");
  const auto n = static_cast<std::int64_t>(images.size()) / kImageBytes;
  Tensor out = Tensor::zeros({n, kImageChannels, kImageSide, kImageSide});
  auto od = out.data();
  constexpr auto plane = kImageSide * kImageSide;
  // lookup table per channel: 256 entries
  std::array<std::array<float, 256>, 3> lut{};
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < 256; ++v) lut[static_cast<std::size_t>(c)][static_cast<std::size_t>(v)] =
        normalize_pixel(static_cast<std::uint8_t>(v), c, cfg);
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto c = (static_cast<std::int64_t>(i) / plane) % kImageChannels;
    od[i] = lut[static_cast<std::size_t>(c)][images[i]];
  }
  return out;
}

BatchIterator::BatchIterator(const Dataset& ds, std::int64_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                             NormalizationConfig norm, Augmentation aug)
    : ds_(ds), batch_size_(batch_size), norm_(norm), aug_(aug), rng_(shuffle_seed.value_or(0)) {
  if (batch_size <= 0) throw UsageError("batch size must be positive");
  order_.resize(static_cast<std::size_t>(ds.size()));
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle_seed) std::shuffle(order_.begin(), order_.end(), rng_);
}

std::int64_t BatchIterator::num_batches() const { return (ds_.size() + batch_size_ - 1) / batch_size_; }

bool BatchIterator::next(Batch& out) {
  const auto total = static_cast<std::int64_t>(order_.size());
  if (pos_ >= total) return false;
  const auto n = std::min(batch_size_, total - pos_);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(n * kImageBytes));
  out.labels.resize(static_cast<std::size_t>(n));
  out.indices.assign(order_.begin() + pos_, order_.begin() + pos_ + n);
  for (std::int64_t b = 0; b < n; ++b) {
    const auto idx = order_[static_cast<std::size_t>(pos_ + b)];
    out.labels[static_cast<std::size_t>(b)] = ds_.labels[static_cast<std::size_t>(idx)];
    auto src = ds_.image(idx);
    std::copy(src.begin(), src.end(), raw.begin() + b * kImageBytes);
  }
  out.images = normalize(raw, norm_);
  if (aug_.horizontal_flip || aug_.pad_crop > 0) {
    auto d = out.images.data();
    const int pad = aug_.pad_crop;
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> shift(-pad, pad);
    std::vector<float> plane(static_cast<std::size_t>(kImageSide * kImageSide));
    for (std::int64_t b = 0; b < n; ++b) {
      const bool flip = aug_.horizontal_flip && coin(rng_) == 1;
      const int dy = pad > 0 ? shift(rng_) : 0;
      const int dx = pad > 0 ? shift(rng_) : 0;
      for (std::int64_t c = 0; c < kImageChannels; ++c) {
        float* p = d.data() + (b * kImageChannels + c) * kImageSide * kImageSide;
        std::copy(p, p + plane.size(), plane.begin());
        for (std::int64_t y = 0; y < kImageSide; ++y) {
          for (std::int64_t x = 0; x < kImageSide; ++x) {
            const auto sy = y + dy;
            auto sx = x + dx;
            if (flip) sx = kImageSide - 1 - sx;
            const bool inside = sy >= 0 && sy < kImageSide && sx >= 0 && sx < kImageSide;
            // padding is zero in normalized space
            p[y * kImageSide + x] = inside ? plane[static_cast<std::size_t>(sy * kImageSide + sx)] : 0.0f;
          }
        }
      }
    }
  }
  pos_ += n;
  return true;
}

Dataset synthetic(std::int64_t n, std::int64_t num_classes, std::uint64_t seed, Split split) {
  if (n < 0 || num_classes <= 0 || num_classes > 256) throw UsageError("synthetic: bad size or class count");
  Dataset d;
  d.split = split;
  d.num_classes = num_classes;
  d.labels.resize(static_cast<std::size_t>(n));
  d.images.resize(static_cast<std::size_t>(n * kImageBytes));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(0, 90);
  std::uniform_int_distribution<int> jitter(-3, 3);
  std::uniform_int_distribution<int> anywhere(2, 29);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto hue_color = [](double hue) {
    return std::array<double, 3>{0.5 + 0.5 * std::cos(hue), 0.5 + 0.5 * std::cos(hue - 2.094),
                                 0.5 + 0.5 * std::cos(hue + 2.094)};
  };
  for (std::int64_t i = 0; i < n; ++i) {
    const auto k = i % num_classes;
    d.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(k);
    // class color on a hue wheel, blob center on a 4x4 grid of cells, plus a
    // distractor blob of random color and position in half of the images
    const auto color = hue_color(2.0 * M_PI * static_cast<double>(k) / static_cast<double>(num_classes));
    const auto cy = 4 + 8 * ((k / 4) % 4) + jitter(rng);
    const auto cx = 4 + 8 * (k % 4) + jitter(rng);
    const bool distract = unit(rng) < 0.5;
    const auto dcolor = hue_color(2.0 * M_PI * unit(rng));
    const auto dy = anywhere(rng), dx = anywhere(rng);
    auto* img = d.images.data() + i * kImageBytes;
    for (std::int64_t y = 0; y < kImageSide; ++y) {
      for (std::int64_t x = 0; x < kImageSide; ++x) {
        const double blob = std::exp(-static_cast<double>((y - cy) * (y - cy) + (x - cx) * (x - cx)) / 12.0);
        const double other =
            distract ? std::exp(-static_cast<double>((y - dy) * (y - dy) + (x - dx) * (x - dx)) / 12.0) : 0.0;
        for (std::int64_t c = 0; c < 3; ++c) {
          const auto ch = static_cast<std::size_t>(c);
          const double v = 30.0 + 120.0 * blob * color[ch] + 120.0 * other * dcolor[ch] + noise(rng);
          img[(c * kImageSide + y) * kImageSide + x] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  // shuffle so that head(n) stays balanced but record order is not periodic
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset s = d;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto src = perm[static_cast<std::size_t>(i)];
    s.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(src)];
    std::copy(d.images.begin() + src * kImageBytes, d.images.begin() + (src + 1) * kImageBytes,
              s.images.begin() + i * kImageBytes);
  }
  return s;
}

}  // namespace cnx
