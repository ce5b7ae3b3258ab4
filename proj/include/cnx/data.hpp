#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnx/tensor.hpp"

namespace cnx {

enum class Split { kTrain, kTest };

inline constexpr std::int64_t kImageChannels = 3;
inline constexpr std::int64_t kImageSide = 32;
inline constexpr std::int64_t kImageBytes = kImageChannels * kImageSide * kImageSide;
inline constexpr std::int64_t kCifarRecordBytes = 1 + kImageBytes;
inline constexpr std::int64_t kCifarClasses = 10;

// uint8 images [n, 3, 32, 32] (R plane, then G, then B) with labels in [0, num_classes).
struct Dataset {
  std::vector<std::uint8_t> images;
  std::vector<std::uint8_t> labels;
  Split split = Split::kTrain;
  std::int64_t num_classes = kCifarClasses;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::span<const std::uint8_t> image(std::int64_t i) const;
  // First n records (or all, if n >= size()).
  Dataset head(std::int64_t n) const;
  void validate() const;
};

struct Cifar10 {
  Dataset train;
  Dataset test;
};

// One binary batch file: records of 1 label byte + 3072 pixel bytes.
Dataset read_cifar_batch(const std::filesystem::path& file, Split split, std::optional<std::int64_t> expected_records);
void write_cifar_batch(const std::filesystem::path& file, const Dataset& ds);

// data_batch_1..5.bin (10000 records each) and test_batch.bin (10000).
Cifar10 load_cifar10(const std::filesystem::path& dir);

struct NormalizationConfig {
  std::array<float, 3> mean{0.4914f, 0.4822f, 0.4465f};
  std::array<float, 3> std{0.2470f, 0.2435f, 0.2616f};

  static NormalizationConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// x / 255 then (x - mean_c) / std_c, as float32 [n, 3, 32, 32].
Tensor normalize(std::span<const std::uint8_t> images, const NormalizationConfig& cfg);
float normalize_pixel(std::uint8_t v, int channel, const NormalizationConfig& cfg);
float denormalize_pixel(float v, int channel, const NormalizationConfig& cfg);

struct Augmentation {
  bool horizontal_flip = false;
  int pad_crop = 0;  // pixels of zero padding before a random 32x32 crop
};

struct Batch {
  Tensor images;
  std::vector<std::int64_t> labels;
  std::vector<std::int64_t> indices;
};

// Deterministic single-consumer batch stream. With a shuffle seed the order
// is a seeded permutation; augmentation draws from the same generator. The
// last partial batch is kept.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::int64_t batch_size, std::optional<std::uint64_t> shuffle_seed,
                NormalizationConfig norm = {}, Augmentation aug = {});

  bool next(Batch& out);
  const std::vector<std::int64_t>& order() const { return order_; }
  std::int64_t num_batches() const;

 private:
  const Dataset& ds_;
  std::int64_t batch_size_;
  NormalizationConfig norm_;
  Augmentation aug_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> order_;
  std::int64_t pos_ = 0;
};

// Class-dependent colored blobs plus uniform noise; balanced labels.
Dataset synthetic(std::int64_t n, std::int64_t num_classes, std::uint64_t seed, Split split = Split::kTrain);

}  // namespace cnx
