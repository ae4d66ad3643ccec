#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "npc/error.hpp"

namespace npc {

struct Shape {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;

  std::size_t size() const noexcept { return std::size_t{width} * height * channels; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// An image of unsigned 8-bit samples, row-major and channel-interleaved.
class Grid {
 public:
  Grid() = default;
  Grid(Shape shape, std::vector<std::uint8_t> data);
  /// A zero-filled grid.
  explicit Grid(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::uint32_t width() const noexcept { return shape_.width; }
  std::uint32_t height() const noexcept { return shape_.height; }
  std::uint32_t channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }
  std::uint8_t operator[](std::size_t i) const noexcept { return data_[i]; }
  std::uint8_t& operator[](std::size_t i) noexcept { return data_[i]; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> data_;
};

/// Items sharing one shape, optionally labelled with class indices.
struct Dataset {
  std::vector<Grid> items;
  std::optional<std::vector<std::uint16_t>> labels;
  std::uint16_t class_count = 1;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
  bool has_labels() const noexcept { return labels.has_value(); }
  Shape shape() const { return items.empty() ? Shape{} : items.front().shape(); }

  /// Throws ShapeMismatch / InvalidArgument if the dataset invariants do not hold.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitSpec {
  std::uint32_t shots_per_class = 5;
  std::uint32_t test_size = 100;
  std::uint64_t seed = 0;
};

struct FewShotSplit {
  Dataset unlabeled;
  Dataset support;
  Dataset test;
  std::vector<std::size_t> unlabeled_indices;
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> test_indices;
};

enum class Aggregation { avg, min, max, concat, gs_avg };

std::string_view to_string(Aggregation a);
Aggregation parse_aggregation(std::string_view name);

/// Output of an aggregation: either one combined Grid or an ordered pair
/// that codecs compress one after the other.
struct AggregateInput {
  enum class Kind { single, ordered_pair };

  Kind kind = Kind::single;
  Grid first;
  std::optional<Grid> second;

  static AggregateInput single(Grid g) { return {Kind::single, std::move(g), std::nullopt}; }
  static AggregateInput pair(Grid a, Grid b);
  bool is_pair() const noexcept { return kind == Kind::ordered_pair; }
};

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_dataset(const Dataset& d);

FewShotSplit split_few_shot(const Dataset& d, const SplitSpec& s);

/// Synthetic classes: each class is a random smooth template; items add a random
/// sub-pixel shift, a gain jitter and pixel noise on top of it.
Dataset synth_generate(std::uint32_t class_count, std::uint32_t per_class, std::uint32_t width,
                       std::uint32_t height, std::uint64_t seed, std::uint32_t channels = 1);

/// The noise-free template of one class, as used by synth_generate.
Grid synth_template(std::uint32_t class_index, std::uint32_t width, std::uint32_t height,
                    std::uint64_t seed, std::uint32_t channels = 1);

/// BT.601 luma: round(0.299 R + 0.587 G + 0.114 B).
Grid to_greyscale(const Grid& g);
AggregateInput aggregate(const Grid& x, const Grid& y, Aggregation method);

}  // namespace npc
