#include "npc/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "npc/binio.hpp"
#include "npc/random.hpp"

namespace npc {

namespace {

constexpr std::uint8_t kDatasetVersion = 1;

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

void check_same_shape(const Grid& x, const Grid& y) {
  require(x.shape() == y.shape(), ErrorCode::ShapeMismatch, "grids differ in shape");
}

}  // namespace

Grid::Grid(Shape shape, std::vector<std::uint8_t> data) : shape_(shape), data_(std::move(data)) {
  require(shape.width > 0 && shape.height > 0, ErrorCode::InvalidArgument, "grid must have positive extent");
  require(shape.channels == 1 || shape.channels == 3, ErrorCode::InvalidArgument, "channels must be 1 or 3");
  require(data_.size() == shape.size(), ErrorCode::ShapeMismatch, "data length does not match width*height*channels");
}

Grid::Grid(Shape shape) : Grid(shape, std::vector<std::uint8_t>(shape.size(), 0)) {}

void Dataset::validate() const {
  require(class_count >= 1, ErrorCode::InvalidArgument, "class_count must be positive");
  if (!items.empty()) {
    const Shape s = items.front().shape();
    for (const auto& g : items) require(g.shape() == s, ErrorCode::ShapeMismatch, "dataset items differ in shape");
  }
  if (labels) {
    require(labels->size() == items.size(), ErrorCode::InvalidArgument, "label count differs from item count");
    for (auto l : *labels) require(l < class_count, ErrorCode::InvalidArgument, "label out of range");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_count = class_count;
  out.items.reserve(indices.size());
  if (labels) out.labels.emplace();
  for (auto i : indices) {
    out.items.push_back(items.at(i));
    if (labels) out.labels->push_back((*labels)[i]);
  }
  return out;
}

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::avg: return "avg";
    case Aggregation::min: return "min";
    case Aggregation::max: return "max";
    case Aggregation::concat: return "concat";
    case Aggregation::gs_avg: return "gs_avg";
  }
  return "?";
}

Aggregation parse_aggregation(std::string_view name) {
  for (auto a : {Aggregation::avg, Aggregation::min, Aggregation::max, Aggregation::concat, Aggregation::gs_avg})
    if (to_string(a) == name) return a;
  throw Error(ErrorCode::InvalidArgument, "unknown aggregation '" + std::string(name) + "'");
}

AggregateInput AggregateInput::pair(Grid a, Grid b) {
  check_same_shape(a, b);
  return {Kind::ordered_pair, std::move(a), std::move(b)};
}

// --- NPCD file format --------------------------------------------------------

std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  d.validate();
  const Shape s = d.empty() ? Shape{1, 1, 1} : d.shape();
  require(s.width <= 0xFFFF && s.height <= 0xFFFF, ErrorCode::InvalidArgument, "grid too large for NPCD");
  binio::Writer w;
  w.magic("NPCD");
  w.u8(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(s.width));
  w.u16(static_cast<std::uint16_t>(s.height));
  w.u8(static_cast<std::uint8_t>(s.channels));
  w.u32(static_cast<std::uint32_t>(d.size()));
  w.u8(d.has_labels() ? 1 : 0);
  w.u16(d.class_count);
  for (const auto& g : d.items) w.raw(g.data());
  if (d.labels)
    for (auto l : *d.labels) w.u16(l);
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes);
  r.expect_magic("NPCD");
  const auto version = r.u8();
  require(version == kDatasetVersion, ErrorCode::MalformedFile, "unsupported NPCD version");
  Shape s;
  s.width = r.u16();
  s.height = r.u16();
  s.channels = r.u8();
  const auto count = r.u32();
  const auto has_labels = r.u8();
  Dataset d;
  d.class_count = r.u16();
  require(s.width > 0 && s.height > 0 && (s.channels == 1 || s.channels == 3), ErrorCode::MalformedFile,
          "invalid shape in header");
  require(has_labels <= 1, ErrorCode::MalformedFile, "has_labels must be 0 or 1");
  require(d.class_count >= 1, ErrorCode::MalformedFile, "class_count must be positive");
  const std::size_t payload = static_cast<std::size_t>(count) * s.size();
  const std::size_t label_bytes = has_labels ? std::size_t{count} * 2 : 0;
  require(r.remaining() == payload + label_bytes, ErrorCode::MalformedFile, "payload length does not match header");
  d.items.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto px = r.raw(s.size());
    d.items.emplace_back(s, std::vector<std::uint8_t>(px.begin(), px.end()));
  }
  if (has_labels) {
    d.labels.emplace();
    d.labels->reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto l = r.u16();
      require(l < d.class_count, ErrorCode::MalformedFile, "label exceeds class_count");
      d.labels->push_back(l);
    }
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(binio::read_file(path)); }

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  binio::write_file(path, encode_dataset(d));
}

// --- few-shot split -------------------------------------------------------------

FewShotSplit split_few_shot(const Dataset& d, const SplitSpec& s) {
  require(d.has_labels(), ErrorCode::InvalidArgument, "split requires a labelled dataset");
  require(s.shots_per_class > 0 && s.test_size > 0, ErrorCode::InvalidArgument, "shots and test size must be positive");
  d.validate();
  const std::size_t need = std::size_t{s.shots_per_class} * d.class_count + s.test_size;
  require(need <= d.size(), ErrorCode::InsufficientData, "dataset too small for requested split");

  std::vector<std::vector<std::size_t>> by_class(d.class_count);
  for (std::size_t i = 0; i < d.size(); ++i) by_class[(*d.labels)[i]].push_back(i);

  FewShotSplit out;
  std::vector<char> taken(d.size(), 0);
  for (std::uint16_t c = 0; c < d.class_count; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < s.shots_per_class)
      throw Error(ErrorCode::InsufficientData, "class " + std::to_string(c) + " has only " +
                                                   std::to_string(idx.size()) + " items");
    SplitMix64 rng(s.seed ^ c);
    shuffle(std::span(idx), rng);
    for (std::uint32_t k = 0; k < s.shots_per_class; ++k) {
      out.support_indices.push_back(idx[k]);
      taken[idx[k]] = 1;
    }
  }

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!taken[i]) pool.push_back(i);
  SplitMix64 rng(derive_seed(s.seed, 0x7E57));
  shuffle(std::span(pool), rng);
  out.test_indices.assign(pool.begin(), pool.begin() + s.test_size);
  out.unlabeled_indices.assign(pool.begin() + s.test_size, pool.end());
  std::sort(out.unlabeled_indices.begin(), out.unlabeled_indices.end());

  out.support = d.subset(out.support_indices);
  out.test = d.subset(out.test_indices);
  out.unlabeled = d.subset(out.unlabeled_indices);
  out.unlabeled.labels.reset();
  return out;
}

// --- synthetic data --------------------------------------------------------------

namespace {

constexpr double kStrokeJitter = 1.0;

struct Stroke {
  double x0, y0, x1, y1, width;
};

struct ClassProcess {
  std::vector<Stroke> strokes;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
};

double segment_distance2(const Stroke& s, double x, double y) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = s.x0 + t * dx - x, py = s.y0 + t * dy - y;
  return px * px + py * py;
}

double field(const ClassProcess& p, double x, double y) {
  double f = 0.0;
  for (const auto& s : p.strokes) f = std::max(f, std::exp(-segment_distance2(s, x, y) / (2.0 * s.width * s.width)));
  return f;
}

// Soft threshold: most of the canvas stays at zero, stroke cores saturate.
double intensity(double f) { return std::clamp((f - 0.3) * 2.2, 0.0, 1.0); }

ClassProcess draw_process(SplitMix64& rng, std::uint32_t width, std::uint32_t height) {
  ClassProcess p;
  const double scale = std::min(width, height) / 16.0;
  const int count = 2 + static_cast<int>(rng.below(2));
  for (int k = 0; k < count; ++k) {
    Stroke s;
    s.x0 = rng.uniform(0.2, 0.8) * width;
    s.y0 = rng.uniform(0.2, 0.8) * height;
    s.x1 = rng.uniform(0.2, 0.8) * width;
    s.y1 = rng.uniform(0.2, 0.8) * height;
    s.width = rng.uniform(0.9, 1.4) * scale;
    p.strokes.push_back(s);
  }
  for (auto& t : p.tint) t = rng.uniform(0.45, 1.0);
  return p;
}

std::vector<double> template_values(const ClassProcess& p, std::uint32_t width, std::uint32_t height) {
  std::vector<double> v(std::size_t{width} * height);
  for (std::uint32_t y = 0; y < height; ++y)
    for (std::uint32_t x = 0; x < width; ++x) v[std::size_t{y} * width + x] = intensity(field(p, x + 0.5, y + 0.5));
  return v;
}

bool acceptable(const std::vector<double>& t, const std::vector<std::vector<double>>& earlier) {
  const auto n = static_cast<double>(t.size());
  const auto lit = std::count_if(t.begin(), t.end(), [](double v) { return v > 0.5; });
  if (lit < 0.12 * n || lit > 0.4 * n) return false;
  for (const auto& e : earlier) {
    std::size_t differ = 0;
    for (std::size_t i = 0; i < t.size(); ++i) differ += std::abs(t[i] - e[i]) * 255.0 >= 16.0;
    if (differ < 0.25 * n) return false;
  }
  return true;
}

// Class c's template depends on classes < c: candidates are redrawn until they
// cover a plausible share of the canvas and stay clear of earlier templates.
std::vector<ClassProcess> class_processes(std::uint32_t count, std::uint32_t width, std::uint32_t height,
                                          std::uint64_t seed) {
  std::vector<ClassProcess> out;
  std::vector<std::vector<double>> templates;
  for (std::uint32_t c = 0; c < count; ++c) {
    SplitMix64 rng(derive_seed(seed, 0xC1A55ULL + c));
    ClassProcess p = draw_process(rng, width, height);
    auto t = template_values(p, width, height);
    for (int attempt = 0; attempt < 256 && !acceptable(t, templates); ++attempt) {
      p = draw_process(rng, width, height);
      t = template_values(p, width, height);
    }
    out.push_back(std::move(p));
    templates.push_back(std::move(t));
  }
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

// Per-item deformation: every stroke end moves independently and the pen width varies.
ClassProcess deform(const ClassProcess& p, std::uint32_t width, std::uint32_t height, SplitMix64& rng) {
  const double reach = kStrokeJitter * std::min(width, height) / 16.0;
  ClassProcess q = p;
  for (auto& s : q.strokes) {
    s.x0 += rng.uniform(-reach, reach);
    s.y0 += rng.uniform(-reach, reach);
    s.x1 += rng.uniform(-reach, reach);
    s.y1 += rng.uniform(-reach, reach);
    s.width *= rng.uniform(0.85, 1.15);
  }
  return q;
}

Grid render(const ClassProcess& p, Shape shape, double shift_x, double shift_y, double gain, double noise,
            SplitMix64* rng) {
  Grid g(shape);
  for (std::uint32_t y = 0; y < shape.height; ++y) {
    for (std::uint32_t x = 0; x < shape.width; ++x) {
      const double v = intensity(field(p, x + 0.5 - shift_x, y + 0.5 - shift_y));
      for (std::uint32_t ch = 0; ch < shape.channels; ++ch) {
        const double tint = shape.channels == 3 ? p.tint[ch] : 1.0;
        double value = 255.0 * v * tint * gain;
        if (rng != nullptr && v > 0.0) value += noise * v * rng->normal();
        g[(std::size_t{y} * shape.width + x) * shape.channels + ch] = to_byte(value);
      }
    }
  }
  return g;
}

}  // namespace

Grid synth_template(std::uint32_t class_index, std::uint32_t width, std::uint32_t height, std::uint64_t seed,
                    std::uint32_t channels) {
  require(width >= 1 && height >= 1, ErrorCode::InvalidArgument, "synth extents must be positive");
  require(channels == 1 || channels == 3, ErrorCode::InvalidArgument, "channels must be 1 or 3");
  const auto processes = class_processes(class_index + 1, width, height, seed);
  return render(processes.back(), Shape{width, height, channels}, 0.0, 0.0, 1.0, 0.0, nullptr);
}

Dataset synth_generate(std::uint32_t class_count, std::uint32_t per_class, std::uint32_t width,
                       std::uint32_t height, std::uint64_t seed, std::uint32_t channels) {
  require(class_count >= 2, ErrorCode::InvalidArgument, "synth needs at least two classes");
  require(class_count <= 0xFFFF, ErrorCode::InvalidArgument, "too many classes");
  require(per_class >= 1 && width >= 1 && height >= 1, ErrorCode::InvalidArgument, "synth extents must be positive");
  require(channels == 1 || channels == 3, ErrorCode::InvalidArgument, "channels must be 1 or 3");

  const Shape shape{width, height, channels};
  const auto processes = class_processes(class_count, width, height, seed);

  Dataset d;
  d.class_count = static_cast<std::uint16_t>(class_count);
  d.labels.emplace();
  SplitMix64 rng(derive_seed(seed, 0x17E45));
  // Items are interleaved by class so that any prefix is roughly balanced.
  for (std::uint32_t i = 0; i < per_class; ++i) {
    for (std::uint32_t c = 0; c < class_count; ++c) {
      const double sx = rng.uniform(-1.5, 1.5);
      const double sy = rng.uniform(-1.5, 1.5);
      const double gain = rng.uniform(0.5, 1.1);
      const ClassProcess item = deform(processes[c], width, height, rng);
      d.items.push_back(render(item, shape, sx, sy, gain, 14.0, &rng));
      d.labels->push_back(static_cast<std::uint16_t>(c));
    }
  }
  return d;
}

// --- image transforms --------------------------------------------------------------

Grid to_greyscale(const Grid& g) {
  require(g.channels() == 3, ErrorCode::NotColor, "greyscale conversion needs 3 channels");
  Grid out(Shape{g.width(), g.height(), 1});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned r = g[3 * i], gr = g[3 * i + 1], b = g[3 * i + 2];
    // Integer form of round-half-up(0.299 R + 0.587 G + 0.114 B).
    out[i] = static_cast<std::uint8_t>((299 * r + 587 * gr + 114 * b + 500) / 1000);
  }
  return out;
}

AggregateInput aggregate(const Grid& x, const Grid& y, Aggregation method) {
  check_same_shape(x, y);
  if (method == Aggregation::concat) return AggregateInput::pair(x, y);
  if (method == Aggregation::gs_avg) {
    require(x.channels() == 3, ErrorCode::NotColor, "gs_avg needs 3-channel input");
    return aggregate(to_greyscale(x), to_greyscale(y), Aggregation::avg);
  }
  Grid out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned a = x[i], b = y[i];
    switch (method) {
      case Aggregation::avg: out[i] = static_cast<std::uint8_t>((a + b) >> 1); break;
      case Aggregation::min: out[i] = static_cast<std::uint8_t>(std::min(a, b)); break;
      case Aggregation::max: out[i] = static_cast<std::uint8_t>(std::max(a, b)); break;
      default: break;
    }
  }
  return AggregateInput::single(std::move(out));
}

}  // namespace npc
