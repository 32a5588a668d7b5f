// Synthetic task streams with a controllable shortcut cue.
//
// Every class owns a glyph: a seeded 7x7 binary stencil scaled into the
// image. The glyph shape is the intrinsic feature. On top of it each
// generator adds a cue that is correlated with the label for a `bias_ratio`
// fraction of the training samples:
//
//   color_shortcut      the glyph is painted in its class hue on a neutral
//                       background; otherwise in a uniformly random hue.
//   patch_background    the glyph is drawn in gray over a background that
//                       carries a few bright striped patches whose texture
//                       (hue + stripe orientation) belongs to the class;
//                       otherwise to a uniformly random class.
//
// Test splits per task: `biased` (cue always matches the class) and
// `unbiased` (cue independent of the class for color_shortcut; background
// removed for patch_background). patch_background also has `only_bg`
// (glyph removed).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "droptop/rng.hpp"
#include "droptop/tensor.hpp"

namespace droptop {

enum class Generator { color_shortcut, patch_background };
enum class TrainVariant { full, only_fg, only_bg };

inline const char* to_string(Generator g) {
  return g == Generator::color_shortcut ? "color_shortcut" : "patch_background";
}
inline const char* to_string(TrainVariant v) {
  switch (v) {
    case TrainVariant::only_fg: return "only_fg";
    case TrainVariant::only_bg: return "only_bg";
    default: return "full";
  }
}

struct StreamConfig {
  Generator generator = Generator::color_shortcut;
  std::size_t num_tasks = 2;
  std::size_t classes_per_task = 2;
  std::size_t samples_per_class = 500;
  std::size_t test_samples_per_class = 100;
  std::size_t image_size = 32;
  double bias_ratio = 0.95;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  // Tasks reuse the same class hues (class c takes the slot c mod
  // classes_per_task); otherwise every class gets its own hue.
  bool shared_hues = true;
  TrainVariant train_variant = TrainVariant::full;

  std::size_t total_classes() const { return num_tasks * classes_per_task; }

  void validate() const {
    if (classes_per_task < 2) throw std::invalid_argument("stream: classes_per_task must be at least 2");
    if (samples_per_class == 0) throw std::invalid_argument("stream: samples_per_class must be positive");
    if (test_samples_per_class == 0) throw std::invalid_argument("stream: test_samples_per_class must be positive");
    if (image_size < 8) throw std::invalid_argument("stream: image_size must be at least 8");
    if (!(bias_ratio >= 0.0 && bias_ratio <= 1.0)) throw std::invalid_argument("stream: bias_ratio must lie in [0, 1]");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("stream: noise_std must be non-negative");
    if (total_classes() > kPaletteSize) {
      throw std::invalid_argument("stream: " + std::to_string(total_classes()) + " classes exceed the " +
                                  std::to_string(kPaletteSize) + " distinguishable hues");
    }
  }

  static constexpr std::size_t kPaletteSize = 10;
};

struct Sample {
  std::vector<float> image;             // 3 x S x S in [0, 1]
  int label = 0;
  std::vector<std::uint8_t> shortcut_region;  // S x S, cue pixels
  std::vector<std::uint8_t> foreground;       // S x S, glyph pixels
  bool carries_shortcut = false;
  int cue_id = 0;  // hue index or texture class actually rendered
};

struct Task {
  std::vector<int> classes;
  std::vector<Sample> train;  // one-pass order
  std::vector<Sample> test_biased;
  std::vector<Sample> test_unbiased;
  std::vector<Sample> test_only_bg;  // patch_background only
};

struct TaskStream {
  StreamConfig config;
  std::vector<Task> tasks;
};

namespace stream_detail {

using Stencil = std::array<std::uint8_t, 49>;

inline std::array<float, 3> hue_rgb(std::size_t index) {
  // Evenly spaced, fully saturated hues.
  const double h = 360.0 * static_cast<double>(index) / static_cast<double>(StreamConfig::kPaletteSize);
  const double x = 1.0 - std::fabs(std::fmod(h / 60.0, 2.0) - 1.0);
  const int sector = static_cast<int>(h / 60.0) % 6;
  std::array<double, 3> rgb{};
  switch (sector) {
    case 0: rgb = {1, x, 0}; break;
    case 1: rgb = {x, 1, 0}; break;
    case 2: rgb = {0, 1, x}; break;
    case 3: rgb = {0, x, 1}; break;
    case 4: rgb = {x, 0, 1}; break;
    default: rgb = {1, 0, x}; break;
  }
  return {static_cast<float>(rgb[0]), static_cast<float>(rgb[1]), static_cast<float>(rgb[2])};
}

// Connected-looking random stencils, pairwise at least 10 cells apart.
inline std::vector<Stencil> make_glyphs(std::size_t count, std::uint64_t seed) {
  Rng rng(seed, "glyphs");
  std::vector<Stencil> glyphs;
  while (glyphs.size() < count) {
    Stencil s{};
    // Random walk strokes give glyph-like shapes.
    std::size_t r = 1 + rng.uniform_index(5), c = 1 + rng.uniform_index(5);
    for (int step = 0; step < 22; ++step) {
      s[r * 7 + c] = 1;
      switch (rng.uniform_index(4)) {
        case 0: r = r > 0 ? r - 1 : r + 1; break;
        case 1: r = r < 6 ? r + 1 : r - 1; break;
        case 2: c = c > 0 ? c - 1 : c + 1; break;
        default: c = c < 6 ? c + 1 : c - 1; break;
      }
    }
    const auto on = std::count(s.begin(), s.end(), 1);
    if (on < 12) continue;
    bool distinct = true;
    for (const auto& g : glyphs) {
      int diff = 0;
      for (std::size_t i = 0; i < 49; ++i) diff += g[i] != s[i];
      if (diff < 10) distinct = false;
    }
    if (distinct) glyphs.push_back(s);
  }
  return glyphs;
}

struct Canvas {
  std::size_t size;
  std::vector<float> pixels;  // 3 x S x S
  std::vector<std::uint8_t> fg;
  std::vector<std::uint8_t> cue;

  explicit Canvas(std::size_t s) : size(s), pixels(3 * s * s, 0.0f), fg(s * s, 0), cue(s * s, 0) {}

  void set(std::size_t y, std::size_t x, const std::array<float, 3>& rgb) {
    for (std::size_t ch = 0; ch < 3; ++ch) pixels[(ch * size + y) * size + x] = rgb[ch];
  }
  void fill(const std::array<float, 3>& rgb) {
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) set(y, x, rgb);
  }
};

// Glyph box is the largest multiple of 7 leaving a small margin; position
// jitters within that margin.
inline void stamp_glyph(Canvas& cv, const Stencil& g, const std::array<float, 3>& rgb, Rng& rng) {
  const std::size_t s = cv.size;
  const std::size_t box = std::max<std::size_t>(7, (s - std::max<std::size_t>(2, s / 8)) / 7 * 7);
  const std::size_t cell = box / 7;
  const std::size_t jitter = s / 8;
  const std::size_t base = (s - box) / 2;
  const std::size_t oy = base - std::min(base, jitter) + rng.uniform_index(2 * std::min(base, jitter) + 1);
  const std::size_t ox = base - std::min(base, jitter) + rng.uniform_index(2 * std::min(base, jitter) + 1);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t c = 0; c < 7; ++c) {
      if (!g[r * 7 + c]) continue;
      for (std::size_t dy = 0; dy < cell; ++dy)
        for (std::size_t dx = 0; dx < cell; ++dx) {
          const std::size_t y = oy + r * cell + dy, x = ox + c * cell + dx;
          if (y < s && x < s) {
            cv.set(y, x, rgb);
            cv.fg[y * s + x] = 1;
          }
        }
    }
}

// A few square patches with a striped texture owned by `texture_class`.
inline void stamp_patches(Canvas& cv, int texture_class, Rng& rng) {
  const std::size_t s = cv.size;
  const std::size_t patch = std::max<std::size_t>(3, s / 6);
  const auto rgb = hue_rgb(static_cast<std::size_t>(texture_class) % StreamConfig::kPaletteSize);
  const int orientation = texture_class % 4;  // 0: horizontal, 1: vertical, 2/3: diagonals
  const std::size_t count = 3;
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t y0 = rng.uniform_index(s - patch + 1);
    const std::size_t x0 = rng.uniform_index(s - patch + 1);
    for (std::size_t dy = 0; dy < patch; ++dy)
      for (std::size_t dx = 0; dx < patch; ++dx) {
        std::size_t phase = 0;
        switch (orientation) {
          case 0: phase = dy; break;
          case 1: phase = dx; break;
          case 2: phase = dx + dy; break;
          default: phase = dx + patch - dy; break;
        }
        const std::size_t y = y0 + dy, x = x0 + dx;
        cv.cue[y * s + x] = 1;
        cv.set(y, x, phase % 2 == 0 ? rgb : std::array<float, 3>{0.0f, 0.0f, 0.0f});
      }
  }
}

inline void add_noise(Canvas& cv, double std_dev, Rng& rng, const std::vector<std::uint8_t>* keep_zero = nullptr) {
  if (std_dev <= 0.0) return;
  const std::size_t plane = cv.size * cv.size;
  for (std::size_t i = 0; i < cv.pixels.size(); ++i) {
    const double n = rng.normal() * std_dev;
    if (keep_zero && (*keep_zero)[i % plane]) continue;
    cv.pixels[i] = static_cast<float>(std::clamp(cv.pixels[i] + n, 0.0, 1.0));
  }
}

// Class hues are spread evenly over the palette so the cue is easy to read.
inline std::size_t class_hue(const StreamConfig& cfg, int label) {
  const std::size_t n = cfg.shared_hues ? cfg.classes_per_task : cfg.total_classes();
  const std::size_t slot = static_cast<std::size_t>(label) % n;
  return slot * (StreamConfig::kPaletteSize / n);
}

enum class Render { full, only_fg, only_bg };

inline Sample render_color(const StreamConfig& cfg, const std::vector<Stencil>& glyphs, int label, double bias,
                           Rng& rng) {
  Canvas cv(cfg.image_size);
  cv.fill({0.25f, 0.25f, 0.25f});
  const std::size_t own = class_hue(cfg, label);
  const bool carries = rng.bernoulli(bias);
  const std::size_t hue = carries ? own : rng.uniform_index(StreamConfig::kPaletteSize);
  stamp_glyph(cv, glyphs[static_cast<std::size_t>(label)], hue_rgb(hue), rng);
  add_noise(cv, cfg.noise_std, rng);
  Sample s;
  s.label = label;
  s.carries_shortcut = carries;
  s.cue_id = static_cast<int>(hue);
  s.foreground = cv.fg;
  s.shortcut_region.assign(cv.fg.size(), 0);
  if (carries) s.shortcut_region = cv.fg;
  s.image = std::move(cv.pixels);
  return s;
}

inline Sample render_patch(const StreamConfig& cfg, const std::vector<Stencil>& glyphs, int label, double bias,
                           Render mode, Rng& rng) {
  const std::size_t s = cfg.image_size;
  Canvas cv(s);
  cv.fill({0.1f, 0.1f, 0.1f});
  const bool carries = rng.bernoulli(bias);
  const int texture = carries ? label : static_cast<int>(rng.uniform_index(cfg.total_classes()));
  stamp_patches(cv, texture, rng);
  stamp_glyph(cv, glyphs[static_cast<std::size_t>(label)], {0.6f, 0.6f, 0.6f}, rng);
  // Patch pixels under the glyph are foreground, not cue.
  for (std::size_t i = 0; i < s * s; ++i)
    if (cv.fg[i]) cv.cue[i] = 0;
  Sample out;
  out.label = label;
  out.cue_id = texture;
  out.foreground = cv.fg;
  if (mode == Render::only_fg) {
    std::vector<std::uint8_t> bg(s * s);
    for (std::size_t i = 0; i < s * s; ++i) bg[i] = !cv.fg[i];
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < s * s; ++i)
        if (bg[i]) cv.pixels[ch * s * s + i] = 0.0f;
    add_noise(cv, cfg.noise_std, rng, &bg);
    out.carries_shortcut = false;
    out.shortcut_region.assign(s * s, 0);
  } else if (mode == Render::only_bg) {
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < s * s; ++i)
        if (cv.fg[i]) cv.pixels[ch * s * s + i] = 0.0f;
    add_noise(cv, cfg.noise_std, rng, &cv.fg);
    out.carries_shortcut = carries;
    out.shortcut_region = carries ? cv.cue : std::vector<std::uint8_t>(s * s, 0);
  } else {
    add_noise(cv, cfg.noise_std, rng);
    out.carries_shortcut = carries;
    out.shortcut_region = carries ? cv.cue : std::vector<std::uint8_t>(s * s, 0);
  }
  out.image = std::move(cv.pixels);
  return out;
}

}  // namespace stream_detail

// Builds all tasks. Class ids are task-major: task t owns classes
// [t * classes_per_task, (t + 1) * classes_per_task).
inline TaskStream generate_stream(const StreamConfig& cfg) {
  cfg.validate();
  using namespace stream_detail;
  const auto glyphs = make_glyphs(cfg.total_classes(), cfg.seed);
  TaskStream stream{cfg, {}};
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
    Rng rng(cfg.seed, "data/task" + std::to_string(t));
    Task task;
    for (std::size_t k = 0; k < cfg.classes_per_task; ++k) task.classes.push_back(static_cast<int>(t * cfg.classes_per_task + k));

    auto make = [&](int label, double bias, Render mode) {
      if (cfg.generator == Generator::color_shortcut) return render_color(cfg, glyphs, label, bias, rng);
      return render_patch(cfg, glyphs, label, bias, mode, rng);
    };
    const Render train_mode = cfg.train_variant == TrainVariant::only_fg   ? Render::only_fg
                              : cfg.train_variant == TrainVariant::only_bg ? Render::only_bg
                                                                           : Render::full;
    for (int label : task.classes)
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i) task.train.push_back(make(label, cfg.bias_ratio, train_mode));
    // Seeded one-pass order.
    for (std::size_t i = task.train.size(); i > 1; --i) std::swap(task.train[i - 1], task.train[rng.uniform_index(i)]);

    for (int label : task.classes)
      for (std::size_t i = 0; i < cfg.test_samples_per_class; ++i) {
        task.test_biased.push_back(make(label, 1.0, Render::full));
        if (cfg.generator == Generator::color_shortcut) {
          task.test_unbiased.push_back(make(label, 0.0, Render::full));
        } else {
          task.test_unbiased.push_back(make(label, 1.0, Render::only_fg));
          task.test_only_bg.push_back(make(label, 1.0, Render::only_bg));
        }
      }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

// Stacks samples [begin, end) into an N x 3 x S x S tensor.
inline Tensor stack_images(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) {
  if (begin >= end || end > samples.size()) throw std::out_of_range("stack_images: empty or invalid range");
  const std::size_t per = samples[begin].image.size();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(per / 3))));
  std::vector<float> data;
  data.reserve((end - begin) * per);
  for (std::size_t i = begin; i < end; ++i) data.insert(data.end(), samples[i].image.begin(), samples[i].image.end());
  return Tensor({end - begin, 3, side, side}, std::move(data));
}

// Raw float32 tensors per split plus manifest.csv
// (index,label,task,carries_shortcut,split,offset).
inline void dump_stream(const TaskStream& stream, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "index,label,task,carries_shortcut,split,offset\n";
  std::size_t index = 0;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const auto& task = stream.tasks[t];
    const std::pair<const char*, const std::vector<Sample>*> splits[] = {{"train", &task.train},
                                                                          {"test_biased", &task.test_biased},
                                                                          {"test_unbiased", &task.test_unbiased},
                                                                          {"test_only_bg", &task.test_only_bg}};
    for (const auto& [name, samples] : splits) {
      if (samples->empty()) continue;
      const std::string file = "task" + std::to_string(t) + "_" + name + ".f32";
      std::ofstream bin(dir / file, std::ios::binary);
      std::size_t offset = 0;
      for (const auto& s : *samples) {
        bin.write(reinterpret_cast<const char*>(s.image.data()), static_cast<std::streamsize>(s.image.size() * sizeof(float)));
        manifest << index++ << ',' << s.label << ',' << t << ',' << (s.carries_shortcut ? 1 : 0) << ',' << name << ','
                 << offset << '\n';
        offset += s.image.size() * sizeof(float);
      }
    }
  }
}

}  // namespace droptop
