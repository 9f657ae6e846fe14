#pragma once

// Training-data construction: crop a ground-truth patch, take its skeleton as
// the content image, and build the style image by rotating and locally
// swapping 16x16 patches of the ground truth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "aprnet/image_io.hpp"
#include "aprnet/kernels.hpp"
#include "aprnet/layers.hpp"

namespace aprnet {

using Image = Tensor<float>;

struct TrainingTriplet {
  Image content;       // H x W x 1, {0, 1}
  Image style;         // H x W x 3
  Image ground_truth;  // H x W x 3
};

// ---------------------------------------------------------------------------
// Grayscale and adaptive binarization

inline Image to_gray(const Image& img) {
  if (img.c() == 1) return img;
  if (img.c() != 3) throw ShapeError("to_gray: expected 1 or 3 channels, got " + to_string(img.shape()));
  Image g(Shape{img.h(), img.w(), 1});
  for (std::size_t p = 0; p < img.h() * img.w(); ++p) {
    g[p] = 0.299f * img[3 * p] + 0.587f * img[3 * p + 1] + 0.114f * img[3 * p + 2];
  }
  return g;
}

/// Foreground (1) where intensity < mean of the clipped window - offset.
inline Image binarize_adaptive(const Image& img, std::size_t window = 31, double offset = 0.06) {
  if (window == 0) throw DomainError("binarize_adaptive: window must be positive");
  const Image g = to_gray(img);
  const std::size_t H = g.h(), W = g.w();
  // Summed-area table in double.
  std::vector<double> sat((H + 1) * (W + 1), 0.0);
  for (std::size_t y = 0; y < H; ++y) {
    double row = 0;
    for (std::size_t x = 0; x < W; ++x) {
      row += g[y * W + x];
      sat[(y + 1) * (W + 1) + x + 1] = sat[y * (W + 1) + x + 1] + row;
    }
  }
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  Image mask(Shape{H, W, 1});
  for (std::size_t y = 0; y < H; ++y) {
    const auto y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r));
    const std::size_t y1 = std::min(H, y + static_cast<std::size_t>(r) + 1);
    for (std::size_t x = 0; x < W; ++x) {
      const auto x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(x) - r));
      const std::size_t x1 = std::min(W, x + static_cast<std::size_t>(r) + 1);
      const double s = sat[y1 * (W + 1) + x1] - sat[y0 * (W + 1) + x1] - sat[y1 * (W + 1) + x0] +
                       sat[y0 * (W + 1) + x0];
      const double mean = s / static_cast<double>((y1 - y0) * (x1 - x0));
      mask[y * W + x] = static_cast<double>(g[y * W + x]) < mean - offset ? 1.0f : 0.0f;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Zhang-Suen thinning

namespace detail {

/// Neighbour bits, P2..P9 clockwise from north: bit 0 = P2 (N), 1 = P3 (NE),
/// 2 = P4 (E), 3 = P5 (SE), 4 = P6 (S), 5 = P7 (SW), 6 = P8 (W), 7 = P9 (NW).
inline std::array<std::array<bool, 256>, 2> zhang_suen_tables() {
  std::array<std::array<bool, 256>, 2> lut{};
  for (unsigned code = 0; code < 256; ++code) {
    auto p = [code](int k) { return (code >> (k - 2)) & 1u; };  // p(2)..p(9)
    int b = 0;
    for (int k = 2; k <= 9; ++k) b += static_cast<int>(p(k));
    int a = 0;
    for (int k = 2; k <= 9; ++k) {
      const int next = k == 9 ? 2 : k + 1;
      if (p(k) == 0 && p(next) == 1) ++a;
    }
    const bool base = b >= 2 && b <= 6 && a == 1;
    lut[0][code] = base && p(2) * p(4) * p(6) == 0 && p(4) * p(6) * p(8) == 0;
    lut[1][code] = base && p(2) * p(4) * p(8) == 0 && p(2) * p(6) * p(8) == 0;
  }
  return lut;
}

}  // namespace detail

/// Thins a binary mask to a 1-pixel-wide skeleton; iterates both
/// sub-iterations until neither deletes a pixel.
inline Image skeletonize(const Image& mask) {
  if (mask.c() != 1) throw ShapeError("skeletonize: expected a single-channel mask");
  static const auto lut = detail::zhang_suen_tables();
  const std::size_t H = mask.h(), W = mask.w();
  std::vector<std::uint8_t> img(H * W);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = mask[i] > 0.5f ? 1 : 0;
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> unsigned {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) return 0;
    return img[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
  };
  std::vector<std::size_t> kill;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      kill.clear();
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          if (!img[y * W + x]) continue;
          const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
          const unsigned code = at(yy - 1, xx) | at(yy - 1, xx + 1) << 1 | at(yy, xx + 1) << 2 |
                                at(yy + 1, xx + 1) << 3 | at(yy + 1, xx) << 4 |
                                at(yy + 1, xx - 1) << 5 | at(yy, xx - 1) << 6 |
                                at(yy - 1, xx - 1) << 7;
          if (lut[static_cast<std::size_t>(pass)][code]) kill.push_back(y * W + x);
        }
      }
      for (auto i : kill) img[i] = 0;
      changed = changed || !kill.empty();
    }
  }
  Image out(Shape{H, W, 1});
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i];
  return out;
}

// ---------------------------------------------------------------------------
// Resize + crop

/// Area-averages when shrinking by at least 2x, bilinear otherwise.
inline Image resize_image(const Image& img, std::size_t h, std::size_t w) {
  if (h * 2 <= img.h() && w * 2 <= img.w()) return avg_pool_to(img, h, w);
  return resize_bilinear(img, h, w);
}

/// Scales to height target_h keeping aspect ratio, then takes a random
/// crop_w-wide window. Narrow images are edge-replicated horizontally.
template <class Gen>
Image resize_keep_aspect_then_crop(const Image& img, Gen& rng, std::size_t target_h = 128,
                                   std::size_t crop_w = 384) {
  if (img.h() == 0 || img.w() == 0) throw ShapeError("resize_keep_aspect_then_crop: empty image");
  const double scale = static_cast<double>(target_h) / static_cast<double>(img.h());
  const auto new_w = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(img.w()) * scale)));
  Image resized = resize_image(img, target_h, new_w);
  if (new_w < crop_w) {
    Image padded(Shape{target_h, crop_w, img.c()});
    const std::size_t left = (crop_w - new_w) / 2;
    for (std::size_t y = 0; y < target_h; ++y) {
      for (std::size_t x = 0; x < crop_w; ++x) {
        const std::size_t sx = x < left ? 0 : std::min(new_w - 1, x - left);
        for (std::size_t ch = 0; ch < img.c(); ++ch) padded(y, x, ch) = resized(y, sx, ch);
      }
    }
    return padded;
  }
  std::uniform_int_distribution<std::size_t> pick(0, new_w - crop_w);
  const std::size_t x0 = pick(rng);
  Image out(Shape{target_h, crop_w, img.c()});
  for (std::size_t y = 0; y < target_h; ++y) {
    const float* src = &resized(y, x0, 0);
    std::copy(src, src + crop_w * img.c(), &out(y, 0, 0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single Crop patch shuffling

struct ShufflePolicy {
  bool rotate = true;
  double swap_probability = 0.5;
};

/// rotation[i]: quarter turns applied to source patch i. partner[i]: patch
/// swapped with i, or -1.
struct ShuffleRecord {
  std::size_t patch = 16;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<int> rotation;
  std::vector<int> partner;
};

/// Copies a size x size patch rotated clockwise by `quarter_turns` * 90 deg.
inline void blit_rotated(const Image& src, std::size_t sy, std::size_t sx, Image& dst,
                         std::size_t dy, std::size_t dx, std::size_t size, int quarter_turns) {
  const std::size_t C = src.c();
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      std::size_t py = y, px = x;
      // Destination (y, x) reads the source position rotated back.
      for (int r = 0; r < ((quarter_turns % 4) + 4) % 4; ++r) {
        const std::size_t ny = size - 1 - px;
        px = py;
        py = ny;
      }
      for (std::size_t ch = 0; ch < C; ++ch) dst(dy + y, dx + x, ch) = src(sy + py, sx + px, ch);
    }
  }
}

template <class Gen>
ShuffleRecord sample_shuffle(std::size_t grid_h, std::size_t grid_w, std::size_t patch, Gen& rng,
                             const ShufflePolicy& policy = {}) {
  ShuffleRecord rec;
  rec.patch = patch;
  rec.grid_h = grid_h;
  rec.grid_w = grid_w;
  const std::size_t n = grid_h * grid_w;
  rec.rotation.assign(n, 0);
  rec.partner.assign(n, -1);
  std::uniform_int_distribution<int> quarter(0, 3);
  if (policy.rotate) {
    for (auto& r : rec.rotation) r = quarter(rng);
  }
  if (policy.swap_probability <= 0) return rec;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution coin(std::min(1.0, policy.swap_probability));
  std::vector<std::size_t> free_nb;
  for (auto idx : order) {
    if (rec.partner[idx] >= 0) continue;
    if (!coin(rng)) continue;
    const auto gy = static_cast<std::ptrdiff_t>(idx / grid_w);
    const auto gx = static_cast<std::ptrdiff_t>(idx % grid_w);
    free_nb.clear();
    for (std::ptrdiff_t oy = -1; oy <= 1; ++oy) {
      for (std::ptrdiff_t ox = -1; ox <= 1; ++ox) {
        if (oy == 0 && ox == 0) continue;
        const auto ny = gy + oy, nx = gx + ox;
        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(grid_h) ||
            nx >= static_cast<std::ptrdiff_t>(grid_w)) {
          continue;
        }
        const auto nb = static_cast<std::size_t>(ny) * grid_w + static_cast<std::size_t>(nx);
        if (rec.partner[nb] < 0) free_nb.push_back(nb);
      }
    }
    if (free_nb.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, free_nb.size() - 1);
    const std::size_t other = free_nb[pick(rng)];
    rec.partner[idx] = static_cast<int>(other);
    rec.partner[other] = static_cast<int>(idx);
  }
  return rec;
}

/// Applies a shuffle record: source patch i, rotated, lands at partner[i]
/// (or stays at i).
inline Image apply_shuffle(const Image& img, const ShuffleRecord& rec) {
  const std::size_t P = rec.patch;
  if (img.h() != rec.grid_h * P || img.w() != rec.grid_w * P) {
    throw ShapeError("apply_shuffle: record does not match image " + to_string(img.shape()));
  }
  Image out(img.shape());
  for (std::size_t i = 0; i < rec.grid_h * rec.grid_w; ++i) {
    const std::size_t dest = rec.partner[i] >= 0 ? static_cast<std::size_t>(rec.partner[i]) : i;
    blit_rotated(img, (i / rec.grid_w) * P, (i % rec.grid_w) * P, out, (dest / rec.grid_w) * P,
                 (dest % rec.grid_w) * P, P, rec.rotation[i]);
  }
  return out;
}

struct SingleCropResult {
  Image style;
  ShuffleRecord record;
};

template <class Gen>
SingleCropResult single_crop(const Image& ground_truth, Gen& rng, std::size_t patch = 16,
                             const ShufflePolicy& policy = {}) {
  if (patch == 0) throw DomainError("single_crop: patch size must be positive");
  if (ground_truth.h() % patch != 0 || ground_truth.w() % patch != 0 || ground_truth.empty()) {
    throw ShapeError("single_crop: image " + to_string(ground_truth.shape()) +
                     " is not divisible into " + std::to_string(patch) + "x" +
                     std::to_string(patch) + " patches");
  }
  SingleCropResult r;
  r.record = sample_shuffle(ground_truth.h() / patch, ground_truth.w() / patch, patch, rng, policy);
  r.style = apply_shuffle(ground_truth, r.record);
  return r;
}

// ---------------------------------------------------------------------------
// Triplets

struct TripletOptions {
  std::size_t height = 128;
  std::size_t width = 384;
  std::size_t patch = 16;
  std::size_t binarize_window = 31;
  double binarize_offset = 0.06;
  ShufflePolicy policy{};
};

/// Skeleton of the binarized ground truth.
inline Image extract_skeleton(const Image& gt, const TripletOptions& opt = {}) {
  return skeletonize(binarize_adaptive(gt, opt.binarize_window, opt.binarize_offset));
}

template <class Gen>
TrainingTriplet make_triplet(const Image& source, Gen& rng, const TripletOptions& opt = {}) {
  TrainingTriplet t;
  t.ground_truth = resize_keep_aspect_then_crop(source, rng, opt.height, opt.width);
  t.content = extract_skeleton(t.ground_truth, opt);
  t.style = single_crop(t.ground_truth, rng, opt.patch, opt.policy).style;
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic text-line corpus: dark random polylines over smoothly varying
// coloured backgrounds.

namespace detail {

inline float segment_distance(float px, float py, float ax, float ay, float bx, float by) {
  const float vx = bx - ax, vy = by - ay;
  const float len2 = vx * vx + vy * vy;
  float t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0f;
  t = std::clamp(t, 0.0f, 1.0f);
  const float dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

template <class Gen>
Image synthetic_text_line(Gen& rng, std::size_t height, std::size_t width) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(Shape{height, width, 3});
  // Background: horizontal colour ramp between two light colours plus a
  // low-frequency blotch pattern.
  std::array<float, 3> c0{}, c1{};
  for (int ch = 0; ch < 3; ++ch) {
    c0[ch] = 0.45f + 0.55f * u(rng);
    c1[ch] = 0.45f + 0.55f * u(rng);
  }
  const float fx = 1.0f + 3.0f * u(rng), fy = 0.5f + 1.5f * u(rng), ph = 6.2832f * u(rng);
  const float amp = 0.12f * u(rng);
  const float H = static_cast<float>(height), W = static_cast<float>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const float t = static_cast<float>(x) / std::max(1.0f, W - 1);
      const float wave = amp * std::sin(6.2832f * (fx * t + fy * static_cast<float>(y) / H) + ph);
      for (int ch = 0; ch < 3; ++ch) {
        img(y, x, static_cast<std::size_t>(ch)) = std::clamp(c0[ch] + (c1[ch] - c0[ch]) * t + wave, 0.0f, 1.0f);
      }
    }
  }
  // Strokes.
  std::array<float, 3> ink{};
  for (auto& v : ink) v = 0.25f * u(rng);
  const float thickness = std::max(1.6f, H / 14.0f) * (0.8f + 0.4f * u(rng));
  const auto strokes = static_cast<std::size_t>(std::max(2.0f, W / (1.5f * H))) + 1;
  std::vector<std::array<float, 4>> segs;
  for (std::size_t s = 0; s < strokes; ++s) {
    const float cx = W * (static_cast<float>(s) + 0.5f) / static_cast<float>(strokes);
    float px = cx + (u(rng) - 0.5f) * H * 0.3f;
    float py = H * (0.25f + 0.5f * u(rng));
    const int verts = 2 + static_cast<int>(u(rng) * 3);
    for (int v = 0; v < verts; ++v) {
      const float nx = std::clamp(cx + (u(rng) - 0.5f) * H * 0.8f, 1.0f, W - 2);
      const float ny = std::clamp(H * (0.2f + 0.6f * u(rng)), 1.0f, H - 2);
      segs.push_back({px, py, nx, ny});
      px = nx;
      py = ny;
    }
  }
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      float d = 1e9f;
      const float fxp = static_cast<float>(x) + 0.5f, fyp = static_cast<float>(y) + 0.5f;
      for (const auto& s : segs) d = std::min(d, detail::segment_distance(fxp, fyp, s[0], s[1], s[2], s[3]));
      const float cover = std::clamp(thickness * 0.5f - d + 0.5f, 0.0f, 1.0f);
      if (cover <= 0) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img(y, x, ch) = img(y, x, ch) * (1 - cover) + ink[ch] * cover;
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// Dataset directories: <root>/{content,style,gt}/%06d.png + manifest.txt

inline std::string triplet_filename(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.png", index);
  return buf;
}

inline void write_triplet(const std::filesystem::path& root, std::size_t index,
                          const TrainingTriplet& t) {
  const auto name = triplet_filename(index);
  save_png(root / "content" / name, t.content);
  save_png(root / "style" / name, t.style);
  save_png(root / "gt" / name, t.ground_truth);
}

/// Loads every triplet under root, in file-name order.
inline std::vector<TrainingTriplet> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root / "gt")) throw IoError("dataset " + root.string() + " has no gt/ directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root / "gt")) {
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<TrainingTriplet> out;
  for (const auto& n : names) {
    TrainingTriplet t;
    t.ground_truth = load_png(root / "gt" / n);
    t.style = load_png(root / "style" / n);
    t.content = load_skeleton_png(root / "content" / n);
    out.push_back(std::move(t));
  }
  if (out.empty()) throw IoError("dataset " + root.string() + " contains no triplets");
  return out;
}

struct DatagenOptions {
  std::string source = "synthetic:8";  // directory of PNGs or synthetic:N
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t count = 8;
  TripletOptions triplet{};
};

/// Writes `count` triplets plus manifest.txt ("index source seed" per line).
/// Triplet i uses its own RNG stream seeded with seed + i.
inline void generate_dataset(const DatagenOptions& opt) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  bool synthetic = false;
  if (opt.source.rfind("synthetic", 0) == 0) {
    synthetic = true;
  } else {
    if (!fs::is_directory(opt.source)) throw IoError("source directory not found: " + opt.source);
    for (const auto& e : fs::directory_iterator(opt.source)) {
      if (e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no PNG files in " + opt.source);
  }
  fs::create_directories(opt.out);
  std::ofstream manifest(opt.out / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in " + opt.out.string());
  for (std::size_t i = 0; i < opt.count; ++i) {
    const std::uint64_t seed = opt.seed + i;
    Rng rng(seed);
    Image source;
    std::string label;
    if (synthetic) {
      std::uniform_real_distribution<double> stretch(1.0, 1.5);
      const auto w = static_cast<std::size_t>(static_cast<double>(opt.triplet.width) * stretch(rng));
      source = synthetic_text_line(rng, opt.triplet.height, w);
      label = "synthetic";
    } else {
      const auto& f = files[i % files.size()];
      source = load_png(f);
      label = f.filename().string();
    }
    const auto t = make_triplet(source, rng, opt.triplet);
    write_triplet(opt.out, i, t);
    manifest << i << " " << label << " " << seed << "\n";
  }
}

}  // namespace aprnet
