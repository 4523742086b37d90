#include "mnm/synthdata/generator.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <thread>

#include "mnm/common/error.h"

namespace mnm::synth {
namespace {

constexpr double kPi = std::numbers::pi;

// splitmix64 finalizer.
std::uint64_t Mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Box extents are +-2 sigma around the blob center.
constexpr double kBoxSigmas = 2.0;

struct Placement {
  double cx, cy, radial;
};

bool BoxInside(double cx, double cy, double half_w, double half_h,
               const DatasetConfig& config) {
  return cx - half_w >= 1 && cy - half_h >= 1 &&
         cx + half_w <= static_cast<double>(config.image_width) - 1 &&
         cy + half_h <= static_cast<double>(config.image_height) - 1;
}

Placement PlaceAt(const BreastFrame& frame, double radial, double angle) {
  return {frame.nipple_x - radial * frame.extent * std::cos(angle),
          frame.nipple_y + radial * frame.extent * std::sin(angle), radial};
}

double DrawTexture(Label label, const DatasetConfig& config,
                   std::mt19937_64& rng) {
  return label == Label::kMalignant
             ? Uniform(rng, config.malignant_texture_min, config.malignant_texture_max)
             : Uniform(rng, config.benign_texture_min, config.benign_texture_max);
}

Finding MakeFinding(Label label, const DatasetConfig& config,
                    std::mt19937_64& rng) {
  const BreastFrame frame = FrameFor(config);
  const double w = static_cast<double>(config.image_width);
  const double sigma_x = Uniform(rng, config.sigma_min, config.sigma_max) * w;
  const double sigma_y = Uniform(rng, config.sigma_min, config.sigma_max) * w;
  const double half_w = kBoxSigmas * sigma_x, half_h = kBoxSigmas * sigma_y;

  Placement cc{};
  for (int attempt = 0;; ++attempt) {
    cc = PlaceAt(frame, Uniform(rng, 0.15, 0.8), Uniform(rng, -1.1, 1.1));
    if (BoxInside(cc.cx, cc.cy, half_w, half_h, config)) break;
    if (attempt > 1000) throw ConfigError("cannot place finding inside image");
  }
  // The other view shares the normalized radial coordinate up to jitter; the
  // angle is a distorted copy of the CC angle.
  std::normal_distribution<double> angle_noise(0.0, config.angular_jitter);
  const double cc_angle = std::atan2(cc.cy - frame.nipple_y, frame.nipple_x - cc.cx);
  Placement mlo{};
  for (int attempt = 0;; ++attempt) {
    const double radial = std::clamp(
        cc.radial + Uniform(rng, -config.radial_jitter, config.radial_jitter),
        0.05, 0.95);
    const double angle = 0.7 * cc_angle + 0.2 + angle_noise(rng);
    mlo = PlaceAt(frame, radial, angle);
    if (BoxInside(mlo.cx, mlo.cy, half_w, half_h, config)) break;
    if (attempt > 1000) throw ConfigError("cannot place finding inside image");
  }

  Finding f;
  f.label = label;
  f.box_cc = BBox::Make(cc.cx - half_w, cc.cy - half_h, cc.cx + half_w, cc.cy + half_h);
  f.box_mlo = BBox::Make(mlo.cx - half_w, mlo.cy - half_h, mlo.cx + half_w, mlo.cy + half_h);
  f.radial_cc = cc.radial;
  f.radial_mlo = mlo.radial;
  f.contrast = Uniform(rng, config.contrast_min, config.contrast_max);
  f.texture_cc = DrawTexture(label, config, rng);
  f.texture_mlo = DrawTexture(label, config, rng);
  const bool ambiguous = Uniform(rng, 0, 1) < config.ambiguity_fraction;
  const bool in_cc = Uniform(rng, 0, 1) < 0.5;
  if (label == Label::kMalignant && ambiguous) {
    f.ambiguous = in_cc ? AmbiguousView::kCC : AmbiguousView::kMLO;
    (in_cc ? f.texture_cc : f.texture_mlo) =
        DrawTexture(Label::kBenign, config, rng);
  }
  return f;
}

// Adds contrast * gaussian * (1 + texture * cos(stripe phase)).
void AddBlob(std::vector<double>& pixels, const DatasetConfig& config,
             double cx, double cy, double sigma_x, double sigma_y,
             double contrast, double texture, double orientation) {
  const std::size_t h = config.image_height, w = config.image_width;
  const double ux = std::cos(orientation), uy = std::sin(orientation);
  const double reach_x = 4 * sigma_x, reach_y = 4 * sigma_y;
  const double fy0 = std::max(0.0, std::floor(cy - reach_y));
  const double fy1 = std::min(static_cast<double>(h) - 1, std::ceil(cy + reach_y));
  const double fx0 = std::max(0.0, std::floor(cx - reach_x));
  const double fx1 = std::min(static_cast<double>(w) - 1, std::ceil(cx + reach_x));
  // Blobs centered far enough outside the image touch no pixel.
  if (fy1 < fy0 || fx1 < fx0) return;
  const auto y0 = static_cast<std::size_t>(fy0), y1 = static_cast<std::size_t>(fy1);
  const auto x0 = static_cast<std::size_t>(fx0), x1 = static_cast<std::size_t>(fx1);
  for (std::size_t y = y0; y <= y1; ++y) {
    for (std::size_t x = x0; x <= x1; ++x) {
      // Pixel centers sit at integer + 0.5.
      const double dx = (static_cast<double>(x) + 0.5 - cx);
      const double dy = (static_cast<double>(y) + 0.5 - cy);
      const double g = std::exp(-0.5 * (dx * dx / (sigma_x * sigma_x) +
                                        dy * dy / (sigma_y * sigma_y)));
      const double phase = 2 * kPi * (dx * ux + dy * uy) / config.texture_period;
      pixels[y * w + x] += contrast * g * (1.0 + texture * std::cos(phase));
    }
  }
}

Image ToImage(const DatasetConfig& config, const std::vector<double>& pixels) {
  Image img;
  img.height = config.image_height;
  img.width = config.image_width;
  img.pixels.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), img.pixels.begin(),
                 [](double v) { return static_cast<float>(v); });
  return img;
}

std::vector<double> BackgroundPixels(View view, const DatasetConfig& config,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t h = config.image_height, w = config.image_width;
  const BreastFrame frame = FrameFor(config);
  std::vector<double> pixels(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      const double d = std::hypot(px - frame.nipple_x, py - frame.nipple_y);
      double v = 0.02;
      if (d <= frame.extent && px <= frame.nipple_x + 2) {
        v = 0.25 + 0.15 * (1.0 - d / frame.extent);
      }
      if (view == View::kMLO &&
          px / static_cast<double>(w) + py / static_cast<double>(h) < 0.35) {
        v += 0.25;  // pectoral muscle
      }
      pixels[y * w + x] = v;
    }
  }
  const double wd = static_cast<double>(w);
  std::poisson_distribution<int> tissue_count(config.tissue_rate);
  const int structures = config.tissue_rate > 0 ? tissue_count(rng) : 0;
  for (int i = 0; i < structures; ++i) {
    const double radial = Uniform(rng, 0.1, 0.9);
    const double angle = Uniform(rng, -1.2, 1.2);
    const Placement p = PlaceAt(frame, radial, angle);
    const double sx = Uniform(rng, config.sigma_min, 1.5 * config.sigma_max) * wd;
    const double sy = Uniform(rng, config.sigma_min, 1.5 * config.sigma_max) * wd;
    const double contrast =
        Uniform(rng, config.tissue_contrast_min, config.tissue_contrast_max);
    const double texture = Uniform(rng, 0.0, 0.6);
    AddBlob(pixels, config, p.cx, p.cy, sx, sy, contrast, texture,
            Uniform(rng, 0, kPi));
  }
  std::normal_distribution<double> noise(0.0, config.noise_level);
  for (double& v : pixels) v += noise(rng);
  return pixels;
}

void ValidateFraction(double f, const char* name) {
  if (!(f >= 0 && f <= 1)) {
    throw ConfigError(std::string(name) + " must be in [0, 1], got " +
                      std::to_string(f));
  }
}

std::size_t AnnotatedCount(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

}  // namespace

std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t index) {
  return Mix(Mix(master) ^ Mix(index + 0x632BE59BD9B4E019ULL));
}

BreastFrame FrameFor(const DatasetConfig& config) {
  const double w = static_cast<double>(config.image_width);
  const double h = static_cast<double>(config.image_height);
  return {0.85 * w, 0.5 * h, 0.8 * w};
}

void DatasetConfig::Validate() const {
  if (total() == 0) throw ConfigError("dataset config has zero breasts");
  ValidateFraction(annotated_malignant, "annotated_malignant");
  ValidateFraction(annotated_benign, "annotated_benign");
  ValidateFraction(annotated_negative, "annotated_negative");
  ValidateFraction(ambiguity_fraction, "ambiguity_fraction");
  ValidateFraction(benign_distractor_rate, "benign_distractor_rate");
  if (image_height < 32 || image_width < 32) {
    throw ConfigError("image size must be at least 32x32");
  }
  if (!(sigma_min > 0 && sigma_min <= sigma_max && sigma_max < 0.1)) {
    throw ConfigError("need 0 < sigma_min <= sigma_max < 0.1");
  }
  if (!(contrast_min >= 0 && contrast_min <= contrast_max)) {
    throw ConfigError("need 0 <= contrast_min <= contrast_max");
  }
  if (!(malignant_texture_min <= malignant_texture_max &&
        benign_texture_min <= benign_texture_max && benign_texture_min >= 0 &&
        malignant_texture_max <= 1)) {
    throw ConfigError("texture ranges must be ordered within [0, 1]");
  }
  if (!(texture_period > 0 && noise_level >= 0 && tissue_rate >= 0 &&
        radial_jitter >= 0 && angular_jitter >= 0)) {
    throw ConfigError("texture_period must be positive; noise, jitter and "
                      "tissue rate nonnegative");
  }
}

std::vector<Finding> PlaceFindings(Category category,
                                   const DatasetConfig& config,
                                   std::mt19937_64& rng) {
  std::vector<Finding> findings;
  switch (category) {
    case Category::kNegative:
      break;
    case Category::kMalignant:
      findings.push_back(MakeFinding(Label::kMalignant, config, rng));
      if (Uniform(rng, 0, 1) < config.benign_distractor_rate) {
        findings.push_back(MakeFinding(Label::kBenign, config, rng));
      }
      break;
    case Category::kBenign: {
      const int count = Uniform(rng, 0, 1) < 0.5 ? 1 : 2;
      for (int i = 0; i < count; ++i) {
        findings.push_back(MakeFinding(Label::kBenign, config, rng));
      }
      break;
    }
  }
  return findings;
}

Image RenderBackground(View view, const DatasetConfig& config,
                       std::uint64_t seed) {
  return ToImage(config, BackgroundPixels(view, config, DeriveSeed(seed, view == View::kCC ? 1 : 2)));
}

std::pair<Image, Image> RenderViews(const std::vector<Finding>& findings,
                                    const DatasetConfig& config,
                                    std::uint64_t seed) {
  std::vector<double> cc = BackgroundPixels(View::kCC, config, DeriveSeed(seed, 1));
  std::vector<double> mlo = BackgroundPixels(View::kMLO, config, DeriveSeed(seed, 2));
  std::mt19937_64 rng(DeriveSeed(seed, 3));
  for (const Finding& f : findings) {
    for (View view : {View::kCC, View::kMLO}) {
      const BBox& b = f.box(view);
      const double texture = view == View::kCC ? f.texture_cc : f.texture_mlo;
      AddBlob(view == View::kCC ? cc : mlo, config, b.center_x(), b.center_y(),
              b.width() / (2 * kBoxSigmas), b.height() / (2 * kBoxSigmas),
              f.contrast, texture, Uniform(rng, 0, kPi));
    }
  }
  return {ToImage(config, cc), ToImage(config, mlo)};
}

Dataset GenerateDataset(const DatasetConfig& config, std::size_t threads) {
  config.Validate();
  std::mt19937_64 master(DeriveSeed(config.seed, 0));

  std::vector<Category> categories;
  categories.insert(categories.end(), config.malignant, Category::kMalignant);
  categories.insert(categories.end(), config.benign, Category::kBenign);
  categories.insert(categories.end(), config.negative, Category::kNegative);
  std::shuffle(categories.begin(), categories.end(), master);

  // Exact annotated counts per category, chosen uniformly.
  std::vector<bool> annotated(categories.size(), false);
  for (Category c : {Category::kMalignant, Category::kBenign, Category::kNegative}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < categories.size(); ++i) {
      if (categories[i] == c) members.push_back(i);
    }
    const double fraction = c == Category::kMalignant ? config.annotated_malignant
                            : c == Category::kBenign  ? config.annotated_benign
                                                      : config.annotated_negative;
    std::shuffle(members.begin(), members.end(), master);
    const std::size_t count = AnnotatedCount(members.size(), fraction);
    for (std::size_t i = 0; i < count; ++i) annotated[members[i]] = true;
  }

  Dataset dataset;
  dataset.config = config;
  dataset.breasts.resize(categories.size());
  auto build = [&](std::size_t i) {
    const std::uint64_t breast_seed = DeriveSeed(config.seed, 1000 + i);
    std::mt19937_64 rng(DeriveSeed(breast_seed, 0));
    BreastSample& b = dataset.breasts[i];
    b.category = categories[i];
    b.annotated = annotated[i];
    b.findings = PlaceFindings(b.category, config, rng);
    auto [cc, mlo] = RenderViews(b.findings, config, breast_seed);
    b.image_cc = std::move(cc);
    b.image_mlo = std::move(mlo);
    char id[32];
    std::snprintf(id, sizeof(id), "b%05zu", i);
    b.breast_id = id;
    std::snprintf(id, sizeof(id), "e%05zu", i / 2);
    b.exam_id = id;
    b.side = i % 2 == 0 ? 'L' : 'R';
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, categories.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < categories.size(); ++i) build(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < categories.size(); i += workers) build(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return dataset;
}

Splits GenerateSplits(const DatasetConfig& config, std::size_t threads) {
  config.Validate();
  auto split = [](std::size_t n) {
    const auto tenth = static_cast<std::size_t>(std::llround(static_cast<double>(n) * 0.1));
    return std::array<std::size_t, 3>{n - 2 * tenth, tenth, tenth};
  };
  const auto m = split(config.malignant), b = split(config.benign),
             n = split(config.negative);
  Splits out;
  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  for (std::size_t s = 0; s < 3; ++s) {
    DatasetConfig part = config;
    part.malignant = m[s];
    part.benign = b[s];
    part.negative = n[s];
    part.seed = DeriveSeed(config.seed, 100 + s);
    if (part.total() == 0) {
      targets[s]->config = part;
      continue;
    }
    *targets[s] = GenerateDataset(part, threads);
  }
  return out;
}

}  // namespace mnm::synth
