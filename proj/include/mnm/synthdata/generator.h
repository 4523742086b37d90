#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "mnm/synthdata/dataset.h"

namespace mnm::synth {

// Deterministic substream seed for item `index` of stream `master`.
std::uint64_t DeriveSeed(std::uint64_t master, std::uint64_t index);

// Simulated nipple point and breast extent shared by both views.
struct BreastFrame {
  double nipple_x = 0;
  double nipple_y = 0;
  double extent = 1;
};
BreastFrame FrameFor(const DatasetConfig& config);

// Samples the findings of one breast: none for negatives, exactly one
// malignant (plus an optional benign distractor) for malignant breasts, one
// or two benign findings for benign breasts.
std::vector<Finding> PlaceFindings(Category category,
                                   const DatasetConfig& config,
                                   std::mt19937_64& rng);

// Background (tissue gradient, normal-tissue structures, pixel noise) for
// one view. Depends only on (config, view, seed).
Image RenderBackground(View view, const DatasetConfig& config,
                       std::uint64_t seed);

// Background plus every finding rendered as a textured anisotropic Gaussian.
// `seed` drives both the backgrounds and per-finding orientation.
std::pair<Image, Image> RenderViews(const std::vector<Finding>& findings,
                                    const DatasetConfig& config,
                                    std::uint64_t seed);

// Exactly the configured number of breasts per category, bit-identical for
// identical configs. Breasts are paired into left/right exams. `threads`
// only affects speed.
Dataset GenerateDataset(const DatasetConfig& config, std::size_t threads = 1);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// 80:10:10 split per category (rounded, remainder to train), each split
// generated from its own derived seed.
Splits GenerateSplits(const DatasetConfig& config, std::size_t threads = 1);

}  // namespace mnm::synth
