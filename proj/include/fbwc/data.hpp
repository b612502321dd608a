#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fbwc/tensor.hpp"

namespace fbwc {

// Knobs for the synthetic glass-scene generator. Production configs should
// keep the transmission range inside [0.3, 0.95] (checked by
// scene_config_valid and the CLI); the generator itself accepts any range in
// [0, 1] so degenerate settings (fully transparent, fully opaque) remain
// available for controlled experiments.
struct SceneConfig {
    int h = 64, w = 64;
    int min_regions = 1, max_regions = 3;
    scalar alpha_lo = scalar(0.45), alpha_hi = scalar(0.85);  // background transmission
    scalar highlight_prob = scalar(0.7);                      // chance of reflection blobs
    scalar highlight_intensity = scalar(0.45);
    int noise_octaves = 3;   // background value-noise octaves
    int noise_cell = 16;     // base lattice cell size in pixels
};

// Strict invariant check used by user-facing entry points.
bool scene_config_valid(const SceneConfig& cfg);

struct SamplePair {
    Tensor image;  // (1,3,h,w) in [0,1]
    Tensor mask;   // (1,1,h,w) in {0,1}
};

// Like SamplePair but also exposes the pre-composite background, so tests can
// measure how much of it shows through the glass regions.
struct SceneSample {
    Tensor image, mask, background;
};

// Deterministic per (cfg, seed); bitwise identical on repeat calls. Resamples
// internally until the glass fraction lands in [0.05, 0.7].
SceneSample gen_synthetic_scene(const SceneConfig& cfg, std::uint64_t seed);
SamplePair gen_synthetic(const SceneConfig& cfg, std::uint64_t seed);

struct DatasetManifest {
    std::string root;    // directory the relative pairs resolve against
    std::vector<std::pair<std::string, std::string>> pairs;  // (image, mask) relative paths
    std::string split;   // "train" or "test"
};

// Parses a newline-delimited listing of `<image> <mask>` relative pairs with
// '#' comments. The split tag is "test" when the filename stem contains
// "test", else "train". Verifies every referenced file exists.
DatasetManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const DatasetManifest& m);

// Loads pair `idx`: image scaled to [0,1], mask thresholded at 128 -> {0,1}.
// Errors on size mismatch between image and mask, or non-grayscale mask.
SamplePair load_sample(const DatasetManifest& m, std::size_t idx);

// Exact horizontal mirror (no resampling).
Tensor hflip_image(const Tensor& t);

// Training augmentation: horizontal flip with probability 0.5, random scale
// in [0.75, 1.25] followed by a resize to the target size, mask re-binarized
// at 0.5 after the final resize.
SamplePair augment(const SamplePair& s, std::mt19937_64& rng, int target_h, int target_w);

}  // namespace fbwc
