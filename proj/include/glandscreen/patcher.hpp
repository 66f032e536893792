#pragma once

#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "glandscreen/image.hpp"
#include "glandscreen/rng.hpp"

namespace glandscreen::patcher {

struct TissueMask {
  /// CV_8U, 1 = tissue, 0 = background; same size as the source image.
  cv::Mat mask;

  int height() const { return mask.rows; }
  int width() const { return mask.cols; }
  bool at(int row, int col) const { return mask.at<unsigned char>(row, col) != 0; }
  long count() const;
};

struct Patch {
  RgbImage pixels;
  cv::Rect source_bbox;
  std::string source_id;
  /// Area of the connected component this patch came from (0 for fallback).
  long component_area = 0;
  bool fallback = false;
};

struct PatchParams {
  double saturation_threshold = 0.08;
  double value_ceiling = 0.95;
  int open_radius = 5;
  int close_radius = 5;
  long min_region_area = 5000;
  int max_patches = 8;
  int patch_size = 320;

  void validate() const;
};

struct AugmentConfig {
  bool rotate = true;
  double rotate_prob = 0.5;
  double rotate_limit_deg = 30.0;

  bool hflip = true;
  double hflip_prob = 0.5;
  bool vflip = true;
  double vflip_prob = 0.5;

  bool shift_scale_rotate = true;
  double ssr_prob = 0.5;
  double shift_limit = 0.1;
  double scale_limit = 0.1;
  double ssr_rotate_limit_deg = 30.0;

  bool brightness_contrast = true;
  double bc_prob = 0.5;
  double brightness_limit = 0.2;
  double contrast_limit = 0.2;

  std::uint64_t seed = 42;

  static AugmentConfig none();
  void validate() const;
};

TissueMask segment_tissue(const RgbImage& img, const PatchParams& params);

std::vector<Patch> extract_patches(const RgbImage& img, const TissueMask& mask,
                                   const PatchParams& params, const std::string& source_id = {});

/// Normalize-free convenience: segment then extract.
std::vector<Patch> patches_for_image(const RgbImage& img, const PatchParams& params,
                                     const std::string& source_id = {});

/// Applies each enabled transform with its probability, drawing from `rng`.
Patch augment(const Patch& patch, const AugmentConfig& cfg, Rng& rng);
RgbImage augment_pixels(const RgbImage& pixels, const AugmentConfig& cfg, Rng& rng);

}  // namespace glandscreen::patcher
