#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "glandscreen/image.hpp"

namespace glandscreen::stain {

/// Optical density per pixel, row-major pixel order, columns R, G, B.
struct OdImage {
  int height = 0;
  int width = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> od;
};

/// Per-pixel stain concentrations, columns hematoxylin, eosin.
struct ConcentrationMap {
  int height = 0;
  int width = 0;
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> conc;
};

/// Column 0 is hematoxylin, column 1 eosin; columns are unit-norm OD directions.
struct StainModel {
  Eigen::Matrix<double, 3, 2> basis;
  Eigen::Vector2d max_concentration;

  /// Widely used H&E reference for this method.
  static StainModel default_reference();
  void validate() const;
};

struct StainParams {
  double od_floor = 0.15;
  double angle_percentile_lo = 1.0;
  double angle_percentile_hi = 99.0;
  double conc_percentile = 99.0;
  double white_reference = 255.0;
  /// Fewer qualifying pixels than this raises InsufficientTissue.
  int min_tissue_pixels = 50;
  /// s2 < tolerance * s1 raises DegenerateStains.
  double degeneracy_tolerance = 1e-6;

  void validate() const;
};

OdImage rgb_to_od(const RgbImage& img, const StainParams& params);
RgbImage od_to_rgb(const OdImage& od, const StainParams& params);

StainModel estimate_stain_model(const OdImage& od, const StainParams& params);

ConcentrationMap compute_concentrations(const OdImage& od, const StainModel& model);

RgbImage normalize_macenko(const RgbImage& img, const StainModel& reference,
                           const StainParams& params);

/// Result of the pipeline-level policy: on stain errors the input passes
/// through unchanged and `fallback` is set.
struct NormalizeOutcome {
  RgbImage image;
  bool fallback = false;
  std::string fallback_reason;
  std::optional<StainModel> source_model;
};

NormalizeOutcome normalize_or_passthrough(const RgbImage& img, const StainModel& reference,
                                          const StainParams& params);

/// Linear-interpolated percentile (p in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double p);

}  // namespace glandscreen::stain
