#pragma once

#include <filesystem>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "glandscreen/dataset.hpp"
#include "glandscreen/image.hpp"
#include "glandscreen/model.hpp"
#include "glandscreen/rng.hpp"
#include "glandscreen/stain.hpp"

namespace glandscreen::testing {

using Basis = Eigen::Matrix<double, 3, 2>;

/// Random non-negative unit columns with entries in [0.2, 1] before normalization,
/// at least `min_angle_deg` apart.
Basis random_basis(Rng& rng, double min_angle_deg = 15.0);

/// Angle between two vectors in degrees.
double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

/// Worst column angle between two bases, minimized over the two column orderings.
double basis_error_deg(const Basis& a, const Basis& b);

/// Concentration field for a `side` x `side` image: 15% pure first stain,
/// 15% pure second stain, 10% background, the rest mixtures. Pure pixels are
/// dense enough that every OD channel exceeds 0.2.
std::vector<Eigen::Vector2d> random_concentrations(Rng& rng, const Basis& basis, int side);

/// Renders pixels = round(I0 * 10^(-basis * c)) clamped to [0, 255].
RgbImage render_stains(const Basis& basis, const std::vector<Eigen::Vector2d>& conc, int side,
                       double white = 255.0);

/// White image with filled ellipses of `color` at the given centers.
struct Blob {
  cv::Point center;
  cv::Size axes;
};
RgbImage blob_image(int width, int height, const std::vector<Blob>& blobs,
                    cv::Vec3b color = {150, 60, 160});

/// Tissue-like blob on white whose hue depends on the label: abnormal is
/// blue-purple, normal is pink. Colour alone separates the classes.
RgbImage color_separable_image(Rng& rng, Label label, int side);

/// Writes `per_class` images per class under root/abnormal and root/normal.
void write_color_corpus(const std::filesystem::path& root, int per_class, int side,
                        std::uint64_t seed);

/// Toy network for Grad-CAM: a 2x2 stride-2 conv whose channel 0 responds to the
/// red channel and channel 1 is a constant, ReLU, then GAP -> dropout(0) -> linear.
/// The class-0 score is `scale` times the mean of channel 0.
std::unique_ptr<model::Classifier> quadrant_model(float scale = 1.0f);

/// Black image with a red top-left quadrant.
RgbImage red_quadrant_image(int side);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace glandscreen::testing

namespace glandscreen::testing {

/// Image rendered from the default reference basis, with concentrations rescaled
/// until the estimated robust maxima match the reference maxima.
RgbImage reference_fixed_point_image(Rng& rng, int side, const stain::StainParams& params);

}  // namespace glandscreen::testing
