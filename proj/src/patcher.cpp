#include "glandscreen/patcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "glandscreen/error.hpp"

namespace glandscreen::patcher {

long TissueMask::count() const { return static_cast<long>(cv::countNonZero(mask)); }

void PatchParams::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(saturation_threshold) || !unit(value_ceiling)) {
    throw Error(ErrorCode::InvalidArgument, "HSV thresholds must lie in [0, 1]");
  }
  if (open_radius < 0 || close_radius < 0) {
    throw Error(ErrorCode::InvalidArgument, "morphology radii must be >= 0");
  }
  if (min_region_area < 1) throw Error(ErrorCode::InvalidArgument, "min_region_area must be >= 1");
  if (max_patches < 1) throw Error(ErrorCode::InvalidArgument, "max_patches must be >= 1");
  if (patch_size < 8) throw Error(ErrorCode::InvalidArgument, "patch_size must be >= 8");
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.rotate = cfg.hflip = cfg.vflip = cfg.shift_scale_rotate = cfg.brightness_contrast = false;
  return cfg;
}

void AugmentConfig::validate() const {
  for (double p : {rotate_prob, hflip_prob, vflip_prob, ssr_prob, bc_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "augmentation probabilities must lie in [0, 1]");
    }
  }
  for (double m : {rotate_limit_deg, shift_limit, scale_limit, ssr_rotate_limit_deg,
                   brightness_limit, contrast_limit}) {
    if (!std::isfinite(m) || m < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "augmentation magnitudes must be finite and >= 0");
    }
  }
  if (scale_limit >= 1.0) throw Error(ErrorCode::InvalidArgument, "scale_limit must be < 1");
}

namespace {

void morph(cv::Mat& mask, int op, int radius) {
  if (radius <= 0) return;
  const cv::Mat kernel =
      cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * radius + 1, 2 * radius + 1));
  // Default border value leaves image edges unaffected by erosion and dilation.
  cv::morphologyEx(mask, mask, op, kernel);
}

}  // namespace

TissueMask segment_tissue(const RgbImage& img, const PatchParams& params) {
  params.validate();
  cv::Mat rgbf;
  img.mat().convertTo(rgbf, CV_32FC3, 1.0 / 255.0);
  cv::Mat hsv;
  cv::cvtColor(rgbf, hsv, cv::COLOR_RGB2HSV);  // float: H in degrees, S and V in [0, 1]

  TissueMask out;
  out.mask = cv::Mat::zeros(img.height(), img.width(), CV_8U);
  const auto s_thr = static_cast<float>(params.saturation_threshold);
  const auto v_max = static_cast<float>(params.value_ceiling);
  for (int r = 0; r < hsv.rows; ++r) {
    const auto* row = hsv.ptr<cv::Vec3f>(r);
    auto* dst = out.mask.ptr<unsigned char>(r);
    for (int c = 0; c < hsv.cols; ++c) {
      dst[c] = (row[c][1] >= s_thr && row[c][2] <= v_max) ? 1 : 0;
    }
  }
  morph(out.mask, cv::MORPH_OPEN, params.open_radius);
  morph(out.mask, cv::MORPH_CLOSE, params.close_radius);
  return out;
}

namespace {

cv::Rect square_around(const cv::Rect& box, int img_h, int img_w) {
  int side = std::max(box.width, box.height);
  const double cx = box.x + box.width / 2.0;
  const double cy = box.y + box.height / 2.0;
  const int w = std::min(side, img_w);
  const int h = std::min(side, img_h);
  int x = static_cast<int>(std::lround(cx - w / 2.0));
  int y = static_cast<int>(std::lround(cy - h / 2.0));
  x = std::clamp(x, 0, img_w - w);
  y = std::clamp(y, 0, img_h - h);
  return {x, y, w, h};
}

struct Component {
  cv::Rect bbox;
  long area;
};

}  // namespace

std::vector<Patch> extract_patches(const RgbImage& img, const TissueMask& mask,
                                   const PatchParams& params, const std::string& source_id) {
  params.validate();
  if (mask.height() != img.height() || mask.width() != img.width()) {
    throw Error(ErrorCode::DimensionMismatch, "tissue mask size does not match image");
  }
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(mask.mask, labels, stats, centroids, 8, CV_32S);

  std::vector<Component> comps;
  for (int k = 1; k < n; ++k) {
    const long area = stats.at<int>(k, cv::CC_STAT_AREA);
    if (area < params.min_region_area) continue;
    comps.push_back({cv::Rect(stats.at<int>(k, cv::CC_STAT_LEFT), stats.at<int>(k, cv::CC_STAT_TOP),
                              stats.at<int>(k, cv::CC_STAT_WIDTH),
                              stats.at<int>(k, cv::CC_STAT_HEIGHT)),
                     area});
  }
  std::sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    if (a.area != b.area) return a.area > b.area;
    if (a.bbox.y != b.bbox.y) return a.bbox.y < b.bbox.y;
    return a.bbox.x < b.bbox.x;
  });
  if (comps.size() > static_cast<std::size_t>(params.max_patches)) {
    comps.resize(static_cast<std::size_t>(params.max_patches));
  }

  std::vector<Patch> patches;
  if (comps.empty()) {
    Patch p;
    p.pixels = resize_bilinear(img, params.patch_size, params.patch_size);
    p.source_bbox = cv::Rect(0, 0, img.width(), img.height());
    p.source_id = source_id;
    p.fallback = true;
    patches.push_back(std::move(p));
    return patches;
  }
  for (const auto& comp : comps) {
    Patch p;
    p.source_bbox = square_around(comp.bbox, img.height(), img.width());
    p.pixels = resize_bilinear(RgbImage(img.mat()(p.source_bbox).clone()), params.patch_size,
                               params.patch_size);
    p.source_id = source_id;
    p.component_area = comp.area;
    patches.push_back(std::move(p));
  }
  return patches;
}

std::vector<Patch> patches_for_image(const RgbImage& img, const PatchParams& params,
                                     const std::string& source_id) {
  return extract_patches(img, segment_tissue(img, params), params, source_id);
}

namespace {

cv::Mat warp(const cv::Mat& src, double angle_deg, double scale, double dx, double dy) {
  const cv::Point2f center(static_cast<float>(src.cols - 1) / 2.0f,
                           static_cast<float>(src.rows - 1) / 2.0f);
  cv::Mat m = cv::getRotationMatrix2D(center, angle_deg, scale);
  m.at<double>(0, 2) += dx * src.cols;
  m.at<double>(1, 2) += dy * src.rows;
  cv::Mat dst;
  cv::warpAffine(src, dst, m, src.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
  return dst;
}

}  // namespace

RgbImage augment_pixels(const RgbImage& pixels, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  cv::Mat img = pixels.mat().clone();
  // Every transform consumes the same number of draws whether or not it fires,
  // so enabling one transform does not shift the stream seen by the others.
  const bool do_rot = rng.bernoulli(cfg.rotate_prob);
  const double rot = rng.uniform(-cfg.rotate_limit_deg, cfg.rotate_limit_deg);
  if (cfg.rotate && do_rot) img = warp(img, rot, 1.0, 0.0, 0.0);

  const bool do_h = rng.bernoulli(cfg.hflip_prob);
  if (cfg.hflip && do_h) cv::flip(img, img, 1);
  const bool do_v = rng.bernoulli(cfg.vflip_prob);
  if (cfg.vflip && do_v) cv::flip(img, img, 0);

  const bool do_ssr = rng.bernoulli(cfg.ssr_prob);
  const double sx = rng.uniform(-cfg.shift_limit, cfg.shift_limit);
  const double sy = rng.uniform(-cfg.shift_limit, cfg.shift_limit);
  const double sc = 1.0 + rng.uniform(-cfg.scale_limit, cfg.scale_limit);
  const double sr = rng.uniform(-cfg.ssr_rotate_limit_deg, cfg.ssr_rotate_limit_deg);
  if (cfg.shift_scale_rotate && do_ssr) img = warp(img, sr, sc, sx, sy);

  const bool do_bc = rng.bernoulli(cfg.bc_prob);
  const double alpha = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit);
  const double beta = 255.0 * rng.uniform(-cfg.brightness_limit, cfg.brightness_limit);
  if (cfg.brightness_contrast && do_bc) img.convertTo(img, CV_8UC3, alpha, beta);

  return RgbImage(std::move(img));
}

Patch augment(const Patch& patch, const AugmentConfig& cfg, Rng& rng) {
  Patch out = patch;
  out.pixels = augment_pixels(patch.pixels, cfg, rng);
  return out;
}

}  // namespace glandscreen::patcher
