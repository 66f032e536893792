#include "glandscreen/image.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "glandscreen/error.hpp"

namespace glandscreen {

RgbImage::RgbImage(cv::Mat rgb) {
  if (rgb.empty() || rgb.type() != CV_8UC3) {
    throw Error(ErrorCode::InvalidArgument, "RgbImage requires a non-empty CV_8UC3 matrix");
  }
  mat_ = rgb.isContinuous() ? std::move(rgb) : rgb.clone();
}

RgbImage::RgbImage(int height, int width, cv::Vec3b fill) {
  if (height < 1 || width < 1) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  mat_ = cv::Mat(height, width, CV_8UC3, cv::Scalar(fill[0], fill[1], fill[2]));
}

bool operator==(const RgbImage& a, const RgbImage& b) {
  if (a.height() != b.height() || a.width() != b.width()) return false;
  if (a.empty()) return true;
  return std::equal(a.mat_.datastart, a.mat_.dataend, b.mat_.datastart);
}

namespace {

RgbImage from_bgr_any(const cv::Mat& decoded, const std::string& what) {
  if (decoded.empty()) {
    throw Error(ErrorCode::UnreadableFile, "cannot decode image: " + what);
  }
  cv::Mat eight = decoded;
  if (decoded.depth() != CV_8U) {
    double scale = decoded.depth() == CV_16U ? 1.0 / 257.0 : 1.0;
    decoded.convertTo(eight, CV_8U, scale);
  }
  cv::Mat rgb;
  switch (eight.channels()) {
    case 1: cv::cvtColor(eight, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(eight, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(eight, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw Error(ErrorCode::UnreadableFile, "unsupported channel count: " + what);
  }
  return RgbImage(std::move(rgb));
}

}  // namespace

RgbImage read_image(const std::filesystem::path& path) {
  cv::Mat decoded = cv::imread(path.string(), cv::IMREAD_ANYCOLOR | cv::IMREAD_ANYDEPTH);
  return from_bgr_any(decoded, path.string());
}

RgbImage decode_image(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) throw Error(ErrorCode::UnreadableFile, "empty image buffer");
  cv::Mat decoded;
  try {
    decoded = cv::imdecode(bytes, cv::IMREAD_ANYCOLOR | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception&) {
    decoded.release();
  }
  return from_bgr_any(decoded, "<buffer>");
}

void write_image(const std::filesystem::path& path, const RgbImage& img) {
  cv::Mat bgr;
  cv::cvtColor(img.mat(), bgr, cv::COLOR_RGB2BGR);
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write image: " + path.string());
}

std::vector<unsigned char> encode_png(const RgbImage& img) {
  cv::Mat bgr;
  cv::cvtColor(img.mat(), bgr, cv::COLOR_RGB2BGR);
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", bgr, out)) throw Error(ErrorCode::IoError, "PNG encoding failed");
  return out;
}

RgbImage resize_bilinear(const RgbImage& img, int height, int width) {
  if (img.height() == height && img.width() == width) return img.clone();
  cv::Mat out;
  cv::resize(img.mat(), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  return RgbImage(std::move(out));
}

bool is_image_extension(const std::filesystem::path& path) {
  static constexpr std::array<std::string_view, 7> kExt = {".png", ".jpg", ".jpeg", ".bmp",
                                                           ".tif", ".tiff", ".webp"};
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::find(kExt.begin(), kExt.end(), ext) != kExt.end();
}

}  // namespace glandscreen
