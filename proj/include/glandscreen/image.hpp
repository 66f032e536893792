#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace glandscreen {

/// 8-bit RGB image (channel order R, G, B) backed by a continuous CV_8UC3 Mat.
class RgbImage {
 public:
  RgbImage() = default;
  /// Takes a CV_8UC3 matrix already in RGB order; throws InvalidArgument otherwise.
  explicit RgbImage(cv::Mat rgb);
  RgbImage(int height, int width, cv::Vec3b fill = {255, 255, 255});

  int height() const { return mat_.rows; }
  int width() const { return mat_.cols; }
  bool empty() const { return mat_.empty(); }

  const cv::Mat& mat() const { return mat_; }
  cv::Mat& mat() { return mat_; }

  cv::Vec3b at(int row, int col) const { return mat_.at<cv::Vec3b>(row, col); }
  cv::Vec3b& at(int row, int col) { return mat_.at<cv::Vec3b>(row, col); }

  RgbImage clone() const { return RgbImage(mat_.clone()); }

  friend bool operator==(const RgbImage& a, const RgbImage& b);

 private:
  cv::Mat mat_;
};

/// Decodes any OpenCV-supported file into RGB; throws UnreadableFile.
RgbImage read_image(const std::filesystem::path& path);
/// Decodes an in-memory buffer; throws UnreadableFile.
RgbImage decode_image(const std::vector<unsigned char>& bytes);
/// Writes PNG (or any extension OpenCV understands); throws IoError.
void write_image(const std::filesystem::path& path, const RgbImage& img);
std::vector<unsigned char> encode_png(const RgbImage& img);

/// Bilinear resize to exactly height x width.
RgbImage resize_bilinear(const RgbImage& img, int height, int width);

bool is_image_extension(const std::filesystem::path& path);

}  // namespace glandscreen
