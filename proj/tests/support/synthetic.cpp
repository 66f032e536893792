#include "synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <numbers>

#include <opencv2/imgproc.hpp>

namespace glandscreen::testing {

namespace fs = std::filesystem;

double angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double c = std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double basis_error_deg(const Basis& a, const Basis& b) {
  const double same = std::max(angle_deg(a.col(0), b.col(0)), angle_deg(a.col(1), b.col(1)));
  const double swapped = std::max(angle_deg(a.col(0), b.col(1)), angle_deg(a.col(1), b.col(0)));
  return std::min(same, swapped);
}

Basis random_basis(Rng& rng, double min_angle_deg) {
  for (;;) {
    Basis m;
    for (int c = 0; c < 2; ++c) {
      for (int r = 0; r < 3; ++r) m(r, c) = rng.uniform(0.2, 1.0);
      m.col(c).normalize();
    }
    if (angle_deg(m.col(0), m.col(1)) >= min_angle_deg) return m;
  }
}

std::vector<Eigen::Vector2d> random_concentrations(Rng& rng, const Basis& basis, int side) {
  const double lo0 = 0.2 / basis.col(0).minCoeff();
  const double lo1 = 0.2 / basis.col(1).minCoeff();
  std::vector<Eigen::Vector2d> conc(static_cast<std::size_t>(side) * side);
  for (auto& c : conc) {
    const double u = rng.uniform();
    if (u < 0.15) {
      c = {rng.uniform(lo0, 1.6 * lo0), 0.0};
    } else if (u < 0.30) {
      c = {0.0, rng.uniform(lo1, 1.6 * lo1)};
    } else if (u < 0.40) {
      c = {0.0, 0.0};
    } else {
      c = {rng.uniform(0.3 * lo0, 1.2 * lo0), rng.uniform(0.3 * lo1, 1.2 * lo1)};
    }
  }
  return conc;
}

RgbImage render_stains(const Basis& basis, const std::vector<Eigen::Vector2d>& conc, int side,
                       double white) {
  RgbImage img(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const Eigen::Vector3d od = basis * conc[static_cast<std::size_t>(y) * side + x];
      auto& px = img.at(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::floor(white * std::pow(10.0, -od(ch)) + 0.5);
        px[ch] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

RgbImage blob_image(int width, int height, const std::vector<Blob>& blobs, cv::Vec3b color) {
  RgbImage img(height, width);
  for (const auto& b : blobs) {
    cv::ellipse(img.mat(), b.center, b.axes, 0.0, 0.0, 360.0, cv::Scalar(color[0], color[1], color[2]),
                cv::FILLED, cv::LINE_8);
  }
  return img;
}

RgbImage color_separable_image(Rng& rng, Label label, int side) {
  const cv::Vec3d base = label == Label::Abnormal ? cv::Vec3d(90, 60, 170) : cv::Vec3d(235, 120, 160);
  RgbImage img(side, side);
  const double cx = side * rng.uniform(0.4, 0.6), cy = side * rng.uniform(0.4, 0.6);
  const double rx = side * rng.uniform(0.25, 0.4), ry = side * rng.uniform(0.25, 0.4);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      auto& px = img.at(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        px[ch] = static_cast<unsigned char>(std::clamp(base[ch] + rng.uniform(-20.0, 20.0), 0.0, 255.0));
      }
    }
  }
  return img;
}

void write_color_corpus(const fs::path& root, int per_class, int side, std::uint64_t seed) {
  Rng rng(seed);
  for (Label label : {Label::Abnormal, Label::Normal}) {
    const fs::path dir = root / std::string(to_string(label));
    fs::create_directories(dir);
    for (int i = 0; i < per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%04d.png", i);
      write_image(dir / name, color_separable_image(rng, label, side));
    }
  }
}

std::unique_ptr<model::Classifier> quadrant_model(float scale) {
  nn::Sequential backbone;
  auto conv = std::make_unique<nn::Conv2d>("features.conv", 3, 2, 2, 2, 0);
  auto& w = conv->weight().value;
  std::fill(w.data.begin(), w.data.end(), 0.0f);
  for (int ky = 0; ky < 2; ++ky) {
    for (int kx = 0; kx < 2; ++kx) w.at(0, 0, ky, kx) = 0.25f;
  }
  conv->bias()->value.data = {0.0f, 1.0f};
  backbone.add("conv", std::move(conv));
  backbone.add("relu", std::make_unique<nn::ReLU>());

  nn::Sequential head;
  head.add("pool", std::make_unique<nn::GlobalAvgPool>());
  head.add("dropout", std::make_unique<nn::Dropout>(0.0f));
  auto fc = std::make_unique<nn::Linear>("head.fc", 2, 2);
  auto& fw = fc->weight().value;
  fw.at(0, 0) = scale;
  fw.at(0, 1) = 0.0f;
  fw.at(1, 0) = 0.0f;
  fw.at(1, 1) = 1.0f;
  std::fill(fc->bias().value.data.begin(), fc->bias().value.data.end(), 0.0f);
  head.add("fc", std::move(fc));

  model::ModelConfig cfg;
  cfg.backbone = "toy";
  cfg.dropout = 0.0;
  return std::make_unique<model::Classifier>(cfg, std::move(backbone), std::move(head));
}

RgbImage red_quadrant_image(int side) {
  RgbImage img(side, side, cv::Vec3b(0, 0, 0));
  for (int y = 0; y < side / 2; ++y) {
    for (int x = 0; x < side / 2; ++x) img.at(y, x) = cv::Vec3b(255, 0, 0);
  }
  return img;
}

fs::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
  const fs::path p = fs::temp_directory_path() /
                     ("glandscreen_" + tag + "_" + std::to_string(rng.next_u64() % 1000000007ULL) +
                      "_" + std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace glandscreen::testing

namespace glandscreen::testing {

RgbImage reference_fixed_point_image(Rng& rng, int side, const stain::StainParams& params) {
  const auto ref = stain::StainModel::default_reference();
  auto conc = random_concentrations(rng, ref.basis, side);
  for (int iter = 0; iter < 8; ++iter) {
    const auto est =
        stain::estimate_stain_model(stain::rgb_to_od(render_stains(ref.basis, conc, side), params), params);
    const Eigen::Vector2d scale = ref.max_concentration.cwiseQuotient(est.max_concentration);
    if ((scale.array() - 1.0).abs().maxCoeff() < 1e-4) break;
    for (auto& c : conc) c = c.cwiseProduct(scale);
  }
  return render_stains(ref.basis, conc, side);
}

}  // namespace glandscreen::testing
