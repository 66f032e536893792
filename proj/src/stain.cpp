#include "glandscreen/stain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "glandscreen/error.hpp"

namespace glandscreen::stain {

StainModel StainModel::default_reference() {
  StainModel m;
  m.basis << 0.5626, 0.2159,
             0.7201, 0.8012,
             0.4062, 0.5581;
  // Published reference columns are unit-norm to 4 decimals; renormalize exactly.
  m.basis.col(0).normalize();
  m.basis.col(1).normalize();
  m.max_concentration << 1.9705, 1.0308;
  return m;
}

void StainModel::validate() const {
  for (int c = 0; c < 2; ++c) {
    if (std::abs(basis.col(c).norm() - 1.0) > 1e-6) {
      throw Error(ErrorCode::InvalidArgument, "stain basis columns must be unit-norm");
    }
  }
  if ((basis.array() < 0.0).any()) {
    throw Error(ErrorCode::InvalidArgument, "stain basis entries must be non-negative");
  }
  if (!(max_concentration.array() > 0.0).all()) {
    throw Error(ErrorCode::InvalidArgument, "max_concentration entries must be positive");
  }
  if (basis.col(0).cross(basis.col(1)).norm() < 1e-9) {
    throw Error(ErrorCode::DegenerateStains, "stain basis columns are linearly dependent");
  }
}

void StainParams::validate() const {
  if (!(od_floor > 0.0)) throw Error(ErrorCode::InvalidArgument, "od_floor must be > 0");
  if (!(angle_percentile_lo >= 0.0 && angle_percentile_lo < angle_percentile_hi &&
        angle_percentile_hi <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "angle percentiles must satisfy 0 <= lo < hi <= 100");
  }
  if (!(conc_percentile > 0.0 && conc_percentile <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "conc_percentile must be in (0, 100]");
  }
  if (!(white_reference > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "white_reference must be > 0");
  }
  if (min_tissue_pixels < 1) {
    throw Error(ErrorCode::InvalidArgument, "min_tissue_pixels must be >= 1");
  }
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "percentile of empty sample");
  p = std::clamp(p, 0.0, 100.0);
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double v_lo = values[lo];
  if (hi == lo) return v_lo;
  const double v_hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1,
                                        values.end());
  return v_lo + (rank - static_cast<double>(lo)) * (v_hi - v_lo);
}

OdImage rgb_to_od(const RgbImage& img, const StainParams& params) {
  params.validate();
  OdImage out;
  out.height = img.height();
  out.width = img.width();
  const auto n = static_cast<Eigen::Index>(img.height()) * img.width();
  out.od.resize(n, 3);
  const auto* px = img.mat().ptr<unsigned char>(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::max<double>(px[i * 3 + c], 1.0);
      // Clamped at zero: intensities above I0 are treated as fully transparent.
      out.od(i, c) = std::max(0.0, -std::log10(v / params.white_reference));
    }
  }
  return out;
}

RgbImage od_to_rgb(const OdImage& od, const StainParams& params) {
  params.validate();
  RgbImage out(od.height, od.width);
  auto* px = out.mat().ptr<unsigned char>(0);
  for (Eigen::Index i = 0; i < od.od.rows(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::floor(params.white_reference * std::pow(10.0, -od.od(i, c)) + 0.5);
      px[i * 3 + c] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

namespace {

using OdRows = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

OdRows select_tissue(const OdImage& od, double floor) {
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(od.od.rows()));
  for (Eigen::Index i = 0; i < od.od.rows(); ++i) {
    if ((od.od.row(i).array() > floor).all()) keep.push_back(i);
  }
  OdRows tissue(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    tissue.row(static_cast<Eigen::Index>(k)) = od.od.row(keep[k]);
  }
  return tissue;
}

/// Pseudo-inverse of a 3x2 basis via its SVD; throws when columns are dependent.
Eigen::Matrix<double, 2, 3> basis_pinv(const Eigen::Matrix<double, 3, 2>& basis) {
  Eigen::JacobiSVD<Eigen::Matrix<double, 3, 2>> svd(basis, Eigen::ComputeFullU |
                                                               Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (!(s(0) > 0.0) || s(1) < 1e-9 * s(0)) {
    throw Error(ErrorCode::DegenerateStains, "stain basis columns are numerically dependent");
  }
  Eigen::Matrix<double, 2, 3> sigma_inv = Eigen::Matrix<double, 2, 3>::Zero();
  sigma_inv(0, 0) = 1.0 / s(0);
  sigma_inv(1, 1) = 1.0 / s(1);
  return svd.matrixV() * sigma_inv * svd.matrixU().transpose();
}

Eigen::Vector3d orient_and_clip(Eigen::Vector3d v) {
  if (v.sum() < 0.0) v = -v;
  v = v.cwiseMax(0.0);
  const double n = v.norm();
  if (n <= 0.0) throw Error(ErrorCode::DegenerateStains, "stain vector collapsed to zero");
  return v / n;
}

}  // namespace

StainModel estimate_stain_model(const OdImage& od, const StainParams& params) {
  params.validate();
  const OdRows tissue = select_tissue(od, params.od_floor);
  if (tissue.rows() < params.min_tissue_pixels) {
    throw Error(ErrorCode::InsufficientTissue,
                "only " + std::to_string(tissue.rows()) + " pixels exceed OD floor " +
                    std::to_string(params.od_floor));
  }

  // Right-singular vectors of the tissue OD matrix = eigenvectors of its 3x3 Gram matrix.
  const Eigen::Matrix3d gram = tissue.transpose() * tissue;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(gram);
  const Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0);  // ascending
  const double s1 = std::sqrt(ev(2));
  const double s2 = std::sqrt(ev(1));
  if (!(s1 > 0.0) || s2 < params.degeneracy_tolerance * s1) {
    throw Error(ErrorCode::DegenerateStains, "OD cloud is rank-1 (second singular value " +
                                                 std::to_string(s2) + ", first " +
                                                 std::to_string(s1) + ")");
  }
  Eigen::Vector3d v1 = eig.eigenvectors().col(2);
  Eigen::Vector3d v2 = eig.eigenvectors().col(1);
  if (v1.sum() < 0.0) v1 = -v1;

  std::vector<double> angles(static_cast<std::size_t>(tissue.rows()));
  for (Eigen::Index i = 0; i < tissue.rows(); ++i) {
    angles[static_cast<std::size_t>(i)] =
        std::atan2(tissue.row(i).dot(v2), tissue.row(i).dot(v1));
  }
  const double phi_lo = percentile(angles, params.angle_percentile_lo);
  const double phi_hi = percentile(angles, params.angle_percentile_hi);

  Eigen::Vector3d a = orient_and_clip(std::cos(phi_lo) * v1 + std::sin(phi_lo) * v2);
  Eigen::Vector3d b = orient_and_clip(std::cos(phi_hi) * v1 + std::sin(phi_hi) * v2);
  // Hematoxylin absorbs red most strongly relative to eosin.
  if (b(0) > a(0)) std::swap(a, b);

  StainModel model;
  model.basis.col(0) = a;
  model.basis.col(1) = b;

  const Eigen::Matrix<double, 2, 3> pinv = basis_pinv(model.basis);
  std::vector<double> h(static_cast<std::size_t>(tissue.rows()));
  std::vector<double> e(h.size());
  for (Eigen::Index i = 0; i < tissue.rows(); ++i) {
    const Eigen::Vector2d c = (pinv * tissue.row(i).transpose()).cwiseMax(0.0);
    h[static_cast<std::size_t>(i)] = c(0);
    e[static_cast<std::size_t>(i)] = c(1);
  }
  model.max_concentration << percentile(std::move(h), params.conc_percentile),
      percentile(std::move(e), params.conc_percentile);
  if (!(model.max_concentration.array() > 0.0).all()) {
    throw Error(ErrorCode::DegenerateStains, "a stain has no positive concentration");
  }
  return model;
}

ConcentrationMap compute_concentrations(const OdImage& od, const StainModel& model) {
  const Eigen::Matrix<double, 2, 3> pinv = basis_pinv(model.basis);
  ConcentrationMap out;
  out.height = od.height;
  out.width = od.width;
  out.conc = (od.od * pinv.transpose()).cwiseMax(0.0);
  return out;
}

namespace {

RgbImage reconstruct(const OdImage& od, const StainModel& source, const StainModel& reference,
                     const StainParams& params) {
  ConcentrationMap conc = compute_concentrations(od, source);
  const Eigen::Array2d scale =
      reference.max_concentration.array() / source.max_concentration.array();
  conc.conc.array().rowwise() *= scale.transpose();

  OdImage rebuilt;
  rebuilt.height = od.height;
  rebuilt.width = od.width;
  rebuilt.od = conc.conc * reference.basis.transpose();
  return od_to_rgb(rebuilt, params);
}

}  // namespace

RgbImage normalize_macenko(const RgbImage& img, const StainModel& reference,
                           const StainParams& params) {
  reference.validate();
  const OdImage od = rgb_to_od(img, params);
  return reconstruct(od, estimate_stain_model(od, params), reference, params);
}

NormalizeOutcome normalize_or_passthrough(const RgbImage& img, const StainModel& reference,
                                          const StainParams& params) {
  reference.validate();
  NormalizeOutcome out;
  const OdImage od = rgb_to_od(img, params);
  try {
    out.source_model = estimate_stain_model(od, params);
    out.image = reconstruct(od, *out.source_model, reference, params);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::InsufficientTissue &&
        err.code() != ErrorCode::DegenerateStains) {
      throw;
    }
    out.image = img.clone();
    out.fallback = true;
    out.fallback_reason = std::string(err.code_name()) + ": " + err.what();
    out.source_model.reset();
  }
  return out;
}

}  // namespace glandscreen::stain
