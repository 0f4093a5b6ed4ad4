#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "vremd/data.hpp"
#include "vremd/heads.hpp"

namespace vremd {

template <class Real>
struct DecodedPose {
  PoseAnnotation annotation;       // joints in source-image coordinates
  std::vector<Real> confidence;    // heatmap peak per joint
};

// Argmax decoding with quarter-pixel refinement along each axis toward the
// larger neighbor. Ties go to the lowest row, then the lowest column. The
// crop transform maps the result back into source-image coordinates.
template <class Real>
DecodedPose<Real> decode(const Heatmaps<Real>& maps,
                         const Affine2D& crop_tf = Affine2D::identity(),
                         double stride = 4.0) {
  const std::size_t j = maps.joints(), h = maps.height(), w = maps.width();
  const Affine2D inv = crop_tf.inverse();
  DecodedPose<Real> out;
  out.annotation.joints.resize(j);
  out.annotation.visibility.assign(j, true);
  out.confidence.resize(j);

  for (std::size_t k = 0; k < j; ++k) {
    std::size_t bx = 0, by = 0;
    Real best = maps.maps.at({k, 0, 0});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const Real v = maps.maps.at({k, y, x});
        if (v > best) {
          best = v;
          by = y;
          bx = x;
        }
      }
    double px = double(bx), py = double(by);
    if (bx > 0 && bx + 1 < w) {
      const Real dx = maps.maps.at({k, by, bx + 1}) - maps.maps.at({k, by, bx - 1});
      px += dx > 0 ? 0.25 : (dx < 0 ? -0.25 : 0.0);
    }
    if (by > 0 && by + 1 < h) {
      const Real dy = maps.maps.at({k, by + 1, bx}) - maps.maps.at({k, by - 1, bx});
      py += dy > 0 ? 0.25 : (dy < 0 ? -0.25 : 0.0);
    }
    const auto src = inv.apply(px * stride, py * stride);
    out.annotation.joints[k] = {src[0], src[1]};
    out.confidence[k] = best;
  }
  return out;
}

struct EvalReport {
  std::vector<std::string> joint_labels;
  std::vector<double> per_joint_ap;  // in [0, 100]
  double mean_ap = 0.0;
  double threshold = 0.5;
  std::size_t sample_count = 0;
};

// Head-segment length used by the distance rule; falls back to a fraction of
// the pose diagonal when the named head joints are absent.
inline double default_head_size(const PoseAnnotation& ann) {
  if (ann.joints.size() == 15) {
    const auto& a = ann.joints[1];  // head_bottom
    const auto& b = ann.joints[2];  // head_top
    const double d = std::hypot(a[0] - b[0], a[1] - b[1]);
    if (d > 1e-9) return d;
  }
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : ann.joints) {
    x0 = std::min(x0, p[0]);
    y0 = std::min(y0, p[1]);
    x1 = std::max(x1, p[0]);
    y1 = std::max(y1, p[1]);
  }
  return 0.3 * std::hypot(x1 - x0, y1 - y0);
}

// Per-joint average precision under a head-size-relative distance rule over
// matched prediction/ground-truth pairs, plus their mean.
inline EvalReport compute_map(
    const std::vector<PoseAnnotation>& preds,
    const std::vector<PoseAnnotation>& gts,
    const std::function<double(const PoseAnnotation&)>& head_size =
        default_head_size,
    double alpha = 0.5,
    const std::vector<std::string>& labels = {}) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument(
        "compute_map: need matched, non-empty prediction/ground-truth sets");
  const std::size_t j = gts[0].joints.size();

  EvalReport report;
  report.threshold = alpha;
  report.sample_count = preds.size();
  report.joint_labels = labels.empty() ? joint_names(j) : labels;

  std::vector<std::size_t> correct(j, 0), total(j, 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const double limit = alpha * head_size(gts[s]);
    for (std::size_t k = 0; k < j; ++k) {
      if (!gts[s].visibility[k]) continue;
      ++total[k];
      const double dx = preds[s].joints[k][0] - gts[s].joints[k][0];
      const double dy = preds[s].joints[k][1] - gts[s].joints[k][1];
      if (std::hypot(dx, dy) <= limit) ++correct[k];
    }
  }

  double acc = 0.0;
  std::size_t evaluated = 0;
  report.per_joint_ap.assign(j, 0.0);
  for (std::size_t k = 0; k < j; ++k) {
    if (total[k] == 0) {
      report.per_joint_ap[k] = -1.0;  // never visible; excluded from the mean
      continue;
    }
    report.per_joint_ap[k] = 100.0 * double(correct[k]) / double(total[k]);
    acc += report.per_joint_ap[k];
    ++evaluated;
  }
  if (evaluated == 0)
    throw std::invalid_argument("compute_map: no visible joints to evaluate");
  report.mean_ap = acc / double(evaluated);
  return report;
}

inline std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  for (const auto& name : r.joint_labels) os << name << ",";
  os << "Mean\n";
  os.setf(std::ios::fixed);
  os.precision(1);
  for (double ap : r.per_joint_ap) {
    if (ap < 0)
      os << "-,";
    else
      os << ap << ",";
  }
  os << r.mean_ap << "\n";
  return os.str();
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << "samples: " << r.sample_count << "  threshold: " << r.threshold
     << "\n";
  for (std::size_t k = 0; k < r.joint_labels.size(); ++k) {
    os << "  " << r.joint_labels[k] << ": ";
    if (r.per_joint_ap[k] < 0)
      os << "n/a\n";
    else
      os << r.per_joint_ap[k] << "\n";
  }
  os << "  Mean: " << r.mean_ap << "\n";
  return os.str();
}

}  // namespace vremd
