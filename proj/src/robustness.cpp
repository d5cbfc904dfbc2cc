#include "maskclip/robustness.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "maskclip/errors.hpp"
#include "maskclip/image_ops.hpp"

namespace maskclip::robustness {

std::string to_string(DegradationKind k) { return k == DegradationKind::gaussian_blur ? "gaussian_blur" : "jpeg"; }

void DegradationSpec::validate() const {
  if (levels.empty()) throw ValidationError("degradation spec has no levels");
  for (int l : levels) {
    if (kind == DegradationKind::gaussian_blur) {
      if (l != 1 && (l < 3 || l % 2 == 0)) throw ValidationError("blur kernels must be odd and >= 3 (or 1 for passthrough), got " + std::to_string(l));
    } else if (l < 1 || l > 100) {
      throw ValidationError("jpeg quality must be in [1,100], got " + std::to_string(l));
    }
  }
}

DegradationSpec DegradationSpec::blur_protocol() {
  DegradationSpec s{DegradationKind::gaussian_blur, {}};
  for (int k = 3; k <= 23; k += 2) s.levels.push_back(k);
  return s;
}

DegradationSpec DegradationSpec::jpeg_protocol() { return {DegradationKind::jpeg, {100, 90, 80, 70, 60}}; }

cv::Mat degrade(const cv::Mat& image, DegradationKind kind, int level) {
  DegradationSpec{kind, {level}}.validate();
  return kind == DegradationKind::gaussian_blur ? image_ops::gaussian_blur(image, level)
                                                : image_ops::jpeg_roundtrip(image, level);
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "kind,level,subset,metric,value\n";
  auto emit = [&](const SweepRow& row, const evaluation::SubsetRecord& r) {
    auto line = [&](const char* metric, double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", v);
      out << to_string(row.kind) << ',' << row.level << ',' << r.subset << ',' << metric << ',' << buf << '\n';
    };
    if (r.pixel_f1) line("pixel_F1", *r.pixel_f1);
    if (r.pixel_iou) line("pixel_IoU", *r.pixel_iou);
    line("image_F1", r.image_f1);
    line("image_Acc", r.image_acc);
  };
  for (const auto& row : rows) {
    for (const auto& s : row.report.subsets) emit(row, s);
    emit(row, row.report.average);
  }
  return out.str();
}

SweepResult sweep(const data::Manifest& split, engine::ModelState& state, const std::vector<DegradationSpec>& specs,
                  const evaluation::EvaluateOptions& base) {
  SweepResult result;
  for (const auto& spec : specs) {
    spec.validate();
    for (int level : spec.levels) {
      auto opts = base;
      const auto kind = spec.kind;
      opts.degrade = [kind, level](const cv::Mat& img) { return degrade(img, kind, level); };
      result.rows.push_back({kind, level, evaluation::evaluate(split, state, opts)});
    }
  }
  return result;
}

namespace {

std::optional<double> metric_of(const evaluation::SubsetRecord& r, const std::string& metric) {
  if (metric == "pixel_F1") return r.pixel_f1;
  if (metric == "pixel_IoU") return r.pixel_iou;
  if (metric == "image_F1") return r.image_f1;
  if (metric == "image_Acc") return r.image_acc;
  throw ValidationError("unknown metric: " + metric);
}

}  // namespace

void plot(const SweepResult& result, DegradationKind kind, const std::string& metric, const std::filesystem::path& out) {
  std::map<std::string, std::vector<std::pair<int, double>>> series;
  std::vector<int> levels;
  for (const auto& row : result.rows) {
    if (row.kind != kind) continue;
    levels.push_back(row.level);
    for (const auto& s : row.report.subsets)
      if (auto v = metric_of(s, metric)) series[s.subset].emplace_back(row.level, *v);
    if (auto v = metric_of(row.report.average, metric)) series["AVG"].emplace_back(row.level, *v);
  }
  if (levels.empty()) throw ValidationError("no sweep rows for " + to_string(kind));
  const auto [lo_it, hi_it] = std::minmax_element(levels.begin(), levels.end());
  const double lo = *lo_it, hi = *hi_it == *lo_it ? *lo_it + 1 : *hi_it;

  const int width = 640, height = 420, left = 60, right = 150, top = 40, bottom = 50;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int pw = width - left - right, ph = height - top - bottom;
  auto px = [&](double level) { return left + static_cast<int>((level - lo) / (hi - lo) * pw); };
  auto py = [&](double v) { return top + static_cast<int>((1.0 - std::clamp(v, 0.0, 1.0)) * ph); };

  cv::rectangle(canvas, {left, top}, {left + pw, top + ph}, cv::Scalar(0, 0, 0), 1);
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    cv::line(canvas, {left - 4, py(v)}, {left, py(v)}, cv::Scalar(0, 0, 0));
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    cv::putText(canvas, buf, {8, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
  }
  for (int level : levels) {
    cv::line(canvas, {px(level), top + ph}, {px(level), top + ph + 4}, cv::Scalar(0, 0, 0));
    cv::putText(canvas, std::to_string(level), {px(level) - 8, top + ph + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                cv::Scalar(0, 0, 0));
  }
  cv::putText(canvas, metric + " vs " + to_string(kind) + " level", {left, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.55,
              cv::Scalar(0, 0, 0));

  static const cv::Scalar palette[] = {{40, 40, 220}, {200, 120, 30}, {40, 160, 40}, {160, 40, 160}, {30, 160, 200}, {90, 90, 90}};
  int idx = 0;
  for (auto& [name, pts] : series) {
    const auto color = palette[idx % 6];
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const cv::Point p(px(pts[i].first), py(pts[i].second));
      cv::circle(canvas, p, 3, color, cv::FILLED);
      if (i > 0) cv::line(canvas, {px(pts[i - 1].first), py(pts[i - 1].second)}, p, color, 2);
    }
    const int ly = top + 14 + 18 * idx;
    cv::line(canvas, {left + pw + 10, ly - 4}, {left + pw + 30, ly - 4}, color, 2);
    cv::putText(canvas, name, {left + pw + 36, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
    ++idx;
  }
  if (!cv::imwrite(out.string(), canvas)) throw IoError("cannot write plot: " + out.string());
}

}  // namespace maskclip::robustness
