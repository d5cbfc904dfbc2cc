#include "maskclip/evaluation.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "maskclip/errors.hpp"
#include "maskclip/image_ops.hpp"

namespace maskclip::evaluation {

PixelCounts pixel_counts(const cv::Mat& pred, const cv::Mat& gt) {
  if (pred.size() != gt.size()) throw ShapeError("prediction and ground-truth masks differ in size");
  if (pred.type() != CV_8UC1 || gt.type() != CV_8UC1) throw ShapeError("masks must be CV_8UC1");
  PixelCounts c;
  for (int y = 0; y < gt.rows; ++y) {
    const uchar* p = pred.ptr<uchar>(y);
    const uchar* g = gt.ptr<uchar>(y);
    for (int x = 0; x < gt.cols; ++x) {
      const bool pp = p[x] != 0, gg = g[x] != 0;
      c.tp += pp && gg;
      c.fp += pp && !gg;
      c.fn += !pp && gg;
    }
  }
  return c;
}

PixelScores scores_from_counts(const PixelCounts& c, bool allow_empty) {
  const double denom = static_cast<double>(c.tp + c.fp + c.fn);
  if (denom == 0) return allow_empty ? PixelScores{1.0, 1.0} : PixelScores{0.0, 0.0};
  PixelScores s;
  s.f1 = 2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn);
  s.iou = c.tp / denom;
  return s;
}

PixelScores pixel_metrics(const cv::Mat& pred, const cv::Mat& gt, bool allow_empty) {
  return scores_from_counts(pixel_counts(pred, gt), allow_empty);
}

ImageScores image_metrics(const std::vector<double>& p_fake, const std::vector<data::Label>& labels, double threshold) {
  if (p_fake.empty()) throw ValidationError("image_metrics needs at least one prediction");
  if (p_fake.size() != labels.size()) throw ValidationError("image_metrics: predictions and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < p_fake.size(); ++i) {
    const bool pred = p_fake[i] > threshold;
    const bool fake = labels[i] == data::Label::fake;
    tp += pred && fake;
    fp += pred && !fake;
    fn += !pred && fake;
    correct += pred == fake;
  }
  ImageScores s;
  const double denom = 2.0 * tp + fp + fn;
  s.f1 = denom > 0 ? 2.0 * tp / denom : 0.0;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(p_fake.size());
  return s;
}

namespace {

SubsetRecord score_subset(const std::string& name, const std::vector<const ImageResult*>& items, double threshold,
                          bool micro_average) {
  SubsetRecord r;
  r.subset = name;
  r.n_images = items.size();
  std::vector<double> p;
  std::vector<data::Label> labels;
  PixelCounts pooled;
  double f1_sum = 0, iou_sum = 0;
  for (const auto* it : items) {
    p.push_back(it->p_fake);
    labels.push_back(it->label);
    if (cv::countNonZero(it->gt_mask) == 0) continue;
    ++r.n_manipulated;
    const auto c = pixel_counts(it->pred_mask, it->gt_mask);
    pooled += c;
    const auto s = scores_from_counts(c);
    f1_sum += s.f1;
    iou_sum += s.iou;
  }
  const auto img = image_metrics(p, labels, threshold);
  r.image_f1 = img.f1;
  r.image_acc = img.accuracy;
  if (r.n_manipulated > 0) {
    if (micro_average) {
      const auto s = scores_from_counts(pooled);
      r.pixel_f1 = s.f1;
      r.pixel_iou = s.iou;
    } else {
      r.pixel_f1 = f1_sum / static_cast<double>(r.n_manipulated);
      r.pixel_iou = iou_sum / static_cast<double>(r.n_manipulated);
    }
  }
  return r;
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

MetricReport aggregate(const std::vector<ImageResult>& results, double threshold, bool micro_average) {
  if (results.empty()) throw ValidationError("cannot aggregate an empty result set");
  std::map<std::string, std::vector<const ImageResult*>> groups;
  for (const auto& r : results) groups[r.subset].push_back(&r);

  MetricReport report;
  for (const auto& [name, items] : groups) report.subsets.push_back(score_subset(name, items, threshold, micro_average));

  auto& avg = report.average;
  avg.subset = "AVG";
  double pf1 = 0, piou = 0;
  std::size_t with_pixels = 0;
  for (const auto& s : report.subsets) {
    avg.n_images += s.n_images;
    avg.n_manipulated += s.n_manipulated;
    avg.image_f1 += s.image_f1;
    avg.image_acc += s.image_acc;
    if (s.pixel_f1) {
      pf1 += *s.pixel_f1;
      piou += *s.pixel_iou;
      ++with_pixels;
    }
  }
  const auto k = static_cast<double>(report.subsets.size());
  avg.image_f1 /= k;
  avg.image_acc /= k;
  if (with_pixels > 0) {
    avg.pixel_f1 = pf1 / static_cast<double>(with_pixels);
    avg.pixel_iou = piou / static_cast<double>(with_pixels);
  }
  return report;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "subset,n_images,pixel_IoU,pixel_F1,image_F1,image_Acc\n";
  auto row = [&](const SubsetRecord& r) {
    out << r.subset << ',' << r.n_images << ',' << cell(r.pixel_iou) << ',' << cell(r.pixel_f1) << ',' << cell(r.image_f1)
        << ',' << cell(r.image_acc) << '\n';
  };
  for (const auto& s : subsets) row(s);
  row(average);
  return out.str();
}

nlohmann::json MetricReport::to_json() const {
  auto rec = [](const SubsetRecord& r) {
    nlohmann::json j{{"subset", r.subset},
                     {"n_images", r.n_images},
                     {"n_manipulated", r.n_manipulated},
                     {"image_F1", r.image_f1},
                     {"image_Acc", r.image_acc}};
    j["pixel_F1"] = r.pixel_f1 ? nlohmann::json(*r.pixel_f1) : nlohmann::json(nullptr);
    j["pixel_IoU"] = r.pixel_iou ? nlohmann::json(*r.pixel_iou) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json j;
  j["subsets"] = nlohmann::json::array();
  for (const auto& s : subsets) j["subsets"].push_back(rec(s));
  j["average"] = rec(average);
  return j;
}

std::vector<ImageResult> predict_manifest(const data::Manifest& split, engine::ModelState& state,
                                          const EvaluateOptions& options) {
  if (split.entries.empty()) throw ValidationError("evaluation split is empty");
  const auto& cfg = state.model->config();
  std::vector<ImageResult> results;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < split.entries.size(); start += bs) {
    std::vector<data::AugmentedSample> views;
    std::vector<cv::Size> sizes;
    std::vector<data::ImageSample> originals;
    for (std::size_t i = start; i < std::min(split.entries.size(), start + bs); ++i) {
      auto sample = data::load_sample(split, split.entries[i]);
      auto v = data::prepare_views(sample, cfg.spatial.input_size, cfg.semantic.input_size);
      if (options.degrade) {
        v.sample.image = options.degrade(v.sample.image);
        v.semantic_view = image_ops::resize_image(v.sample.image, cfg.semantic.input_size, cfg.semantic.input_size);
      }
      sizes.push_back(sample.image.size());
      views.push_back(std::move(v));
      originals.push_back(std::move(sample));
    }
    auto preds = engine::predict_views(state, views, sizes, options.threshold);
    for (std::size_t i = 0; i < preds.size(); ++i) {
      ImageResult r;
      r.subset = originals[i].generator_tag;
      r.label = originals[i].label;
      r.p_fake = preds[i].p_fake;
      r.pred_mask = preds[i].mask_binary;
      r.gt_mask = originals[i].mask;
      results.push_back(std::move(r));
    }
  }
  return results;
}

MetricReport evaluate(const data::Manifest& split, engine::ModelState& state, const EvaluateOptions& options) {
  return aggregate(predict_manifest(split, state, options), options.threshold, options.micro_average);
}

}  // namespace maskclip::evaluation
