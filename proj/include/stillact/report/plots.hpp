#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "stillact/core/image.hpp"
#include "stillact/dataset/eda.hpp"
#include "stillact/dataset/manifest.hpp"
#include "stillact/explain/legrad.hpp"
#include "stillact/train/harness.hpp"
#include "stillact/train/rundir.hpp"

// Figure rendering. Plots are rasterized with basic primitives; every figure
// gets a JSON sidecar carrying the underlying numbers plus provenance, which
// is what reproducibility checks compare (pixels are not contract).

namespace stillact {

namespace plot {

inline const std::vector<cv::Scalar>& class_colors() {
  static const std::vector<cv::Scalar> colors = {
      cv::Scalar(60, 76, 231),   // walking_running (bgr red-ish)
      cv::Scalar(113, 204, 46),  // sitting (green)
      cv::Scalar(219, 152, 52),  // standing (blue)
  };
  return colors;
}

struct Canvas {
  cv::Mat img;
  double x0, x1, y0, y1;
  cv::Rect area;

  Canvas(int w, int h, double xmin, double xmax, double ymin, double ymax,
         const std::string& title, const std::string& xlabel, const std::string& ylabel)
      : img(h, w, CV_8UC3, cv::Scalar(255, 255, 255)), x0(xmin), x1(xmax), y0(ymin), y1(ymax),
        area(70, 45, w - 95, h - 95) {
    cv::rectangle(img, area, cv::Scalar(40, 40, 40), 1);
    cv::putText(img, title, {area.x, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(20, 20, 20), 1,
                cv::LINE_AA);
    cv::putText(img, xlabel, {area.x + area.width / 2 - 40, h - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
    cv::putText(img, ylabel, {8, area.y - 10}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
    for (int t = 0; t <= 5; ++t) {
      const double fx = x0 + (x1 - x0) * t / 5.0;
      const double fy = y0 + (y1 - y0) * t / 5.0;
      const cv::Point px = map(fx, y0), py = map(x0, fy);
      cv::line(img, {px.x, area.y + area.height}, {px.x, area.y + area.height + 4},
               cv::Scalar(40, 40, 40), 1);
      cv::line(img, {area.x - 4, py.y}, {area.x, py.y}, cv::Scalar(40, 40, 40), 1);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", fx);
      cv::putText(img, buf, {px.x - 14, area.y + area.height + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.35,
                  cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
      std::snprintf(buf, sizeof(buf), "%g", fy);
      cv::putText(img, buf, {10, py.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, cv::Scalar(60, 60, 60),
                  1, cv::LINE_AA);
    }
  }

  cv::Point map(double x, double y) const {
    const double nx = (x - x0) / (x1 - x0), ny = (y - y0) / (y1 - y0);
    return {area.x + static_cast<int>(nx * area.width),
            area.y + area.height - static_cast<int>(ny * area.height)};
  }

  void legend(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const cv::Point p(area.x + area.width - 150, area.y + 16 + 18 * static_cast<int>(i));
      cv::circle(img, p, 4, class_colors()[i % class_colors().size()], cv::FILLED, cv::LINE_AA);
      cv::putText(img, names[i], {p.x + 10, p.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                  cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
    }
  }

  void save(const std::filesystem::path& path) const {
    std::filesystem::create_directories(path.parent_path());
    require(cv::imwrite(path.string(), img), "plot: cannot write " + path.string());
  }
};

struct Quartiles {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

inline Quartiles quartiles(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto quant = [&](double q) {
    const double pos = q * (static_cast<double>(v.size()) - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < v.size() ? v[lo] * (1 - frac) + v[lo + 1] * frac : v[lo];
  };
  return {v.front(), quant(0.25), quant(0.5), quant(0.75), v.back()};
}

}  // namespace plot

/// The four dimension figures plus a JSON sidecar with the plotted data.
inline void render_eda_figures(const DatasetManifest& manifest, const EdaReport& eda,
                               const std::filesystem::path& out_dir, const Provenance& prov) {
  std::filesystem::create_directories(out_dir);
  const auto classes = canonical_class_order();

  {  // scatter
    plot::Canvas c(640, 480, 250, 700, 200, 700, "Image dimensions by activity", "width (px)",
                   "height (px)");
    for (const auto& r : manifest.records)
      cv::circle(c.img, c.map(r.width, r.height), 3,
                 plot::class_colors()[static_cast<int>(r.label)], cv::FILLED, cv::LINE_AA);
    c.legend(classes);
    c.save(out_dir / "eda_scatter.png");
  }

  {  // grouped box plots: width and height per class
    plot::Canvas c(720, 480, 0, 6.5, 200, 700, "Width/height quartiles by activity", "",
                   "pixels");
    double slot = 0.5;
    for (int which = 0; which < 2; ++which) {
      for (std::size_t k = 0; k < classes.size(); ++k) {
        std::vector<double> vals;
        for (const auto& r : manifest.records)
          if (static_cast<std::size_t>(r.label) == k)
            vals.push_back(which == 0 ? r.width : r.height);
        const auto q = plot::quartiles(vals);
        const auto color = plot::class_colors()[k];
        const int xc = c.map(slot, 0).x;
        const int half = 16;
        cv::rectangle(c.img, cv::Point(xc - half, c.map(0, q.q3).y),
                      cv::Point(xc + half, c.map(0, q.q1).y), color, 1, cv::LINE_AA);
        cv::line(c.img, {xc - half, c.map(0, q.median).y}, {xc + half, c.map(0, q.median).y}, color,
                 2, cv::LINE_AA);
        cv::line(c.img, {xc, c.map(0, q.q3).y}, {xc, c.map(0, q.max).y}, color, 1, cv::LINE_AA);
        cv::line(c.img, {xc, c.map(0, q.q1).y}, {xc, c.map(0, q.min).y}, color, 1, cv::LINE_AA);
        cv::putText(c.img, which == 0 ? "w" : "h", {xc - 5, c.area.y + c.area.height + 18},
                    cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(60, 60, 60), 1, cv::LINE_AA);
        slot += 1.0;
      }
    }
    c.legend(classes);
    c.save(out_dir / "eda_box.png");
  }

  auto histogram = [](const std::vector<double>& vals, double lo, double hi, int bins) {
    std::vector<int> counts(bins, 0);
    for (double v : vals) {
      int b = static_cast<int>((v - lo) / (hi - lo) * bins);
      b = std::clamp(b, 0, bins - 1);
      counts[b]++;
    }
    return counts;
  };

  std::vector<double> aspects, widths, heights;
  for (const auto& r : manifest.records) {
    aspects.push_back(static_cast<double>(r.width) / r.height);
    widths.push_back(r.width);
    heights.push_back(r.height);
  }

  {  // aspect histogram
    const auto counts = histogram(aspects, 0.3, 2.8, 25);
    const int peak = *std::max_element(counts.begin(), counts.end());
    plot::Canvas c(640, 480, 0.3, 2.8, 0, peak + 5, "Aspect ratio distribution", "width/height",
                   "images");
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double xl = 0.3 + 2.5 * static_cast<double>(b) / counts.size();
      const double xr = 0.3 + 2.5 * static_cast<double>(b + 1) / counts.size();
      cv::rectangle(c.img, c.map(xl, counts[b]), c.map(xr, 0), cv::Scalar(180, 120, 60),
                    cv::FILLED);
      cv::rectangle(c.img, c.map(xl, counts[b]), c.map(xr, 0), cv::Scalar(90, 60, 30), 1);
    }
    c.save(out_dir / "eda_aspect_hist.png");
  }

  {  // overlaid width/height distributions as step curves
    const int bins = 22;
    const auto wc = histogram(widths, 200, 660, bins);
    const auto hc = histogram(heights, 200, 660, bins);
    const int peak = std::max(*std::max_element(wc.begin(), wc.end()),
                              *std::max_element(hc.begin(), hc.end()));
    plot::Canvas c(640, 480, 200, 660, 0, peak + 5, "Width and height distributions", "pixels",
                   "images");
    auto draw_steps = [&](const std::vector<int>& counts, const cv::Scalar& color) {
      std::vector<cv::Point> pts;
      for (int b = 0; b < bins; ++b) {
        const double xl = 200 + 460.0 * b / bins, xr = 200 + 460.0 * (b + 1) / bins;
        pts.push_back(c.map(xl, counts[b]));
        pts.push_back(c.map(xr, counts[b]));
      }
      cv::polylines(c.img, pts, false, color, 2, cv::LINE_AA);
    };
    draw_steps(wc, cv::Scalar(180, 120, 60));
    draw_steps(hc, cv::Scalar(60, 120, 180));
    cv::putText(c.img, "width", {c.area.x + c.area.width - 110, c.area.y + 16},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(180, 120, 60), 1, cv::LINE_AA);
    cv::putText(c.img, "height", {c.area.x + c.area.width - 110, c.area.y + 34},
                cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(60, 120, 180), 1, cv::LINE_AA);
    c.save(out_dir / "eda_overlay_hist.png");
  }

  write_json_artifact(
      prov.stamp(nlohmann::json{{"eda", eda_to_json(eda)},
                                {"figures", {"eda_scatter.png", "eda_box.png",
                                             "eda_aspect_hist.png", "eda_overlay_hist.png"}}}),
      out_dir / "eda_figures.json");
}

/// Thumbnail grid of misclassified samples annotated true/predicted/confidence.
inline void render_misclassified_gallery(
    const std::string& family, const std::vector<std::uint64_t>& ids,
    const std::vector<Prediction>& wrong, const DatasetManifest& manifest,
    const std::filesystem::path& cache_dir, const std::vector<std::string>& class_order,
    const std::filesystem::path& out_png) {
  const int thumb = 96, label_h = 26, cols = std::max(1, std::min<int>(6, static_cast<int>(wrong.size())));
  const int rows = wrong.empty() ? 1 : (static_cast<int>(wrong.size()) + cols - 1) / cols;
  cv::Mat sheet(38 + rows * (thumb + label_h), 12 + cols * (thumb + 8), CV_8UC3,
                cv::Scalar(250, 250, 250));
  cv::putText(sheet, family + ": " + std::to_string(wrong.size()) + " misclassified",
              {10, 24}, cv::FONT_HERSHEY_SIMPLEX, 0.55, cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
  for (std::size_t k = 0; k < wrong.size(); ++k) {
    const auto& p = wrong[k];
    const std::uint64_t id = ids[p.sample];
    const ImageRecord* rec = nullptr;
    for (const auto& r : manifest.records)
      if (r.image_id == id) rec = &r;
    cv::Mat cell(thumb, thumb, CV_8UC3, cv::Scalar(210, 210, 210));
    if (rec) {
      if (auto img = decode_image_file(cached_image_path(*rec, cache_dir).string()))
        cell = image_to_mat(resize_bilinear(*img, thumb, thumb));
    }
    const int cx = 6 + static_cast<int>(k) % cols * (thumb + 8);
    const int cy = 34 + static_cast<int>(k) / cols * (thumb + label_h);
    cell.copyTo(sheet(cv::Rect(cx, cy, thumb, thumb)));
    cv::rectangle(sheet, cv::Rect(cx, cy, thumb, thumb), cv::Scalar(0, 0, 200), 1);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s>%s %.2f", class_order[p.label].substr(0, 4).c_str(),
                  class_order[p.predicted].substr(0, 4).c_str(), p.confidence);
    cv::putText(sheet, buf, {cx, cy + thumb + 14}, cv::FONT_HERSHEY_SIMPLEX, 0.34,
                cv::Scalar(20, 20, 20), 1, cv::LINE_AA);
  }
  if (wrong.empty())
    cv::putText(sheet, "no misclassifications", {10, 60}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(0, 120, 0), 1, cv::LINE_AA);
  std::filesystem::create_directories(out_png.parent_path());
  require(cv::imwrite(out_png.string(), sheet), "gallery: cannot write " + out_png.string());
}

/// Heatmap (red) alpha-blended over the original image at 0.5.
inline Image saliency_overlay(const Image& original, const SaliencyMap& map) {
  Image out = original;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const std::size_t gy = std::min<std::size_t>(map.grid - 1,
                                                   static_cast<std::size_t>(y) * map.grid / out.height);
      const std::size_t gx = std::min<std::size_t>(map.grid - 1,
                                                   static_cast<std::size_t>(x) * map.grid / out.width);
      const float v = static_cast<float>(map.at(gy, gx));
      out.at(y, x, 0) = 0.5f * out.at(y, x, 0) + 0.5f * v;          // red carries the heat
      out.at(y, x, 1) = 0.5f * out.at(y, x, 1);
      out.at(y, x, 2) = 0.5f * out.at(y, x, 2) + 0.5f * (1 - v) * 0.2f;
    }
  return out;
}

}  // namespace stillact
