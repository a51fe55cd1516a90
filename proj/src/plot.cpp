#include "maskpose/plot.hpp"

#include <algorithm>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "maskpose/errors.hpp"

namespace maskpose {

void render_curves(const std::filesystem::path& path, const std::vector<CurveSeries>& series,
                   const std::string& title) {
  constexpr int kWidth = 640, kHeight = 480;
  constexpr int kLeft = 60, kRight = 170, kTop = 40, kBottom = 50;
  const int pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  cv::Mat img(kHeight, kWidth, CV_8UC3, cv::Scalar(255, 255, 255));

  double max_t = 0.0;
  for (const auto& s : series) {
    for (const auto& p : s.points) max_t = std::max(max_t, p.threshold);
  }
  if (max_t <= 0.0) max_t = kAucMaxThreshold;
  auto to_px = [&](double t, double acc) {
    return cv::Point(kLeft + static_cast<int>(pw * t / max_t), kTop + ph - static_cast<int>(ph * acc / 100.0));
  };

  const cv::Scalar grid(220, 220, 220), black(0, 0, 0);
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  for (int k = 0; k <= 10; ++k) {
    const double t = max_t * k / 10.0;
    cv::line(img, to_px(t, 0), to_px(t, 100), grid);
    cv::line(img, to_px(0, k * 10.0), to_px(max_t, k * 10.0), grid);
    if (k % 2 == 0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.0f", t * 100.0);
      cv::putText(img, buf, to_px(t, 0) + cv::Point(-6, 18), font, 0.4, black);
      std::snprintf(buf, sizeof buf, "%d", k * 10);
      cv::putText(img, buf, to_px(0, k * 10.0) + cv::Point(-30, 4), font, 0.4, black);
    }
  }
  cv::rectangle(img, to_px(0, 100), to_px(max_t, 0), black);
  cv::putText(img, "threshold (cm)", cv::Point(kLeft + pw / 2 - 50, kHeight - 12), font, 0.45, black);
  cv::putText(img, "accuracy (%)", cv::Point(6, kTop - 10), font, 0.45, black);
  int baseline = 0;
  const cv::Size title_size = cv::getTextSize(title, font, 0.55, 1, &baseline);
  cv::putText(img, title, cv::Point(kLeft + (pw - title_size.width) / 2, 20), font, 0.55, black);

  static const cv::Scalar palette[] = {{0, 0, 0},     {200, 60, 30},  {40, 140, 40}, {30, 30, 200},
                                       {160, 40, 160}, {20, 140, 200}, {120, 120, 0}, {90, 90, 90}};
  for (std::size_t i = 0; i < series.size(); ++i) {
    const cv::Scalar color = palette[i % std::size(palette)];
    std::vector<cv::Point> line;
    for (const auto& p : series[i].points) line.push_back(to_px(p.threshold, p.accuracy));
    if (!line.empty()) cv::polylines(img, line, false, color, 2, cv::LINE_AA);
    const cv::Point legend(kWidth - kRight + 15, kTop + 20 + static_cast<int>(i) * 20);
    cv::line(img, legend, legend + cv::Point(20, 0), color, 2);
    cv::putText(img, series[i].label, legend + cv::Point(26, 4), font, 0.4, black);
  }
  if (!cv::imwrite(path.string(), img)) throw InvalidArgument("cannot write image " + path.string());
}

}  // namespace maskpose
