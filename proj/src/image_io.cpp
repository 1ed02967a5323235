#include "dcg/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dcg/error.hpp"

namespace dcg {

cv::Mat to_mat(const torch::Tensor& chw) {
  if (chw.dim() != 3 || chw.size(0) != 3) throw ShapeError("expected a [3, H, W] image tensor");
  auto hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  const int h = static_cast<int>(hwc.size(0));
  const int w = static_cast<int>(hwc.size(1));
  cv::Mat out(h, w, CV_32FC3);
  std::memcpy(out.data, hwc.data_ptr<float>(), sizeof(float) * 3 * h * w);
  return out;
}

torch::Tensor from_mat(const cv::Mat& rgb) {
  cv::Mat m;
  rgb.convertTo(m, CV_32FC3);
  if (!m.isContinuous()) m = m.clone();
  auto t = torch::from_blob(m.data, {m.rows, m.cols, 3}, torch::kFloat32).clone();
  return t.permute({2, 0, 1}).contiguous();
}

torch::Tensor read_image(const std::string& path, int width, int height) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path);
  if (width > 0 && height > 0 && (bgr.cols != width || bgr.rows != height)) {
    cv::resize(bgr, bgr, cv::Size(width, height), 0, 0, cv::INTER_AREA);
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  return from_mat(rgb);
}

void write_image(const std::string& path, const torch::Tensor& chw) {
  cv::Mat rgb = to_mat(chw.clamp(0.0, 1.0));
  cv::Mat bgr8;
  cv::cvtColor(rgb, rgb, cv::COLOR_RGB2BGR);
  rgb.convertTo(bgr8, CV_8UC3, 255.0);
  if (!cv::imwrite(path, bgr8)) throw IoError("cannot write image " + path);
}

void write_gray(const std::string& path, const torch::Tensor& hw) {
  auto t = hw.detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
  cv::Mat m(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32FC1, t.data_ptr<float>());
  cv::Mat g8;
  m.convertTo(g8, CV_8UC1, 255.0);
  if (!cv::imwrite(path, g8)) throw IoError("cannot write image " + path);
}

}  // namespace dcg
