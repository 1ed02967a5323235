#pragma once

#include <opencv2/core.hpp>
#include <string>

#include <torch/types.h>

namespace dcg {

/// [3, H, W] float tensor in [0, 1] (RGB) -> H x W CV_32FC3 (RGB order kept).
cv::Mat to_mat(const torch::Tensor& chw);
/// H x W CV_32FC3 -> [3, H, W] float32 tensor.
torch::Tensor from_mat(const cv::Mat& rgb);

/// Loads an 8-bit image as RGB float in [0, 1], resized to width x height when both are > 0.
torch::Tensor read_image(const std::string& path, int width = 0, int height = 0);
/// Writes a [3, H, W] tensor in [0, 1] as an 8-bit RGB image; format follows the extension.
void write_image(const std::string& path, const torch::Tensor& chw);
/// Writes a [H, W] map in [0, 1] as an 8-bit grayscale image.
void write_gray(const std::string& path, const torch::Tensor& hw);

}  // namespace dcg
