#pragma once

#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "hgllim/error.hpp"
#include "hgllim/hog.hpp"

namespace hgllim {

/// Decodes any format OpenCV understands into an RGB or grey Image.
inline Image opencv_decode(const std::string& path) {
    const cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw DataError("cannot decode image " + path);
    cv::Mat f;
    const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : (m.depth() == CV_8U ? 1.0 / 255.0 : 1.0);
    m.convertTo(f, CV_64F, scale);
    Image img;
    img.width = f.cols;
    img.height = f.rows;
    const int ch = f.channels();
    img.channels = ch == 1 ? 1 : 3;
    img.pixels.reserve(static_cast<std::size_t>(img.width * img.height * img.channels));
    for (int y = 0; y < f.rows; ++y) {
        const double* row = f.ptr<double>(y);
        for (int x = 0; x < f.cols; ++x) {
            if (ch == 1) {
                img.pixels.push_back(row[x]);
            } else {
                // BGR(A) -> RGB
                img.pixels.push_back(row[x * ch + 2]);
                img.pixels.push_back(row[x * ch + 1]);
                img.pixels.push_back(row[x * ch + 0]);
            }
        }
    }
    return img;
}

}  // namespace hgllim
