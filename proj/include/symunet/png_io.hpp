#pragma once

#include <png.h>

#include "symunet/tensor.hpp"

namespace symunet {

// 8-bit RGB PNG in, [3,H,W] float tensor in [0,1] out.
inline Tensor<float> read_png_rgb(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw FormatError("cannot read PNG '" + path + "': " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw FormatError("cannot decode PNG '" + path + "': " + image.message);
    }
    const int h = static_cast<int>(image.height), w = static_cast<int>(image.width);
    auto t = Tensor<float>::zeros({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t.data()[(static_cast<size_t>(c) * h + y) * w + x] =
                    static_cast<float>(buf[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0f;
    return t;
}

inline unsigned char to_u8(float v) {
    const float c = std::min(1.0f, std::max(0.0f, v));
    return static_cast<unsigned char>(std::lround(c * 255.0f));
}

inline void write_png_rgb(const std::string& path, const Tensor<float>& img) {
    check_dims(img.rank() == 3 && img.dim(0) == 3,
               "write_png_rgb: expected [3,H,W], got " + shape_str(img.shape()));
    const int h = img.dim(1), w = img.dim(2);
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                buf[(static_cast<size_t>(y) * w + x) * 3 + c] =
                    to_u8(img.data()[(static_cast<size_t>(c) * h + y) * w + x]);
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw FormatError("cannot write PNG '" + path + "': " + image.message);
}

// Grayscale writer for feature visualizations; accepts [H,W] or [1,H,W].
inline void write_png_gray(const std::string& path, const Tensor<float>& img) {
    int h = 0, w = 0;
    if (img.rank() == 2) {
        h = img.dim(0);
        w = img.dim(1);
    } else if (img.rank() == 3 && img.dim(0) == 1) {
        h = img.dim(1);
        w = img.dim(2);
    } else {
        throw DimensionError("write_png_gray: expected [H,W] or [1,H,W], got " +
                             shape_str(img.shape()));
    }
    std::vector<unsigned char> buf(static_cast<size_t>(h) * w);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(h) * w; ++i)
        buf[static_cast<size_t>(i)] = to_u8(img.data()[static_cast<size_t>(i)]);
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
        throw FormatError("cannot write PNG '" + path + "': " + image.message);
}

}  // namespace symunet
