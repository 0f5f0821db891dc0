#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <png.h>

#include "setreg/core.hpp"

namespace setreg::tools {

// 8-bit grayscale export of a float map, linearly windowed to [lo, hi].
inline void write_png(const std::filesystem::path &path, const Image<double> &img, double lo, double hi) {
    if(!(hi > lo)) throw std::invalid_argument("write_png: empty window");
    std::FILE *fp = std::fopen(path.string().c_str(), "wb");
    if(!fp) throw std::runtime_error("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if(!png || !info){
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng initialization failed");
    }
    std::vector<png_byte> rows(img.height * img.width);
    for(std::size_t i = 0; i < rows.size(); ++i){
        const double v = std::isfinite(img.data[i]) ? (img.data[i] - lo) / (hi - lo) : 0.0;
        rows[i] = static_cast<png_byte>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
    }
    std::vector<png_bytep> ptrs(img.height);
    for(std::size_t y = 0; y < img.height; ++y) ptrs[y] = rows.data() + y * img.width;
    if(setjmp(png_jmpbuf(png))){
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng write failed: " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace setreg::tools
