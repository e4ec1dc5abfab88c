#include "stereopose/image_io.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

#include "stereopose/errors.hpp"

namespace stereopose::geom {

namespace {

uint8_t quantize(double v) {
    const double c = std::min(1.0, std::max(0.0, v));
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

std::string next_token(std::istream& in) {
    std::string tok;
    // Skips whitespace and '#' comment lines per the PNM family spec.
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        }
        c = in.get();
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    if (tok.empty()) throw IoError("unexpected end of header");
    return tok;
}

}  // namespace

void write_pnm(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw IoError("PNM supports 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                row[static_cast<size_t>(x) * img.channels + c] = quantize(img.at(x, y, c));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

Image read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    try {
        magic = next_token(f);
    } catch (const IoError&) {
        throw IoError("corrupt PNM header: " + path);
    }
    int channels = 0;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw IoError("unsupported PNM magic '" + magic + "' in " + path);
    }
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token(f));
        height = std::stoi(next_token(f));
        maxval = std::stoi(next_token(f));
    } catch (const std::exception&) {
        throw IoError("corrupt PNM header: " + path);
    }
    if (width <= 0 || height <= 0 || maxval != 255) throw IoError("unsupported PNM parameters in " + path);
    Image img(width, height, channels);
    std::vector<uint8_t> row(static_cast<size_t>(width) * channels);
    for (int y = 0; y < height; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (f.gcount() != static_cast<std::streamsize>(row.size())) throw IoError("truncated PNM data: " + path);
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < channels; ++c) {
                img.at(x, y, c) = row[static_cast<size_t>(x) * channels + c] / 255.0;
            }
        }
    }
    return img;
}

void write_pfm(const std::string& path, const DisparityMap& disp) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "Pf\n" << disp.width << " " << disp.height << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(disp.width));
    for (int y = disp.height - 1; y >= 0; --y) {  // PFM stores rows bottom-up
        for (int x = 0; x < disp.width; ++x) {
            const int64_t i = disp.idx(x, y);
            row[static_cast<size_t>(x)] = disp.valid[static_cast<size_t>(i)]
                                              ? static_cast<float>(disp.d[static_cast<size_t>(i)])
                                              : std::numeric_limits<float>::infinity();
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

DisparityMap read_pfm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for read: " + path);
    std::string magic;
    try {
        magic = next_token(f);
    } catch (const IoError&) {
        throw IoError("corrupt PFM header: " + path);
    }
    if (magic != "Pf") throw IoError("unsupported PFM magic in " + path + " (grayscale 'Pf' expected)");
    int width = 0, height = 0;
    double scale = 0.0;
    try {
        width = std::stoi(next_token(f));
        height = std::stoi(next_token(f));
        scale = std::stod(next_token(f));
    } catch (const std::exception&) {
        throw IoError("corrupt PFM header: " + path);
    }
    if (width <= 0 || height <= 0) throw IoError("corrupt PFM header: " + path);
    if (scale >= 0.0) throw IoError("big-endian PFM not supported: " + path);
    DisparityMap disp(width, height);
    std::vector<float> row(static_cast<size_t>(width));
    for (int y = height - 1; y >= 0; --y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(row.size() * sizeof(float))) {
            throw IoError("truncated PFM data: " + path);
        }
        for (int x = 0; x < width; ++x) {
            const float v = row[static_cast<size_t>(x)];
            const int64_t i = disp.idx(x, y);
            if (std::isfinite(v) && v >= 0.0f) {
                disp.d[static_cast<size_t>(i)] = v;
                disp.valid[static_cast<size_t>(i)] = 1;
            }
        }
    }
    return disp;
}

void write_mask_pgm(const std::string& path, const std::vector<uint8_t>& mask, int width, int height) {
    Image img(width, height, 1);
    for (size_t i = 0; i < mask.size(); ++i) img.px[i] = mask[i] ? 1.0 : 0.0;
    write_pnm(path, img);
}

std::vector<uint8_t> read_mask_pgm(const std::string& path, int& width, int& height) {
    Image img = read_pnm(path);
    if (img.channels != 1) throw IoError("mask must be single-channel: " + path);
    width = img.width;
    height = img.height;
    std::vector<uint8_t> mask(img.px.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = img.px[i] > 0.5 ? 1 : 0;
    return mask;
}

}  // namespace stereopose::geom
