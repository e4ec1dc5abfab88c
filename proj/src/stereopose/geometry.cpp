#include "stereopose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nk/random.hpp"
#include "stereopose/errors.hpp"

namespace stereopose::geom {

void CameraIntrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw DegenerateInputError("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw DegenerateInputError("intrinsics: image size must be positive");
    if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
        throw DegenerateInputError("intrinsics: principal point outside image");
    }
}

void StereoRig::validate() const {
    intrinsics.validate();
    if (!(baseline > 0.0)) throw DegenerateInputError("rig: baseline must be positive");
}

int64_t DisparityMap::count_valid() const {
    int64_t n = 0;
    for (uint8_t v : valid) n += v ? 1 : 0;
    return n;
}

void Image::clamp01() {
    for (double& v : px) v = std::min(1.0, std::max(0.0, v));
}

double Image::mean() const {
    if (px.empty()) return 0.0;
    double s = 0.0;
    for (double v : px) s += v;
    return s / static_cast<double>(px.size());
}

DepthMap disparity_to_depth(const DisparityMap& disp, const StereoRig& rig) {
    rig.validate();
    const double fb = rig.intrinsics.fx * rig.baseline;
    DepthMap out(disp.width, disp.height);
    for (size_t i = 0; i < disp.d.size(); ++i) {
        if (disp.valid[i] && disp.d[i] > kMinValidDisparity) {
            out.z[i] = fb / disp.d[i];
            out.valid[i] = 1;
        }
    }
    return out;
}

DisparityMap depth_to_disparity(const DepthMap& depth, const StereoRig& rig) {
    rig.validate();
    const double fb = rig.intrinsics.fx * rig.baseline;
    DisparityMap out(depth.width, depth.height);
    for (size_t i = 0; i < depth.z.size(); ++i) {
        if (depth.valid[i] && depth.z[i] > 0.0) {
            out.d[i] = fb / depth.z[i];
            out.valid[i] = 1;
        }
    }
    return out;
}

PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& k) {
    k.validate();
    PointCloud cloud;
    cloud.points.reserve(static_cast<size_t>(depth.width) * depth.height / 4);
    for (int y = 0; y < depth.height; ++y) {
        for (int x = 0; x < depth.width; ++x) {
            const int64_t i = depth.idx(x, y);
            if (!depth.valid[static_cast<size_t>(i)]) continue;
            const double z = depth.z[static_cast<size_t>(i)];
            PointCloud::Point pt;
            pt.p = {(x - k.cx) * z / k.fx, (y - k.cy) * z / k.fy, z};
            pt.u = x;
            pt.v = y;
            cloud.points.push_back(pt);
        }
    }
    return cloud;
}

PixelProjection project(const Vec3& p, const CameraIntrinsics& k) {
    if (!(p[2] > 0.0)) throw DegenerateInputError("project: point behind camera (z <= 0)");
    return {k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy, p[2]};
}

RasterResult rasterize_depth(const std::vector<Triangle>& mesh, const Pose& pose, const CameraIntrinsics& k) {
    k.validate();
    RasterResult res;
    res.depth = DepthMap(k.width, k.height);
    res.label.assign(static_cast<size_t>(k.width) * k.height, -1);
    res.tri.assign(static_cast<size_t>(k.width) * k.height, -1);
    std::vector<double> zbuf(static_cast<size_t>(k.width) * k.height, std::numeric_limits<double>::infinity());

    for (size_t ti = 0; ti < mesh.size(); ++ti) {
        const Triangle& tri = mesh[ti];
        Vec3 cam[3];
        double u[3], v[3], invz[3];
        bool ok = true;
        for (int i = 0; i < 3; ++i) {
            cam[i] = pose.apply(tri.v[static_cast<size_t>(i)]);
            if (cam[i][2] <= 1e-9) {  // near-plane clipping not needed for standoff targets
                ok = false;
                break;
            }
            u[i] = k.fx * cam[i][0] / cam[i][2] + k.cx;
            v[i] = k.fy * cam[i][1] / cam[i][2] + k.cy;
            invz[i] = 1.0 / cam[i][2];
        }
        if (!ok) continue;
        const double area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0]);
        if (std::fabs(area) < 1e-12) continue;  // degenerate in screen space
        const double inv_area = 1.0 / area;

        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({u[0], u[1], u[2]}))));
        const int x1 = std::min(k.width - 1, static_cast<int>(std::floor(std::max({u[0], u[1], u[2]}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({v[0], v[1], v[2]}))));
        const int y1 = std::min(k.height - 1, static_cast<int>(std::floor(std::max({v[0], v[1], v[2]}))));

        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double w0 = ((u[1] - x) * (v[2] - y) - (u[2] - x) * (v[1] - y)) * inv_area;
                const double w1 = ((u[2] - x) * (v[0] - y) - (u[0] - x) * (v[2] - y)) * inv_area;
                const double w2 = 1.0 - w0 - w1;
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
                // 1/z interpolates linearly in screen space (perspective-correct).
                const double z = 1.0 / (w0 * invz[0] + w1 * invz[1] + w2 * invz[2]);
                const size_t i = static_cast<size_t>(y) * k.width + x;
                if (z < zbuf[i]) {
                    zbuf[i] = z;
                    res.depth.z[i] = z;
                    res.depth.valid[i] = 1;
                    res.label[i] = tri.label;
                    res.tri[i] = static_cast<int>(ti);
                }
            }
        }
    }
    return res;
}

NoiseSpec NoiseSpec::none() { return {}; }

NoiseSpec NoiseSpec::speckle(double sigma) {
    if (sigma < 0.0) throw DegenerateInputError("speckle: sigma must be >= 0");
    NoiseSpec s;
    s.kind = Kind::speckle;
    s.sigma = sigma;
    return s;
}

NoiseSpec NoiseSpec::gaussian_blur(double sigma_px) {
    if (sigma_px < 0.0) throw DegenerateInputError("gaussian_blur: sigma must be >= 0");
    NoiseSpec s;
    s.kind = Kind::gaussian_blur;
    s.sigma = sigma_px;
    return s;
}

NoiseSpec NoiseSpec::motion_blur(double length, double angle) {
    if (length < 1.0) throw DegenerateInputError("motion_blur: length must be >= 1");
    NoiseSpec s;
    s.kind = Kind::motion_blur;
    s.length = length;
    s.angle = angle;
    return s;
}

const char* NoiseSpec::name() const {
    switch (kind) {
        case Kind::none: return "none";
        case Kind::speckle: return "speckle";
        case Kind::gaussian_blur: return "gaussian_blur";
        case Kind::motion_blur: return "motion_blur";
    }
    return "none";
}

namespace {

// Separable 1-D convolution with edge replication.
Image convolve_separable(const Image& img, const std::vector<double>& kx, const std::vector<double>& ky) {
    const int rx = static_cast<int>(kx.size()) / 2;
    const int ry = static_cast<int>(ky.size()) / 2;
    Image tmp(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int i = 0; i < static_cast<int>(kx.size()); ++i) {
                    const int sx = std::clamp(x + i - rx, 0, img.width - 1);
                    s += kx[static_cast<size_t>(i)] * img.at(sx, y, c);
                }
                tmp.at(x, y, c) = s;
            }
        }
    }
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int i = 0; i < static_cast<int>(ky.size()); ++i) {
                    const int sy = std::clamp(y + i - ry, 0, img.height - 1);
                    s += ky[static_cast<size_t>(i)] * tmp.at(x, sy, c);
                }
                out.at(x, y, c) = s;
            }
        }
    }
    return out;
}

std::vector<double> gaussian_kernel(double sigma) {
    // Truncated at 3 sigma, normalized.
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
        k[static_cast<size_t>(i + r)] = w;
        sum += w;
    }
    for (double& w : k) w /= sum;
    return k;
}

// Normalized line kernel: unit-spaced samples along the blur direction,
// bilinearly splatted into an odd-sized grid.
Image line_kernel(double length, double angle) {
    const int n = std::max(1, static_cast<int>(std::lround(length)));
    const double dx = std::cos(angle), dy = std::sin(angle);
    const int r = static_cast<int>(std::ceil((n - 1) / 2.0)) + 1;
    const int side = 2 * r + 1;
    Image k(side, side, 1, 0.0);
    for (int i = 0; i < n; ++i) {
        const double s = n == 1 ? 0.0 : (i - (n - 1) / 2.0);
        const double px = r + s * dx;
        const double py = r + s * dy;
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const double fx = px - x0, fy = py - y0;
        for (int oy = 0; oy <= 1; ++oy) {
            for (int ox = 0; ox <= 1; ++ox) {
                const double w = (ox ? fx : 1 - fx) * (oy ? fy : 1 - fy);
                if (w <= 0.0) continue;
                k.at(std::clamp(x0 + ox, 0, side - 1), std::clamp(y0 + oy, 0, side - 1), 0) += w;
            }
        }
    }
    double sum = 0.0;
    for (double v : k.px) sum += v;
    for (double& v : k.px) v /= sum;
    return k;
}

Image convolve_2d(const Image& img, const Image& kernel) {
    const int rx = kernel.width / 2, ry = kernel.height / 2;
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int ky = 0; ky < kernel.height; ++ky) {
                    const int sy = std::clamp(y + ky - ry, 0, img.height - 1);
                    for (int kx = 0; kx < kernel.width; ++kx) {
                        const int sx = std::clamp(x + kx - rx, 0, img.width - 1);
                        s += kernel.at(kx, ky, 0) * img.at(sx, sy, c);
                    }
                }
                out.at(x, y, c) = s;
            }
        }
    }
    return out;
}

}  // namespace

Image degrade(const Image& img, const NoiseSpec& spec, uint64_t seed) {
    switch (spec.kind) {
        case NoiseSpec::Kind::none:
            return img;
        case NoiseSpec::Kind::speckle: {
            if (spec.sigma < 0.0) throw DegenerateInputError("speckle: sigma must be >= 0");
            if (spec.sigma == 0.0) return img;
            nk::Rng rng(nk::splitmix64(seed ^ 0x9e3779b9ULL));
            Image out = img;
            for (int y = 0; y < img.height; ++y) {
                for (int x = 0; x < img.width; ++x) {
                    const double n = rng.normal();  // one multiplier per pixel
                    for (int c = 0; c < img.channels; ++c) {
                        out.at(x, y, c) = img.at(x, y, c) * (1.0 + spec.sigma * n);
                    }
                }
            }
            out.clamp01();
            return out;
        }
        case NoiseSpec::Kind::gaussian_blur: {
            if (spec.sigma < 0.0) throw DegenerateInputError("gaussian_blur: sigma must be >= 0");
            if (spec.sigma == 0.0) return img;
            const auto k = gaussian_kernel(spec.sigma);
            Image out = convolve_separable(img, k, k);
            out.clamp01();
            return out;
        }
        case NoiseSpec::Kind::motion_blur: {
            if (spec.length < 1.0) throw DegenerateInputError("motion_blur: length must be >= 1");
            Image out = convolve_2d(img, line_kernel(spec.length, spec.angle));
            out.clamp01();
            return out;
        }
    }
    return img;
}

}  // namespace stereopose::geom
