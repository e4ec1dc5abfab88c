#pragma once

#include <cstdint>
#include <vector>

#include "stereopose/pose_types.hpp"

namespace stereopose::geom {

struct CameraIntrinsics {
    double fx = 0.0, fy = 0.0;  // focal lengths, pixels
    double cx = 0.0, cy = 0.0;  // principal point, pixels
    int width = 0, height = 0;
    void validate() const;
};

// Rectified parallel pair sharing intrinsics; right camera offset +baseline
// along +x of the left camera frame. Disparity is left-referenced,
// d = u_left - u_right >= 0.
struct StereoRig {
    CameraIntrinsics intrinsics;
    double baseline = 1.0;  // meters
    void validate() const;
};

// Disparities below this are treated as invalid during triangulation.
inline constexpr double kMinValidDisparity = 1e-6;

struct DisparityMap {
    int width = 0, height = 0;
    std::vector<double> d;
    std::vector<uint8_t> valid;

    DisparityMap() = default;
    DisparityMap(int w, int h) : width(w), height(h), d(static_cast<size_t>(w) * h, 0.0), valid(static_cast<size_t>(w) * h, 0) {}
    int64_t idx(int x, int y) const { return static_cast<int64_t>(y) * width + x; }
    int64_t count_valid() const;
};

struct DepthMap {
    int width = 0, height = 0;
    std::vector<double> z;
    std::vector<uint8_t> valid;

    DepthMap() = default;
    DepthMap(int w, int h) : width(w), height(h), z(static_cast<size_t>(w) * h, 0.0), valid(static_cast<size_t>(w) * h, 0) {}
    int64_t idx(int x, int y) const { return static_cast<int64_t>(y) * width + x; }
};

struct PointCloud {
    struct Point {
        Vec3 p{0, 0, 0};
        int u = -1, v = -1;  // source pixel, -1 when synthetic
        int label = 0;
    };
    std::vector<Point> points;
    size_t size() const { return points.size(); }
};

// Intensities in [0,1]; row-major, interleaved channels.
struct Image {
    int width = 0, height = 0, channels = 1;
    std::vector<double> px;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), px(static_cast<size_t>(w) * h * c, fill) {}
    double& at(int x, int y, int c) { return px[(static_cast<size_t>(y) * width + x) * channels + c]; }
    double at(int x, int y, int c) const { return px[(static_cast<size_t>(y) * width + x) * channels + c]; }
    void clamp01();
    double mean() const;
};

DepthMap disparity_to_depth(const DisparityMap& disp, const StereoRig& rig);
DisparityMap depth_to_disparity(const DepthMap& depth, const StereoRig& rig);

PointCloud backproject(const DepthMap& depth, const CameraIntrinsics& k);

struct PixelProjection {
    double u = 0.0, v = 0.0, z = 0.0;
};
// Throws DegenerateInputError when z <= 0 (behind the camera).
PixelProjection project(const Vec3& p, const CameraIntrinsics& k);

struct Triangle {
    std::array<Vec3, 3> v;
    int label = 0;
};

struct RasterResult {
    DepthMap depth;
    std::vector<int> label;  // -1 where nothing was hit
    std::vector<int> tri;    // triangle index per pixel, -1 for background
};

// Z-buffered pinhole rasterization of object-frame triangles under `pose`.
// Pixel (x,y) samples the continuous image point u=x, v=y. No culling,
// zero-area triangles skipped.
RasterResult rasterize_depth(const std::vector<Triangle>& mesh, const Pose& pose, const CameraIntrinsics& k);

struct NoiseSpec {
    enum class Kind { none, speckle, gaussian_blur, motion_blur };
    Kind kind = Kind::none;
    double sigma = 0.0;   // speckle fraction or blur sigma in pixels
    double length = 0.0;  // motion blur length in pixels
    double angle = 0.0;   // motion blur angle, radians

    static NoiseSpec none();
    static NoiseSpec speckle(double sigma);
    static NoiseSpec gaussian_blur(double sigma_px);
    static NoiseSpec motion_blur(double length, double angle);
    const char* name() const;
};

// Deterministic given (spec, seed). Output clamped to [0,1].
Image degrade(const Image& img, const NoiseSpec& spec, uint64_t seed);

}  // namespace stereopose::geom
