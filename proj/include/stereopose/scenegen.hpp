#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nk/random.hpp"
#include "stereopose/geometry.hpp"
#include "stereopose/pose.hpp"

namespace stereopose::scene {

// Part labels on the target surface.
inline constexpr int kPartBody = 0;
inline constexpr int kPartPanel = 1;
inline constexpr int kPartClasses = 2;

struct TargetParams {
    // Body cuboid extents and the two solar panels attached along +/-x.
    double body_x = 2.0, body_y = 1.6, body_z = 1.2;  // meters
    double panel_length = 1.5, panel_width = 1.0, panel_gap = 0.25;
    int surface_points = 2048;
    uint64_t point_seed = 7741;
};

// Body cuboid (12 triangles) plus two flat panels (2 each).
inline constexpr int kTargetTriangleCount = 16;

struct TargetModel {
    TargetParams params;
    std::vector<geom::Triangle> triangles;                 // object frame; label = part
    std::vector<geom::PointCloud::Point> surface_points;   // area-proportional samples
    pose::KeypointSet keypoints;                           // canonical FPS keypoints
    double radius = 0.0;                                   // bounding-sphere radius
};

TargetModel build_target(const TargetParams& params, int keypoint_count = 8);

// Z uniform in [z_min, z_max]; lateral offsets keep the bounding sphere inside
// both frusta; rotation uniform on SO(3) via normalized quaternion draws.
Pose sample_pose(nk::Rng& rng, const geom::StereoRig& rig, double z_min, double z_max, double target_radius);

enum class Illumination { direct_solar, earth_albedo, penumbra, mixed };
const char* illumination_name(Illumination il);
Illumination illumination_from_name(const std::string& name);

struct SceneSample {
    int id = 0;
    geom::Image left, right;
    geom::DisparityMap disparity;   // GT, left-referenced; occluded pixels invalid
    std::vector<uint8_t> mask;      // instance mask, left view
    Pose pose;
    Illumination illumination = Illumination::direct_solar;
    geom::NoiseSpec noise;
    geom::StereoRig rig;
};

// Lambertian shading under the regime's light recipe; right camera displaced
// +baseline along x. Degradations touch images only, never the GT disparity.
// Throws when the target is fully outside either view.
SceneSample render_sample(const TargetModel& model, const Pose& pose, const geom::StereoRig& rig,
                          Illumination illumination, const geom::NoiseSpec& noise, uint64_t seed);

// Left-view semantic part labels for a sample (recomputed from the mesh).
std::vector<int> rasterize_part_labels(const TargetModel& model, const SceneSample& sample);

geom::StereoRig desk_rig();   // 160x120, fx=fy=150, B=1 m
geom::StereoRig paper_rig();  // 1280x960 rendering geometry of the full-scale setup

struct DatasetConfig {
    geom::StereoRig rig = desk_rig();
    TargetParams target;
    int samples = 200;       // full-scale dataset: 39600
    uint64_t master_seed = 1;
    double z_min = 10.0, z_max = 50.0;
    double speckle_sigma = 0.08;     // noise magnitudes are not specified upstream;
    double blur_sigma = 1.2;         // exposed via config
    double motion_length = 7.0;
    int threads = 1;
};

struct ManifestEntry {
    int id = 0;
    std::string dir;
    bool test_split = false;
    Illumination illumination = Illumination::direct_solar;
    geom::NoiseSpec noise;
    uint64_t seed = 0;
};

struct DatasetManifest {
    DatasetConfig config;
    std::vector<ManifestEntry> entries;
    int train_count() const;
    int test_count() const;
};

// Writes manifest.json plus per-sample directories NNNNN/{left.ppm, right.ppm,
// disp.pfm, disp_f64.nkt, mask.pgm, pose.json, meta.json}. The .nkt sidecar
// carries the disparity losslessly for consistency checks; disp.pfm is the
// interchange copy. Regeneration under the same master seed is byte-identical.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir);

class DatasetReader {
public:
    explicit DatasetReader(const std::string& dir);
    int size() const { return static_cast<int>(manifest_.entries.size()); }
    const DatasetManifest& manifest() const { return manifest_; }
    TargetModel target() const;
    // verify re-rasterizes from the annotated pose and checks d = fx*B/Z to
    // 1e-6 px at every valid pixel; failures name the sample.
    SceneSample load(int index, bool verify = false) const;

private:
    std::string dir_;
    DatasetManifest manifest_;
};

bool split_is_test(int index, uint64_t master_seed);

}  // namespace stereopose::scene
