#include "stereopose/scenegen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "nk/io.hpp"
#include "stereopose/errors.hpp"
#include "stereopose/image_io.hpp"

namespace stereopose::scene {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void push_quad(std::vector<geom::Triangle>& tris, const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d,
               int label) {
    tris.push_back({{a, b, c}, label});
    tris.push_back({{a, c, d}, label});
}

double triangle_area(const geom::Triangle& t) {
    return 0.5 * vnorm(vcross(vsub(t.v[1], t.v[0]), vsub(t.v[2], t.v[0])));
}

}  // namespace

TargetModel build_target(const TargetParams& params, int keypoint_count) {
    if (params.body_x <= 0 || params.body_y <= 0 || params.body_z <= 0 || params.panel_length <= 0 ||
        params.panel_width <= 0 || params.panel_gap < 0) {
        throw DegenerateInputError("build_target: dimensions must be positive");
    }
    TargetModel model;
    model.params = params;

    const double hx = params.body_x / 2, hy = params.body_y / 2, hz = params.body_z / 2;
    auto& tris = model.triangles;
    // Body cuboid.
    push_quad(tris, {-hx, -hy, -hz}, {hx, -hy, -hz}, {hx, hy, -hz}, {-hx, hy, -hz}, kPartBody);  // z-
    push_quad(tris, {-hx, -hy, hz}, {hx, -hy, hz}, {hx, hy, hz}, {-hx, hy, hz}, kPartBody);      // z+
    push_quad(tris, {-hx, -hy, -hz}, {hx, -hy, -hz}, {hx, -hy, hz}, {-hx, -hy, hz}, kPartBody);  // y-
    push_quad(tris, {-hx, hy, -hz}, {hx, hy, -hz}, {hx, hy, hz}, {-hx, hy, hz}, kPartBody);      // y+
    push_quad(tris, {-hx, -hy, -hz}, {-hx, hy, -hz}, {-hx, hy, hz}, {-hx, -hy, hz}, kPartBody);  // x-
    push_quad(tris, {hx, -hy, -hz}, {hx, hy, -hz}, {hx, hy, hz}, {hx, -hy, hz}, kPartBody);      // x+
    // Flat solar panels in the x-y plane.
    const double p0 = hx + params.panel_gap;
    const double p1 = p0 + params.panel_length;
    const double pw = params.panel_width / 2;
    push_quad(tris, {p0, -pw, 0}, {p1, -pw, 0}, {p1, pw, 0}, {p0, pw, 0}, kPartPanel);
    push_quad(tris, {-p1, -pw, 0}, {-p0, -pw, 0}, {-p0, pw, 0}, {-p1, pw, 0}, kPartPanel);

    for (const auto& t : model.triangles) {
        for (const auto& v : t.v) model.radius = std::max(model.radius, vnorm(v));
    }

    // Area-proportional surface sampling.
    std::vector<double> cdf;
    double total = 0.0;
    for (const auto& t : tris) {
        total += triangle_area(t);
        cdf.push_back(total);
    }
    nk::Rng rng(params.point_seed);
    model.surface_points.reserve(static_cast<size_t>(params.surface_points));
    for (int i = 0; i < params.surface_points; ++i) {
        const double u = rng.uniform(0.0, total);
        const size_t ti = static_cast<size_t>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const geom::Triangle& t = tris[std::min(ti, tris.size() - 1)];
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const Vec3 p = vadd(vadd(vscale(t.v[0], 1.0 - r1), vscale(t.v[1], r1 * (1.0 - r2))), vscale(t.v[2], r1 * r2));
        geom::PointCloud::Point pt;
        pt.p = p;
        pt.label = t.label;
        model.surface_points.push_back(pt);
    }

    std::vector<Vec3> positions;
    positions.reserve(model.surface_points.size());
    for (const auto& pt : model.surface_points) positions.push_back(pt.p);
    model.keypoints = pose::fps_select(positions, keypoint_count);
    return model;
}

Pose sample_pose(nk::Rng& rng, const geom::StereoRig& rig, double z_min, double z_max, double target_radius) {
    if (!(0.0 < z_min && z_min < z_max)) throw DegenerateInputError("sample_pose: need 0 < z_min < z_max");
    rig.validate();
    const auto& k = rig.intrinsics;
    Pose p;
    const double z = rng.uniform(z_min, z_max);
    const double half_w = std::min(k.cx, k.width - 1 - k.cx) / k.fx * z - target_radius;
    const double half_h = std::min(k.cy, k.height - 1 - k.cy) / k.fy * z - target_radius;
    const double x_lo = rig.baseline - half_w, x_hi = half_w;
    if (!(half_h > 0.0) || !(x_hi > x_lo)) {
        throw DegenerateInputError("sample_pose: frustum intersection empty at sampled depth");
    }
    p.t = {rng.uniform(x_lo, x_hi), rng.uniform(-half_h, half_h), z};
    const Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    p.R = rotation_from_quat(q);
    return p;
}

const char* illumination_name(Illumination il) {
    switch (il) {
        case Illumination::direct_solar: return "direct_solar";
        case Illumination::earth_albedo: return "earth_albedo";
        case Illumination::penumbra: return "penumbra";
        case Illumination::mixed: return "mixed";
    }
    return "direct_solar";
}

Illumination illumination_from_name(const std::string& name) {
    if (name == "direct_solar") return Illumination::direct_solar;
    if (name == "earth_albedo") return Illumination::earth_albedo;
    if (name == "penumbra") return Illumination::penumbra;
    if (name == "mixed") return Illumination::mixed;
    throw DataMismatchError("unknown illumination tag: " + name);
}

namespace {

struct LightRecipe {
    double ambient = 0.0;
    double dir_strength = 0.0;
    Vec3 to_light{0, 0, -1};
    double hemi_strength = 0.0;
    Vec3 hemi_dir{0, 1, 0};  // toward Earth (image-down)
    Vec3 tint{1, 1, 1};
};

LightRecipe recipe_for(Illumination il) {
    switch (il) {
        case Illumination::direct_solar:
            return {0.02, 1.15, vnormalize({0.30, -0.45, -0.85}), 0.0, {0, 1, 0}, {1.00, 0.97, 0.90}};
        case Illumination::earth_albedo:
            return {0.08, 0.0, {0, 0, -1}, 0.20, {0, 1, 0}, {0.82, 0.90, 1.00}};
        case Illumination::penumbra:
            return {0.035, 0.0, {0, 0, -1}, 0.0, {0, 1, 0}, {0.90, 0.92, 1.00}};
        case Illumination::mixed:
            return {0.04, 0.55, vnormalize({-0.55, -0.15, -0.80}), 0.12, {0, 1, 0}, {0.95, 0.95, 0.97}};
    }
    return {};
}

double frac(double v) { return v - std::floor(v); }

// Albedo as a deterministic function of the object-frame point and part.
void albedo(const Vec3& p_obj, int part, double rgb[3]) {
    if (part == kPartPanel) {
        const bool grid = frac(p_obj[0] / 0.25) < 0.10 || frac(p_obj[1] / 0.25) < 0.10;
        const double base = grid ? 0.55 : 0.28;
        rgb[0] = base * 0.70;
        rgb[1] = base * 0.80;
        rgb[2] = base * 1.00;
    } else {
        const int cell = static_cast<int>(std::floor(p_obj[0] / 0.35)) + static_cast<int>(std::floor(p_obj[1] / 0.35)) +
                         static_cast<int>(std::floor(p_obj[2] / 0.35));
        const double base = (cell & 1) ? 0.55 : 0.70;
        rgb[0] = base * 1.00;
        rgb[1] = base * 0.98;
        rgb[2] = base * 0.93;
    }
}

// Lambertian intensity for a surface point expressed in the left camera frame.
double light_intensity(const LightRecipe& lr, const Vec3& n_eff) {
    double s = lr.ambient;
    if (lr.dir_strength > 0.0) s += lr.dir_strength * std::max(0.0, vdot(n_eff, lr.to_light));
    if (lr.hemi_strength > 0.0) s += lr.hemi_strength * 0.5 * (1.0 + vdot(n_eff, lr.hemi_dir));
    return s;
}

geom::Image shade_view(const geom::RasterResult& raster, const TargetModel& model, const Pose& pose,
                       const geom::CameraIntrinsics& k, const LightRecipe& lr, double baseline_shift) {
    geom::Image img(k.width, k.height, 3, 0.0);
    const Pose inv = pose.inverse();
    std::vector<Vec3> normals_left(model.triangles.size());
    for (size_t t = 0; t < model.triangles.size(); ++t) {
        const auto& tri = model.triangles[t];
        normals_left[t] = mat_apply(pose.R, vnormalize(vcross(vsub(tri.v[1], tri.v[0]), vsub(tri.v[2], tri.v[0]))));
    }
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const size_t i = static_cast<size_t>(y) * k.width + x;
            const int t = raster.tri[i];
            if (t < 0) continue;
            const double z = raster.depth.z[i];
            // Surface point in this view's frame, then in the left frame.
            const Vec3 p_view{(x - k.cx) * z / k.fx, (y - k.cy) * z / k.fy, z};
            const Vec3 p_left{p_view[0] + baseline_shift, p_view[1], p_view[2]};
            Vec3 n = normals_left[static_cast<size_t>(t)];
            if (vdot(n, p_left) > 0.0) n = vscale(n, -1.0);  // orient toward the camera
            const Vec3 p_obj = inv.apply(p_left);
            double base[3];
            albedo(p_obj, raster.label[i], base);
            const double s = light_intensity(lr, n);
            for (int c = 0; c < 3; ++c) {
                img.at(x, y, c) = std::min(1.0, std::max(0.0, base[c] * s * lr.tint[static_cast<size_t>(c)]));
            }
        }
    }
    return img;
}

}  // namespace

SceneSample render_sample(const TargetModel& model, const Pose& pose, const geom::StereoRig& rig,
                          Illumination illumination, const geom::NoiseSpec& noise, uint64_t seed) {
    rig.validate();
    const auto& k = rig.intrinsics;
    const geom::RasterResult left = geom::rasterize_depth(model.triangles, pose, k);
    Pose right_pose = pose;
    right_pose.t[0] -= rig.baseline;  // point coordinates in the right camera frame
    const geom::RasterResult right = geom::rasterize_depth(model.triangles, right_pose, k);

    int64_t left_hits = 0, right_hits = 0;
    for (uint8_t v : left.depth.valid) left_hits += v;
    for (uint8_t v : right.depth.valid) right_hits += v;
    if (left_hits == 0 || right_hits == 0) {
        throw DegenerateInputError("render_sample: target outside the stereo view");
    }

    SceneSample sample;
    sample.pose = pose;
    sample.illumination = illumination;
    sample.noise = noise;
    sample.rig = rig;

    const LightRecipe lr = recipe_for(illumination);
    geom::Image left_img = shade_view(left, model, pose, k, lr, 0.0);
    geom::Image right_img = shade_view(right, model, pose, k, lr, rig.baseline);

    // GT disparity from the left z-buffer; right z-buffer consistency marks
    // occlusions invalid. Degradations never touch the GT.
    sample.disparity = geom::DisparityMap(k.width, k.height);
    sample.mask.assign(static_cast<size_t>(k.width) * k.height, 0);
    const double fb = k.fx * rig.baseline;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const size_t i = static_cast<size_t>(y) * k.width + x;
            if (!left.depth.valid[i]) continue;
            sample.mask[i] = 1;
            const double z = left.depth.z[i];
            const double d = fb / z;
            const double ur = x - d;
            const int xi = static_cast<int>(std::lround(ur));
            if (xi < 0 || xi >= k.width) continue;
            const size_t ri = static_cast<size_t>(y) * k.width + xi;
            if (!right.depth.valid[ri]) continue;
            if (std::fabs(right.depth.z[ri] - z) > 0.02 * z) continue;  // occluded in the right view
            sample.disparity.d[i] = d;
            sample.disparity.valid[i] = 1;
        }
    }

    sample.left = geom::degrade(left_img, noise, seed);
    sample.right = geom::degrade(right_img, noise, nk::splitmix64(seed + 0x517e));
    return sample;
}

std::vector<int> rasterize_part_labels(const TargetModel& model, const SceneSample& sample) {
    return geom::rasterize_depth(model.triangles, sample.pose, sample.rig.intrinsics).label;
}

geom::StereoRig desk_rig() {
    geom::StereoRig rig;
    rig.intrinsics = {150.0, 150.0, 80.0, 60.0, 160, 120};
    rig.baseline = 1.0;
    return rig;
}

geom::StereoRig paper_rig() {
    geom::StereoRig rig;
    rig.intrinsics = {1200.0, 1200.0, 640.0, 480.0, 1280, 960};
    rig.baseline = 1.0;
    return rig;
}

int DatasetManifest::train_count() const {
    int n = 0;
    for (const auto& e : entries) n += e.test_split ? 0 : 1;
    return n;
}

int DatasetManifest::test_count() const { return static_cast<int>(entries.size()) - train_count(); }

bool split_is_test(int index, uint64_t master_seed) {
    return (static_cast<uint64_t>(index) + nk::splitmix64(master_seed)) % 10 == 0;
}

namespace {

json rig_to_json(const geom::StereoRig& rig) {
    return json{{"fx", rig.intrinsics.fx}, {"fy", rig.intrinsics.fy}, {"cx", rig.intrinsics.cx},
                {"cy", rig.intrinsics.cy}, {"width", rig.intrinsics.width}, {"height", rig.intrinsics.height},
                {"baseline", rig.baseline}};
}

geom::StereoRig rig_from_json(const json& j) {
    geom::StereoRig rig;
    rig.intrinsics = {j.at("fx"), j.at("fy"), j.at("cx"), j.at("cy"), j.at("width"), j.at("height")};
    rig.baseline = j.at("baseline");
    return rig;
}

json noise_to_json(const geom::NoiseSpec& n) {
    return json{{"kind", n.name()}, {"sigma", n.sigma}, {"length", n.length}, {"angle", n.angle}};
}

geom::NoiseSpec noise_from_json(const json& j) {
    const std::string kind = j.at("kind");
    if (kind == "none") return geom::NoiseSpec::none();
    if (kind == "speckle") return geom::NoiseSpec::speckle(j.at("sigma"));
    if (kind == "gaussian_blur") return geom::NoiseSpec::gaussian_blur(j.at("sigma"));
    if (kind == "motion_blur") return geom::NoiseSpec::motion_blur(j.at("length"), j.at("angle"));
    throw DataMismatchError("unknown noise kind: " + kind);
}

json target_to_json(const TargetParams& t) {
    return json{{"body_x", t.body_x},       {"body_y", t.body_y},           {"body_z", t.body_z},
                {"panel_length", t.panel_length}, {"panel_width", t.panel_width}, {"panel_gap", t.panel_gap},
                {"surface_points", t.surface_points}, {"point_seed", t.point_seed}};
}

TargetParams target_from_json(const json& j) {
    TargetParams t;
    t.body_x = j.at("body_x");
    t.body_y = j.at("body_y");
    t.body_z = j.at("body_z");
    t.panel_length = j.at("panel_length");
    t.panel_width = j.at("panel_width");
    t.panel_gap = j.at("panel_gap");
    t.surface_points = j.at("surface_points");
    t.point_seed = j.at("point_seed");
    return t;
}

std::string sample_dir_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", id);
    return buf;
}

geom::NoiseSpec noise_for_sample(const DatasetConfig& cfg, int index, nk::Rng& rng_noise) {
    // Illumination cycles with period 4 and the noise cycle walks a Latin
    // square so both marginals stay uniform to +-1 for any sample count.
    const int kind = (index + index / 4) % 4;
    switch (kind) {
        case 1: return geom::NoiseSpec::speckle(cfg.speckle_sigma);
        case 2: return geom::NoiseSpec::gaussian_blur(cfg.blur_sigma);
        case 3: return geom::NoiseSpec::motion_blur(cfg.motion_length, rng_noise.uniform(0.0, M_PI));
        default: return geom::NoiseSpec::none();
    }
}

void write_sample_files(const fs::path& dir, const SceneSample& s, const ManifestEntry& entry) {
    fs::create_directories(dir);
    geom::write_pnm((dir / "left.ppm").string(), s.left);
    geom::write_pnm((dir / "right.ppm").string(), s.right);
    geom::write_pfm((dir / "disp.pfm").string(), s.disparity);
    geom::write_mask_pgm((dir / "mask.pgm").string(), s.mask, s.rig.intrinsics.width, s.rig.intrinsics.height);

    // Lossless disparity sidecar: invalid pixels stored as -1.
    nk::Tensor d64({s.rig.intrinsics.height, s.rig.intrinsics.width});
    for (size_t i = 0; i < s.disparity.d.size(); ++i) d64[static_cast<int64_t>(i)] = s.disparity.valid[i] ? s.disparity.d[i] : -1.0;
    nk::write_tensor((dir / "disp_f64.nkt").string(), d64);

    const Quat q = quat_from_rotation(s.pose.R);
    json pose_j{{"R", s.pose.R},
                {"quaternion", q},
                {"t", s.pose.t},
                {"rig", rig_to_json(s.rig)},
                {"illumination", illumination_name(s.illumination)},
                {"noise", noise_to_json(s.noise)}};
    std::ofstream pf(dir / "pose.json");
    pf << pose_j.dump(2) << "\n";

    int64_t valid_px = s.disparity.count_valid();
    int64_t mask_px = 0;
    for (uint8_t m : s.mask) mask_px += m;
    json meta{{"id", entry.id},
              {"seed", entry.seed},
              {"split", entry.test_split ? "test" : "train"},
              {"illumination", illumination_name(s.illumination)},
              {"noise", noise_to_json(s.noise)},
              {"mask_pixels", mask_px},
              {"valid_disparity_pixels", valid_px},
              {"mean_left_intensity", s.left.mean()}};
    std::ofstream mf(dir / "meta.json");
    mf << meta.dump(2) << "\n";
    if (!pf || !mf) throw IoError("failed writing sample files under " + dir.string());
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
    if (cfg.samples < 10) throw DegenerateInputError("generate_dataset: need at least 10 samples");
    cfg.rig.validate();
    const TargetModel model = build_target(cfg.target);
    fs::create_directories(out_dir);

    DatasetManifest manifest;
    manifest.config = cfg;
    manifest.entries.resize(static_cast<size_t>(cfg.samples));

    const nk::Rng base(cfg.master_seed);
    static const Illumination kRegimes[4] = {Illumination::direct_solar, Illumination::earth_albedo,
                                             Illumination::penumbra, Illumination::mixed};

    auto make_one = [&](int i) {
        nk::Rng rng_pose = base.fork(static_cast<uint64_t>(i) * 3);
        nk::Rng rng_noise = base.fork(static_cast<uint64_t>(i) * 3 + 1);
        const uint64_t render_seed = base.fork(static_cast<uint64_t>(i) * 3 + 2).seed();

        ManifestEntry entry;
        entry.id = i;
        entry.dir = sample_dir_name(i);
        entry.test_split = split_is_test(i, cfg.master_seed);
        entry.illumination = kRegimes[i % 4];
        entry.noise = noise_for_sample(cfg, i, rng_noise);
        entry.seed = render_seed;

        const Pose pose = sample_pose(rng_pose, cfg.rig, cfg.z_min, cfg.z_max, model.radius);
        SceneSample sample = render_sample(model, pose, cfg.rig, entry.illumination, entry.noise, render_seed);
        sample.id = i;
        write_sample_files(fs::path(out_dir) / entry.dir, sample, entry);
        manifest.entries[static_cast<size_t>(i)] = entry;
    };

    const int threads = std::max(1, cfg.threads);
    if (threads == 1) {
        for (int i = 0; i < cfg.samples; ++i) make_one(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (int i = next.fetch_add(1); i < cfg.samples; i = next.fetch_add(1)) make_one(i);
                } catch (...) {
                    errors[static_cast<size_t>(t)] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    json entries = json::array();
    for (const auto& e : manifest.entries) {
        entries.push_back(json{{"id", e.id},
                               {"dir", e.dir},
                               {"split", e.test_split ? "test" : "train"},
                               {"illumination", illumination_name(e.illumination)},
                               {"noise", noise_to_json(e.noise)},
                               {"seed", e.seed}});
    }
    json root{{"master_seed", cfg.master_seed},
              {"samples", cfg.samples},
              {"z_min", cfg.z_min},
              {"z_max", cfg.z_max},
              {"rig", rig_to_json(cfg.rig)},
              {"target", target_to_json(cfg.target)},
              {"noise_defaults",
               {{"speckle_sigma", cfg.speckle_sigma}, {"blur_sigma", cfg.blur_sigma}, {"motion_length", cfg.motion_length}}},
              {"train_count", manifest.train_count()},
              {"test_count", manifest.test_count()},
              {"entries", entries}};
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    mf << root.dump(2) << "\n";
    if (!mf) throw IoError("failed writing manifest under " + out_dir);
    return manifest;
}

DatasetReader::DatasetReader(const std::string& dir) : dir_(dir) {
    std::ifstream f(fs::path(dir) / "manifest.json");
    if (!f) throw IoError("dataset manifest not found in " + dir);
    json root;
    try {
        f >> root;
    } catch (const json::exception& e) {
        throw IoError("corrupt dataset manifest in " + dir + ": " + e.what());
    }
    try {
        manifest_.config.master_seed = root.at("master_seed");
        manifest_.config.samples = root.at("samples");
        manifest_.config.z_min = root.at("z_min");
        manifest_.config.z_max = root.at("z_max");
        manifest_.config.rig = rig_from_json(root.at("rig"));
        manifest_.config.target = target_from_json(root.at("target"));
        for (const auto& ej : root.at("entries")) {
            ManifestEntry e;
            e.id = ej.at("id");
            e.dir = ej.at("dir");
            e.test_split = ej.at("split") == "test";
            e.illumination = illumination_from_name(ej.at("illumination"));
            e.noise = noise_from_json(ej.at("noise"));
            e.seed = ej.at("seed");
            manifest_.entries.push_back(e);
        }
    } catch (const json::exception& e) {
        throw IoError("dataset manifest missing fields in " + dir + ": " + e.what());
    }
    if (static_cast<int>(manifest_.entries.size()) != manifest_.config.samples) {
        throw DataMismatchError("dataset manifest entry count mismatch in " + dir);
    }
}

TargetModel DatasetReader::target() const { return build_target(manifest_.config.target); }

SceneSample DatasetReader::load(int index, bool verify) const {
    if (index < 0 || index >= size()) throw DataMismatchError("dataset index out of range");
    const ManifestEntry& entry = manifest_.entries[static_cast<size_t>(index)];
    const fs::path dir = fs::path(dir_) / entry.dir;
    SceneSample s;
    s.id = entry.id;
    s.illumination = entry.illumination;
    s.noise = entry.noise;

    try {
        s.left = geom::read_pnm((dir / "left.ppm").string());
        s.right = geom::read_pnm((dir / "right.ppm").string());
        int mw = 0, mh = 0;
        s.mask = geom::read_mask_pgm((dir / "mask.pgm").string(), mw, mh);
        if (fs::exists(dir / "disp_f64.nkt")) {
            const nk::Tensor d64 = nk::read_tensor((dir / "disp_f64.nkt").string());
            s.disparity = geom::DisparityMap(d64.extent(1), d64.extent(0));
            for (size_t i = 0; i < s.disparity.d.size(); ++i) {
                const double v = d64[static_cast<int64_t>(i)];
                if (v >= 0.0) {
                    s.disparity.d[i] = v;
                    s.disparity.valid[i] = 1;
                }
            }
        } else {
            s.disparity = geom::read_pfm((dir / "disp.pfm").string());
        }

        std::ifstream pf(dir / "pose.json");
        if (!pf) throw IoError("missing pose.json");
        json pj;
        pf >> pj;
        const auto rr = pj.at("R").get<std::vector<double>>();
        const auto tt = pj.at("t").get<std::vector<double>>();
        if (rr.size() != 9 || tt.size() != 3) throw IoError("malformed pose.json");
        std::copy(rr.begin(), rr.end(), s.pose.R.begin());
        std::copy(tt.begin(), tt.end(), s.pose.t.begin());
        s.rig = rig_from_json(pj.at("rig"));
    } catch (const json::exception& e) {
        throw IoError("sample " + entry.dir + ": corrupt json (" + e.what() + ")");
    } catch (const std::runtime_error& e) {
        throw IoError("sample " + entry.dir + ": " + e.what());
    }

    if (s.left.width != s.rig.intrinsics.width || s.disparity.width != s.rig.intrinsics.width ||
        static_cast<int>(s.mask.size()) != s.rig.intrinsics.width * s.rig.intrinsics.height) {
        throw DataMismatchError("sample " + entry.dir + ": inconsistent image dimensions");
    }

    if (verify) {
        if (!s.pose.is_rotation(1e-6)) {
            throw CheckFailureError("sample " + entry.dir + ": pose rotation fails SO(3) check");
        }
        const TargetModel model = target();
        const geom::RasterResult raster = geom::rasterize_depth(model.triangles, s.pose, s.rig.intrinsics);
        const double fb = s.rig.intrinsics.fx * s.rig.baseline;
        for (size_t i = 0; i < s.disparity.d.size(); ++i) {
            if (!s.disparity.valid[i]) continue;
            if (!raster.depth.valid[i]) {
                throw CheckFailureError("sample " + entry.dir + ": valid disparity over empty geometry");
            }
            const double want = fb / raster.depth.z[i];
            if (std::fabs(want - s.disparity.d[i]) > 1e-6) {
                throw CheckFailureError("sample " + entry.dir + ": disparity-pose consistency residual " +
                                        std::to_string(std::fabs(want - s.disparity.d[i])) + " px");
            }
        }
    }
    return s;
}

}  // namespace stereopose::scene
