#pragma once

#include <string>
#include <vector>

#include "stereopose/geometry.hpp"
#include "stereopose/pose_types.hpp"

namespace stereopose::metrics {

struct DisparityEvalReport {
    double epe = 0.0;
    double rmse = 0.0;
    std::vector<std::pair<double, double>> bad_tau;  // (tau, fraction)
    double d1 = 0.0;
    int64_t pixels = 0;
    std::string to_kv_text() const;
};

struct PoseEvalReport {
    double e_t = 0.0;       // meters
    double e_r_rad = 0.0;   // radians
    double e_r_deg = 0.0;
    std::string to_kv_text() const;
};

// All disparity metrics run over the intersection of the two validity masks,
// optionally further restricted by `extra_mask`. An empty intersection throws.
double epe(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask = nullptr);
double rmse(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask = nullptr);
double bad_tau(const geom::DisparityMap& d, const geom::DisparityMap& gt, double tau,
               const std::vector<uint8_t>* extra_mask = nullptr);
double d1(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask = nullptr);

DisparityEvalReport evaluate_disparity(const geom::DisparityMap& d, const geom::DisparityMap& gt,
                                       const std::vector<double>& taus = {1.0, 2.0, 3.0},
                                       const std::vector<uint8_t>* extra_mask = nullptr);

double translation_error(const Vec3& t, const Vec3& t_hat);
// Both inputs must be rotations (checked to 1e-6); result in [0, pi].
double rotation_error(const Mat3& r, const Mat3& r_hat);

PoseEvalReport evaluate_pose(const Pose& gt, const Pose& pred);

}  // namespace stereopose::metrics
