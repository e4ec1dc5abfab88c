#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "nk/graph.hpp"
#include "nk/random.hpp"
#include "stereopose/metrics.hpp"
#include "stereopose/pose_types.hpp"

namespace stereopose::pose {

// M canonical keypoints in the object frame.
struct KeypointSet {
    std::vector<Vec3> points;
    int count() const { return static_cast<int>(points.size()); }
};

// Greedy farthest-point sampling: the first seed is the point farthest from
// the centroid, ties resolved to the lowest index. Deterministic.
KeypointSet fps_select(const std::vector<Vec3>& points, int m);

// Per point i and keypoint j: predicted and ground-truth offsets (vectors of
// length n*m*3, row-major over [i][j][xyz]) plus the instance indicator.
struct OffsetField {
    int n = 0, m = 0;
    std::vector<double> pred;
    std::vector<double> gt;
    std::vector<uint8_t> in_instance;

    OffsetField() = default;
    OffsetField(int n_, int m_)
        : n(n_), m(m_), pred(static_cast<size_t>(n_) * m_ * 3, 0.0), gt(static_cast<size_t>(n_) * m_ * 3, 0.0),
          in_instance(static_cast<size_t>(n_), 1) {}
    int64_t at(int i, int j, int k) const { return (static_cast<int64_t>(i) * m + j) * 3 + k; }
};

// vote_i^j = p_i + of_i^j for instance points; one vote list per keypoint.
std::vector<std::vector<Vec3>> vote_keypoints(const std::vector<Vec3>& points, const OffsetField& offsets);

struct MeanShiftResult {
    std::vector<Vec3> modes;
    std::vector<int> assignment;  // per vote, mode index
    std::vector<int> counts;      // per mode
    int top = -1;                 // largest cluster
    bool tie = false;             // another cluster matches the top count
    Vec3 top_center() const { return modes[static_cast<size_t>(top)]; }
};

// Gaussian-kernel mean shift seeded from every vote; iterates until the shift
// drops below 1e-6 (or 100 iterations), merges modes closer than bandwidth/2.
MeanShiftResult meanshift(const std::vector<Vec3>& votes, double bandwidth);

// Globally optimal rigid fit for sum_j ||cam_j - (R obj_j + t)||^2 via the
// quaternion eigen-method (largest eigenvector of the 4x4 profile matrix,
// Jacobi iteration). Throws DegenerateInputError for m < 3 or collinear sets.
Pose fit_pose(const KeypointSet& object_kp, const std::vector<Vec3>& camera_kp);
double fit_pose_residual(const KeypointSet& object_kp, const std::vector<Vec3>& camera_kp, const Pose& pose);

// ---- losses (plain scalar forms) --------------------------------------------

double keypoint_loss(const OffsetField& offsets);

struct SegmentationPrediction {
    int n = 0, classes = 0;
    std::vector<double> confidence;  // n x classes, rows sum to 1
    std::vector<int> label;          // true class per point
    double alpha = 0.25, gamma = 2.0;
};
double focal_loss(const SegmentationPrediction& seg);

struct CenterOffsets {
    int n = 0;
    std::vector<double> pred;  // n x 3
    std::vector<double> gt;
};
double center_loss(const CenterOffsets& c, const std::vector<uint8_t>& in_instance);

double multitask_loss(double l_kp, double l_sem, double l_ctr, double k1 = 1.0, double k2 = 1.0, double k3 = 1.0);

// ---- graph forms (used to train the offset head) -----------------------------

nk::Var keypoint_loss_graph(nk::Var offsets_pred, const nk::Tensor& offsets_gt, const nk::Tensor& in_instance);
nk::Var focal_loss_graph(nk::Var confidence, const nk::Tensor& one_hot, double alpha, double gamma);
nk::Var center_loss_graph(nk::Var center_pred, const nk::Tensor& center_gt, const nk::Tensor& in_instance);

// ---- end-to-end estimation -----------------------------------------------------

struct PipelineConfig {
    int keypoint_count = 8;
    double bandwidth = 0.15;  // meters; callers usually set 5% of model diameter
    int max_points = 512;
    uint64_t seed = 0;
};

struct PoseEstimate {
    Pose pose;
    metrics::PoseEvalReport report;
    std::vector<Vec3> keypoints_camera;
    int tied_clusters = 0;
};

std::vector<Vec3> subsample_points(const std::vector<Vec3>& points, int max_points, nk::Rng& rng);

// Exact or noisy oracle offsets toward the ground-truth keypoint positions.
OffsetField oracle_offsets(const std::vector<Vec3>& points, const KeypointSet& object_kp, const Pose& gt_pose,
                           double sigma, nk::Rng& rng);

// vote -> mean shift per keypoint -> least-squares fit -> metrics vs gt_pose.
PoseEstimate estimate_pose(const std::vector<Vec3>& points, const KeypointSet& object_kp,
                           const OffsetField& offsets, const Pose& gt_pose, const PipelineConfig& cfg);

}  // namespace stereopose::pose
