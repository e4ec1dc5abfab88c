#include "stereopose/pose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nk/ops.hpp"
#include "stereopose/errors.hpp"

namespace stereopose::pose {

KeypointSet fps_select(const std::vector<Vec3>& points, int m) {
    if (m < 1) throw DegenerateInputError("fps_select: m must be >= 1");
    if (static_cast<int>(points.size()) < m) throw DegenerateInputError("fps_select: fewer points than keypoints");
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : points) centroid = vadd(centroid, p);
    centroid = vscale(centroid, 1.0 / static_cast<double>(points.size()));

    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(m));
    int seed = 0;
    double best = -1.0;
    for (size_t i = 0; i < points.size(); ++i) {
        const double d = vnorm(vsub(points[i], centroid));
        if (d > best) {
            best = d;
            seed = static_cast<int>(i);
        }
    }
    chosen.push_back(seed);

    std::vector<double> min_d(points.size(), std::numeric_limits<double>::infinity());
    while (static_cast<int>(chosen.size()) < m) {
        const Vec3& last = points[static_cast<size_t>(chosen.back())];
        int next = -1;
        double far = -1.0;
        for (size_t i = 0; i < points.size(); ++i) {
            min_d[i] = std::min(min_d[i], vnorm(vsub(points[i], last)));
            if (min_d[i] > far) {
                far = min_d[i];
                next = static_cast<int>(i);
            }
        }
        chosen.push_back(next);
    }

    KeypointSet out;
    for (int idx : chosen) out.points.push_back(points[static_cast<size_t>(idx)]);
    return out;
}

std::vector<std::vector<Vec3>> vote_keypoints(const std::vector<Vec3>& points, const OffsetField& offsets) {
    if (static_cast<int>(points.size()) != offsets.n) {
        throw DataMismatchError("vote_keypoints: point/offset count mismatch");
    }
    std::vector<std::vector<Vec3>> votes(static_cast<size_t>(offsets.m));
    for (int i = 0; i < offsets.n; ++i) {
        if (!offsets.in_instance[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < offsets.m; ++j) {
            votes[static_cast<size_t>(j)].push_back({points[static_cast<size_t>(i)][0] + offsets.pred[offsets.at(i, j, 0)],
                                                     points[static_cast<size_t>(i)][1] + offsets.pred[offsets.at(i, j, 1)],
                                                     points[static_cast<size_t>(i)][2] + offsets.pred[offsets.at(i, j, 2)]});
        }
    }
    return votes;
}

MeanShiftResult meanshift(const std::vector<Vec3>& votes, double bandwidth) {
    if (votes.empty()) throw DegenerateInputError("meanshift: empty vote set");
    if (!(bandwidth > 0.0)) throw DegenerateInputError("meanshift: bandwidth must be > 0");
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);

    MeanShiftResult res;
    res.assignment.assign(votes.size(), -1);
    for (size_t s = 0; s < votes.size(); ++s) {
        Vec3 x = votes[s];
        for (int it = 0; it < 100; ++it) {
            Vec3 num{0, 0, 0};
            double den = 0.0;
            for (const Vec3& v : votes) {
                const Vec3 dv = vsub(v, x);
                const double w = std::exp(-vdot(dv, dv) * inv2h2);
                num = vadd(num, vscale(v, w));
                den += w;
            }
            const Vec3 next = vscale(num, 1.0 / den);
            const double shift = vnorm(vsub(next, x));
            x = next;
            if (shift < 1e-6) break;
        }
        int mode = -1;
        for (size_t k = 0; k < res.modes.size(); ++k) {
            if (vnorm(vsub(res.modes[k], x)) < bandwidth / 2.0) {
                mode = static_cast<int>(k);
                break;
            }
        }
        if (mode < 0) {
            mode = static_cast<int>(res.modes.size());
            res.modes.push_back(x);
            res.counts.push_back(0);
        }
        res.assignment[s] = mode;
        ++res.counts[static_cast<size_t>(mode)];
    }
    res.top = static_cast<int>(std::max_element(res.counts.begin(), res.counts.end()) - res.counts.begin());
    for (size_t k = 0; k < res.counts.size(); ++k) {
        if (static_cast<int>(k) != res.top && res.counts[k] == res.counts[static_cast<size_t>(res.top)]) {
            res.tie = true;
        }
    }
    return res;
}

namespace {

// Cyclic Jacobi on a symmetric n x n matrix; returns eigenvalues and the
// column eigenvector matrix. Deterministic sweep order.
template <int N>
void jacobi_sym(std::array<std::array<double, N>, N>& a, std::array<std::array<double, N>, N>& v,
                std::array<double, N>& eig) {
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) v[i][j] = i == j ? 1.0 : 0.0;
    }
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < N; ++p)
            for (int q = p + 1; q < N; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (int p = 0; p < N; ++p) {
            for (int q = p + 1; q < N; ++q) {
                if (std::fabs(a[p][q]) < 1e-300) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < N; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < N; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < N; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    for (int i = 0; i < N; ++i) eig[i] = a[i][i];
}

void check_not_collinear(const std::vector<Vec3>& pts, const Vec3& centroid, const char* which) {
    std::array<std::array<double, 3>, 3> scat{};
    for (const Vec3& p : pts) {
        const Vec3 d = vsub(p, centroid);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) scat[static_cast<size_t>(a)][static_cast<size_t>(b)] += d[static_cast<size_t>(a)] * d[static_cast<size_t>(b)];
    }
    std::array<std::array<double, 3>, 3> v{};
    std::array<double, 3> eig{};
    jacobi_sym<3>(scat, v, eig);
    std::sort(eig.begin(), eig.end(), std::greater<>());
    if (eig[0] <= 0.0 || eig[1] <= 1e-10 * eig[0]) {
        throw DegenerateInputError(std::string("fit_pose: ") + which + " keypoints are collinear or coincident");
    }
}

}  // namespace

Pose fit_pose(const KeypointSet& object_kp, const std::vector<Vec3>& camera_kp) {
    const int m = object_kp.count();
    if (m < 3) throw DegenerateInputError("fit_pose: at least 3 keypoints required");
    if (static_cast<int>(camera_kp.size()) != m) throw DataMismatchError("fit_pose: keypoint count mismatch");

    Vec3 obj_c{0, 0, 0}, cam_c{0, 0, 0};
    for (int i = 0; i < m; ++i) {
        obj_c = vadd(obj_c, object_kp.points[static_cast<size_t>(i)]);
        cam_c = vadd(cam_c, camera_kp[static_cast<size_t>(i)]);
    }
    obj_c = vscale(obj_c, 1.0 / m);
    cam_c = vscale(cam_c, 1.0 / m);

    check_not_collinear(object_kp.points, obj_c, "object");
    check_not_collinear(camera_kp, cam_c, "camera");

    // Cross-covariance S[a][b] = sum over points of obj_a * cam_b (centered).
    double S[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
    for (int i = 0; i < m; ++i) {
        const Vec3 o = vsub(object_kp.points[static_cast<size_t>(i)], obj_c);
        const Vec3 c = vsub(camera_kp[static_cast<size_t>(i)], cam_c);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) S[a][b] += o[static_cast<size_t>(a)] * c[static_cast<size_t>(b)];
    }

    // Horn's 4x4 profile matrix; its top eigenvector is the optimal quaternion.
    std::array<std::array<double, 4>, 4> n{};
    n[0][0] = S[0][0] + S[1][1] + S[2][2];
    n[0][1] = n[1][0] = S[1][2] - S[2][1];
    n[0][2] = n[2][0] = S[2][0] - S[0][2];
    n[0][3] = n[3][0] = S[0][1] - S[1][0];
    n[1][1] = S[0][0] - S[1][1] - S[2][2];
    n[1][2] = n[2][1] = S[0][1] + S[1][0];
    n[1][3] = n[3][1] = S[2][0] + S[0][2];
    n[2][2] = -S[0][0] + S[1][1] - S[2][2];
    n[2][3] = n[3][2] = S[1][2] + S[2][1];
    n[3][3] = -S[0][0] - S[1][1] + S[2][2];

    std::array<std::array<double, 4>, 4> vecs{};
    std::array<double, 4> eig{};
    jacobi_sym<4>(n, vecs, eig);
    int best = 0;
    for (int i = 1; i < 4; ++i) {
        if (eig[i] > eig[best]) best = i;
    }
    Quat q{vecs[0][static_cast<size_t>(best)], vecs[1][static_cast<size_t>(best)], vecs[2][static_cast<size_t>(best)],
           vecs[3][static_cast<size_t>(best)]};

    Pose pose;
    pose.R = rotation_from_quat(q);  // unit quaternion: reflections impossible
    pose.t = vsub(cam_c, mat_apply(pose.R, obj_c));
    return pose;
}

double fit_pose_residual(const KeypointSet& object_kp, const std::vector<Vec3>& camera_kp, const Pose& pose) {
    double acc = 0.0;
    for (size_t i = 0; i < camera_kp.size(); ++i) {
        const Vec3 r = vsub(camera_kp[i], pose.apply(object_kp.points[i]));
        acc += vdot(r, r);
    }
    return acc;
}

double keypoint_loss(const OffsetField& offsets) {
    if (offsets.n == 0) throw DegenerateInputError("keypoint_loss: no points");
    double acc = 0.0;
    for (int i = 0; i < offsets.n; ++i) {
        if (!offsets.in_instance[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < offsets.m; ++j) {
            double sq = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double d = offsets.pred[offsets.at(i, j, k)] - offsets.gt[offsets.at(i, j, k)];
                sq += d * d;
            }
            acc += std::sqrt(sq);
        }
    }
    return acc / static_cast<double>(offsets.n);  // normalized by N only (per-point keypoint sum kept)
}

double focal_loss(const SegmentationPrediction& seg) {
    if (seg.n == 0) throw DegenerateInputError("focal_loss: no points");
    double acc = 0.0;
    for (int i = 0; i < seg.n; ++i) {
        const int cls = seg.label[static_cast<size_t>(i)];
        if (cls < 0 || cls >= seg.classes) throw DataMismatchError("focal_loss: label out of range");
        double p = seg.confidence[static_cast<size_t>(i) * seg.classes + cls];
        p = std::max(p, 1e-12);
        acc += -seg.alpha * std::pow(1.0 - p, seg.gamma) * std::log(p);
    }
    return acc / static_cast<double>(seg.n);
}

double center_loss(const CenterOffsets& c, const std::vector<uint8_t>& in_instance) {
    if (c.n == 0) throw DegenerateInputError("center_loss: no points");
    double acc = 0.0;
    for (int i = 0; i < c.n; ++i) {
        if (!in_instance[static_cast<size_t>(i)]) continue;
        double sq = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double d = c.pred[static_cast<size_t>(i) * 3 + k] - c.gt[static_cast<size_t>(i) * 3 + k];
            sq += d * d;
        }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<double>(c.n);
}

double multitask_loss(double l_kp, double l_sem, double l_ctr, double k1, double k2, double k3) {
    if (k1 < 0.0 || k2 < 0.0 || k3 < 0.0) throw DegenerateInputError("multitask_loss: weights must be >= 0");
    return k1 * l_kp + k2 * l_sem + k3 * l_ctr;
}

nk::Var keypoint_loss_graph(nk::Var offsets_pred, const nk::Tensor& offsets_gt, const nk::Tensor& in_instance) {
    nk::Graph& g = *offsets_pred.graph;
    const nk::Tensor& v = g.val(offsets_pred);
    const int n = v.extent(0), m = v.extent(1);
    nk::Var diff = nk::sub(offsets_pred, g.input(offsets_gt));
    nk::Var norms = nk::sqrt_op(nk::add_scalar(nk::sum(nk::square(diff), {2}), 1e-24));  // [n,m]
    nk::Var per_point = nk::sum(norms, {1});                                             // [n]
    nk::Var masked = nk::mul(per_point, g.input(in_instance));
    (void)m;
    return nk::mul_scalar(nk::sum_all(masked), 1.0 / static_cast<double>(n));
}

nk::Var focal_loss_graph(nk::Var confidence, const nk::Tensor& one_hot, double alpha, double gamma) {
    nk::Graph& g = *confidence.graph;
    const int n = g.val(confidence).extent(0);
    nk::Var p = nk::clamp(nk::sum(nk::mul(confidence, g.input(one_hot)), {1}), 1e-12, 1.0);
    nk::Var one_minus = nk::add_scalar(nk::neg(p), 1.0);
    nk::Var focus = gamma == 0.0 ? g.input(nk::Tensor({n}, 1.0))
                                 : nk::exp_op(nk::mul_scalar(nk::log_op(nk::add_scalar(one_minus, 1e-12)), gamma));
    nk::Var terms = nk::mul_scalar(nk::mul(focus, nk::log_op(p)), -alpha);
    return nk::mean_all(terms);
}

nk::Var center_loss_graph(nk::Var center_pred, const nk::Tensor& center_gt, const nk::Tensor& in_instance) {
    nk::Graph& g = *center_pred.graph;
    const int n = g.val(center_pred).extent(0);
    nk::Var diff = nk::sub(center_pred, g.input(center_gt));
    nk::Var norms = nk::sqrt_op(nk::add_scalar(nk::sum(nk::square(diff), {1}), 1e-24));
    nk::Var masked = nk::mul(norms, g.input(in_instance));
    return nk::mul_scalar(nk::sum_all(masked), 1.0 / static_cast<double>(n));
}

std::vector<Vec3> subsample_points(const std::vector<Vec3>& points, int max_points, nk::Rng& rng) {
    if (static_cast<int>(points.size()) <= max_points) return points;
    std::vector<int> idx(points.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < max_points; ++i) {
        const int j = i + rng.uniform_int(static_cast<int>(idx.size()) - i);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::vector<Vec3> out;
    out.reserve(static_cast<size_t>(max_points));
    for (int i = 0; i < max_points; ++i) out.push_back(points[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    return out;
}

OffsetField oracle_offsets(const std::vector<Vec3>& points, const KeypointSet& object_kp, const Pose& gt_pose,
                           double sigma, nk::Rng& rng) {
    OffsetField f(static_cast<int>(points.size()), object_kp.count());
    for (int j = 0; j < f.m; ++j) {
        const Vec3 kp_cam = gt_pose.apply(object_kp.points[static_cast<size_t>(j)]);
        for (int i = 0; i < f.n; ++i) {
            for (int k = 0; k < 3; ++k) {
                const double exact = kp_cam[static_cast<size_t>(k)] - points[static_cast<size_t>(i)][static_cast<size_t>(k)];
                f.gt[f.at(i, j, k)] = exact;
                f.pred[f.at(i, j, k)] = exact + (sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0);
            }
        }
    }
    return f;
}

PoseEstimate estimate_pose(const std::vector<Vec3>& points, const KeypointSet& object_kp,
                           const OffsetField& offsets, const Pose& gt_pose, const PipelineConfig& cfg) {
    const auto votes = vote_keypoints(points, offsets);
    PoseEstimate est;
    KeypointSet used_object;
    for (int j = 0; j < object_kp.count(); ++j) {
        if (votes[static_cast<size_t>(j)].empty()) continue;
        const MeanShiftResult ms = meanshift(votes[static_cast<size_t>(j)], cfg.bandwidth);
        est.keypoints_camera.push_back(ms.top_center());
        used_object.points.push_back(object_kp.points[static_cast<size_t>(j)]);
        if (ms.tie) ++est.tied_clusters;
    }
    if (used_object.count() < 3) {
        throw DegenerateInputError("estimate_pose: fewer than 3 recovered keypoints");
    }
    est.pose = fit_pose(used_object, est.keypoints_camera);
    est.report = metrics::evaluate_pose(gt_pose, est.pose);
    return est;
}

}  // namespace stereopose::pose
