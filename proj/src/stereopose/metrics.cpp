#include "stereopose/metrics.hpp"

#include <cmath>
#include <sstream>

#include "stereopose/errors.hpp"

namespace stereopose::metrics {

namespace {

// Applies fn(err, gt) over the valid-mask intersection; returns pixel count.
template <typename Fn>
int64_t for_each_valid(const geom::DisparityMap& d, const geom::DisparityMap& gt,
                       const std::vector<uint8_t>* extra_mask, Fn&& fn) {
    if (d.width != gt.width || d.height != gt.height) {
        throw DataMismatchError("disparity metric: shape mismatch");
    }
    if (extra_mask && extra_mask->size() != d.d.size()) {
        throw DataMismatchError("disparity metric: mask size mismatch");
    }
    int64_t n = 0;
    for (size_t i = 0; i < d.d.size(); ++i) {
        if (!d.valid[i] || !gt.valid[i]) continue;
        if (extra_mask && !(*extra_mask)[i]) continue;
        fn(d.d[i] - gt.d[i], gt.d[i]);
        ++n;
    }
    if (n == 0) throw DegenerateInputError("disparity metric: empty valid mask");
    return n;
}

}  // namespace

double epe(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask) {
    double acc = 0.0;
    const int64_t n = for_each_valid(d, gt, extra_mask, [&](double err, double) { acc += std::fabs(err); });
    return acc / static_cast<double>(n);
}

double rmse(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask) {
    double acc = 0.0;
    const int64_t n = for_each_valid(d, gt, extra_mask, [&](double err, double) { acc += err * err; });
    return std::sqrt(acc / static_cast<double>(n));
}

double bad_tau(const geom::DisparityMap& d, const geom::DisparityMap& gt, double tau,
               const std::vector<uint8_t>* extra_mask) {
    if (!(tau > 0.0)) throw DegenerateInputError("bad_tau: tau must be > 0");
    int64_t bad = 0;
    // Strictly greater than tau: boundary pixels count as inliers.
    const int64_t n = for_each_valid(d, gt, extra_mask, [&](double err, double) {
        if (std::fabs(err) > tau) ++bad;
    });
    return static_cast<double>(bad) / static_cast<double>(n);
}

double d1(const geom::DisparityMap& d, const geom::DisparityMap& gt, const std::vector<uint8_t>* extra_mask) {
    int64_t bad = 0;
    // Outlier iff |err| > 3 px and |err| > 5% of ground truth, both strict.
    const int64_t n = for_each_valid(d, gt, extra_mask, [&](double err, double gtv) {
        if (std::fabs(err) > 3.0 && std::fabs(err) > 0.05 * gtv) ++bad;
    });
    return static_cast<double>(bad) / static_cast<double>(n);
}

DisparityEvalReport evaluate_disparity(const geom::DisparityMap& d, const geom::DisparityMap& gt,
                                       const std::vector<double>& taus, const std::vector<uint8_t>* extra_mask) {
    DisparityEvalReport rep;
    double abs_acc = 0.0, sq_acc = 0.0;
    std::vector<int64_t> bad(taus.size(), 0);
    int64_t d1_bad = 0;
    rep.pixels = for_each_valid(d, gt, extra_mask, [&](double err, double gtv) {
        const double a = std::fabs(err);
        abs_acc += a;
        sq_acc += err * err;
        for (size_t k = 0; k < taus.size(); ++k) {
            if (a > taus[k]) ++bad[k];
        }
        if (a > 3.0 && a > 0.05 * gtv) ++d1_bad;
    });
    rep.epe = abs_acc / static_cast<double>(rep.pixels);
    rep.rmse = std::sqrt(sq_acc / static_cast<double>(rep.pixels));
    for (size_t k = 0; k < taus.size(); ++k) {
        rep.bad_tau.emplace_back(taus[k], static_cast<double>(bad[k]) / static_cast<double>(rep.pixels));
    }
    rep.d1 = static_cast<double>(d1_bad) / static_cast<double>(rep.pixels);
    return rep;
}

std::string DisparityEvalReport::to_kv_text() const {
    std::ostringstream os;
    os << "epe_px " << epe << "\n";
    os << "rmse_px " << rmse << "\n";
    for (const auto& [tau, frac] : bad_tau) os << "bad_" << tau << " " << frac << "\n";
    os << "d1 " << d1 << "\n";
    os << "pixels " << pixels << "\n";
    return os.str();
}

std::string PoseEvalReport::to_kv_text() const {
    std::ostringstream os;
    os << "e_t_m " << e_t << "\n";
    os << "e_r_rad " << e_r_rad << "\n";
    os << "e_r_deg " << e_r_deg << "\n";
    return os.str();
}

double translation_error(const Vec3& t, const Vec3& t_hat) { return vnorm(vsub(t, t_hat)); }

double rotation_error(const Mat3& r, const Mat3& r_hat) {
    Pose a, b;
    a.R = r;
    b.R = r_hat;
    if (!a.is_rotation(1e-6) || !b.is_rotation(1e-6)) {
        throw DegenerateInputError("rotation_error: input is not a rotation matrix");
    }
    const Mat3 rel = mat_mul(mat_transpose(r), r_hat);
    double c = 0.5 * (rel[0] + rel[4] + rel[8] - 1.0);
    c = std::min(1.0, std::max(-1.0, c));  // trace can exceed 3 numerically
    // atan2 evaluation of arccos((tr-1)/2): the skew part carries sin(theta),
    // which stays well-conditioned for angles near 0 and pi where acos is not.
    const double sx = rel[7] - rel[5], sy = rel[2] - rel[6], sz = rel[3] - rel[1];
    const double s = 0.5 * std::sqrt(sx * sx + sy * sy + sz * sz);
    return std::atan2(s, c);
}

PoseEvalReport evaluate_pose(const Pose& gt, const Pose& pred) {
    PoseEvalReport rep;
    rep.e_t = translation_error(gt.t, pred.t);
    rep.e_r_rad = rotation_error(gt.R, pred.R);
    rep.e_r_deg = rep.e_r_rad * 180.0 / M_PI;
    return rep;
}

}  // namespace stereopose::metrics
