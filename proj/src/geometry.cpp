#include "placerec/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "placerec/errors.hpp"
#include "placerec/rng.hpp"

namespace placerec {

bool is_valid_rotation(const Eigen::Matrix3d& r, double tol) {
    const Eigen::Matrix3d gram = r.transpose() * r;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(r.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& r) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
    if (out.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        out = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return out;
}

Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& omega) {
    const double theta = omega.norm();
    Eigen::Matrix3d hat;
    hat << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(), omega.x(), 0;
    if (theta < 1e-12) return Eigen::Matrix3d::Identity() + hat;
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    return Eigen::Matrix3d::Identity() + a * hat + b * hat * hat;
}

double rotation_angle_between(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2) {
    const double c = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
    return std::acos(std::clamp(c, -1.0, 1.0));
}

Eigen::Vector2d project(const Eigen::Vector3d& point3d, const Pose& pose,
                        const CameraIntrinsics& k) {
    const Eigen::Vector3d y = pose.transform(point3d);
    if (!(y.z() > 0.0))
        throw BehindCamera("camera-frame depth " + std::to_string(y.z()));
    return {k.fx * y.x() / y.z() + k.cx, k.fy * y.y() / y.z() + k.cy};
}

Eigen::Vector2d reprojection_residual(const Pose& pose, const Correspondence& c,
                                      const CameraIntrinsics& k) {
    return project(c.point3d, pose, k) - c.pixel;
}

double reprojection_cost(const Pose& pose, const std::vector<Correspondence>& correspondences,
                         const CameraIntrinsics& k) {
    double cost = 0.0;
    for (const Correspondence& c : correspondences) {
        const Eigen::Vector3d y = pose.transform(c.point3d);
        if (!(y.z() > 0.0)) return std::numeric_limits<double>::infinity();
        const Eigen::Vector2d p(k.fx * y.x() / y.z() + k.cx, k.fy * y.y() / y.z() + k.cy);
        cost += (p - c.pixel).squaredNorm();
    }
    return cost;
}

// ---------------------------------------------------------------------------
// P3P
// ---------------------------------------------------------------------------

namespace {

// Real roots of a polynomial given coefficients highest degree first, via
// the companion matrix. Roots are Newton-polished on the polynomial.
std::vector<double> real_roots(std::vector<double> coeffs) {
    double maxc = 0.0;
    for (double c : coeffs) maxc = std::max(maxc, std::abs(c));
    if (maxc == 0.0) return {};
    while (coeffs.size() > 1 && std::abs(coeffs.front()) < 1e-14 * maxc)
        coeffs.erase(coeffs.begin());
    const int deg = static_cast<int>(coeffs.size()) - 1;
    if (deg < 1) return {};
    if (deg == 1) return {-coeffs[1] / coeffs[0]};

    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(deg, deg);
    for (int i = 0; i < deg; ++i) companion(0, i) = -coeffs[i + 1] / coeffs[0];
    for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);

    auto eval = [&](double x, double* deriv) {
        double p = coeffs[0], d = 0.0;
        for (size_t i = 1; i < coeffs.size(); ++i) {
            d = d * x + p;
            p = p * x + coeffs[i];
        }
        if (deriv) *deriv = d;
        return p;
    };

    std::vector<double> roots;
    for (int i = 0; i < deg; ++i) {
        const std::complex<double> z = es.eigenvalues()[i];
        if (std::abs(z.imag()) > 1e-4 * std::max(1.0, std::abs(z.real()))) continue;
        double x = z.real();
        for (int it = 0; it < 30; ++it) {
            double d;
            const double p = eval(x, &d);
            if (d == 0.0) break;
            const double step = p / d;
            x -= step;
            if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(x))) break;
        }
        if (std::abs(eval(x, nullptr)) > 1e-6 * maxc * std::pow(std::max(1.0, std::abs(x)), deg))
            continue;
        bool dup = false;
        for (double r : roots)
            if (std::abs(r - x) < 1e-9 * std::max(1.0, std::abs(x))) dup = true;
        if (!dup) roots.push_back(x);
    }
    return roots;
}

Eigen::Vector3d bearing_of(const Eigen::Vector2d& pixel, const CameraIntrinsics& k) {
    Eigen::Vector3d f((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
    return f.normalized();
}

// Rotation + translation mapping the source points onto the target points
// in least squares (here: exact for consistent inputs).
Pose absolute_orientation(const Eigen::Vector3d src[3], const Eigen::Vector3d dst[3]) {
    const Eigen::Vector3d pc = (src[0] + src[1] + src[2]) / 3.0;
    const Eigen::Vector3d qc = (dst[0] + dst[1] + dst[2]) / 3.0;
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (int i = 0; i < 3; ++i) h += (src[i] - pc) * (dst[i] - qc).transpose();
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixV() * svd.matrixU().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixV() * flip * svd.matrixU().transpose();
    }
    return {r, qc - r * pc};
}

}  // namespace

std::vector<Pose> p3p_solve(const Correspondence& c1, const Correspondence& c2,
                            const Correspondence& c3, const CameraIntrinsics& k) {
    const Eigen::Vector3d p[3] = {c1.point3d, c2.point3d, c3.point3d};
    const Eigen::Vector3d f[3] = {bearing_of(c1.pixel, k), bearing_of(c2.pixel, k),
                                  bearing_of(c3.pixel, k)};

    const Eigen::Vector3d e12 = p[1] - p[0], e13 = p[2] - p[0];
    if (e12.cross(e13).norm() < 1e-10 * e12.norm() * e13.norm())
        throw DegenerateGeometry("collinear world points");
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (f[i].dot(f[j]) > 1.0 - 1e-12)
                throw DegenerateGeometry("coincident bearing vectors");

    // Law-of-cosines system in the ranges s_i along each bearing:
    //   s2^2 + s3^2 - 2 s2 s3 ca = A    A = |P2-P3|^2
    //   s1^2 + s3^2 - 2 s1 s3 cb = B    B = |P1-P3|^2
    //   s1^2 + s2^2 - 2 s1 s2 cg = C    C = |P1-P2|^2
    // Substituting u = s2/s1, v = s3/s1 reduces to a quartic in v.
    const double ca = f[1].dot(f[2]);
    const double cb = f[0].dot(f[2]);
    const double cg = f[0].dot(f[1]);
    const double a_raw = (p[1] - p[2]).squaredNorm();
    const double b_raw = (p[0] - p[2]).squaredNorm();
    const double c_raw = (p[0] - p[1]).squaredNorm();
    const double scale = std::max({a_raw, b_raw, c_raw});
    const double A = a_raw / scale, B = b_raw / scale, C = c_raw / scale;

    const double a4 = A * A - 2 * A * B - 2 * A * C + B * B - 4 * B * C * ca * ca + 2 * B * C +
                      C * C;
    const double a3 = -4 * (A * A * cb - A * B * ca * cg - A * B * cb - 2 * A * C * cb +
                            B * B * ca * cg - 2 * B * C * ca * ca * cb - B * C * ca * cg +
                            B * C * cb + C * C * cb);
    const double a2 = 2 * (2 * A * A * cb * cb + A * A - 4 * A * B * ca * cb * cg -
                           2 * A * B * cg * cg - 4 * A * C * cb * cb - 2 * A * C +
                           2 * B * B * ca * ca + 2 * B * B * cg * cg - B * B -
                           2 * B * C * ca * ca - 4 * B * C * ca * cb * cg + 2 * C * C * cb * cb +
                           C * C);
    const double a1 = -4 * (A * A * cb - A * B * ca * cg - 2 * A * B * cb * cg * cg + A * B * cb -
                            2 * A * C * cb + B * B * ca * cg - B * C * ca * cg - B * C * cb +
                            C * C * cb);
    const double a0 = A * A - 4 * A * B * cg * cg + 2 * A * B - 2 * A * C + B * B - 2 * B * C +
                      C * C;

    std::vector<Pose> candidates;
    for (const double v : real_roots({a4, a3, a2, a1, a0})) {
        if (v <= 0.0) continue;

        // u follows linearly from v; near the degenerate denominator fall
        // back to the quadratic in u and keep roots consistent with the
        // remaining equation.
        std::vector<double> u_candidates;
        const double den = 2.0 * B * (ca * v - cg);
        const double num = 2 * A * cb * v - A * v * v - A + B * v * v - B - 2 * C * cb * v +
                           C * v * v + C;
        if (std::abs(den) > 1e-10 * std::max(1.0, std::abs(num))) {
            u_candidates.push_back(num / den);
        } else {
            const double q = 1.0 - (C / B) * (1.0 + v * v - 2.0 * v * cb);
            const double disc = cg * cg - q;
            if (disc < 0.0) continue;
            const double rt = std::sqrt(disc);
            for (const double u : {cg + rt, cg - rt}) {
                const double lhs = (u * u + v * v - 2 * u * v * ca);
                const double rhs = (A / B) * (1.0 + v * v - 2.0 * v * cb);
                if (std::abs(lhs - rhs) < 1e-6 * std::max(1.0, std::abs(rhs)))
                    u_candidates.push_back(u);
            }
        }

        for (const double u : u_candidates) {
            if (u <= 0.0) continue;
            const double s1sq = C / (1.0 + u * u - 2.0 * u * cg);
            if (!(s1sq > 0.0)) continue;
            Eigen::Vector3d s(std::sqrt(s1sq), u * std::sqrt(s1sq), v * std::sqrt(s1sq));

            // Newton on the range system to clean up root noise.
            for (int it = 0; it < 10; ++it) {
                Eigen::Vector3d residual(
                    s[0] * s[0] + s[1] * s[1] - 2 * s[0] * s[1] * cg - C,
                    s[0] * s[0] + s[2] * s[2] - 2 * s[0] * s[2] * cb - B,
                    s[1] * s[1] + s[2] * s[2] - 2 * s[1] * s[2] * ca - A);
                if (residual.cwiseAbs().maxCoeff() < 1e-15) break;
                Eigen::Matrix3d jac;
                jac << 2 * s[0] - 2 * s[1] * cg, 2 * s[1] - 2 * s[0] * cg, 0.0,
                       2 * s[0] - 2 * s[2] * cb, 0.0, 2 * s[2] - 2 * s[0] * cb,
                       0.0, 2 * s[1] - 2 * s[2] * ca, 2 * s[2] - 2 * s[1] * ca;
                const Eigen::Vector3d step = jac.partialPivLu().solve(residual);
                if (!step.allFinite()) break;
                s -= step;
                if (step.cwiseAbs().maxCoeff() < 1e-15) break;
            }
            if (!(s[0] > 0.0 && s[1] > 0.0 && s[2] > 0.0)) continue;

            const double dist_scale = std::sqrt(scale);
            const Eigen::Vector3d q[3] = {s[0] * dist_scale * f[0], s[1] * dist_scale * f[1],
                                          s[2] * dist_scale * f[2]};
            Pose pose = absolute_orientation(p, q);
            pose.rotation = orthonormalized(pose.rotation);

            bool dup = false;
            for (const Pose& other : candidates) {
                if ((other.translation - pose.translation).norm() < 1e-9 &&
                    rotation_angle_between(other.rotation, pose.rotation) < 1e-9)
                    dup = true;
            }
            if (!dup) candidates.push_back(pose);
        }
    }

    std::sort(candidates.begin(), candidates.end(), [](const Pose& x, const Pose& y) {
        if (x.translation.x() != y.translation.x()) return x.translation.x() < y.translation.x();
        if (x.translation.y() != y.translation.y()) return x.translation.y() < y.translation.y();
        return x.translation.z() < y.translation.z();
    });
    return candidates;
}

// ---------------------------------------------------------------------------
// Gauss-Newton refinement
// ---------------------------------------------------------------------------

Pose apply_increment(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
    const Eigen::Matrix3d rot = rotation_exp(delta.head<3>());
    return {rot * pose.rotation, rot * pose.translation + delta.tail<3>()};
}

Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Pose& pose, const Eigen::Vector3d& point3d,
                                                  const CameraIntrinsics& k) {
    const Eigen::Vector3d y = pose.transform(point3d);
    if (!(y.z() > 0.0)) throw BehindCamera("jacobian at non-positive depth");
    const double iz = 1.0 / y.z();
    Eigen::Matrix<double, 2, 3> dpi;
    dpi << k.fx * iz, 0.0, -k.fx * y.x() * iz * iz,
           0.0, k.fy * iz, -k.fy * y.y() * iz * iz;
    // Increment acts on the left: y(delta) = exp(omega) y + dt, so
    // dy/domega = -[y]x and dy/ddt = I.
    Eigen::Matrix<double, 3, 6> dy;
    dy << 0.0, y.z(), -y.y(), 1.0, 0.0, 0.0,
          -y.z(), 0.0, y.x(), 0.0, 1.0, 0.0,
          y.y(), -y.x(), 0.0, 0.0, 0.0, 1.0;
    return dpi * dy;
}

Pose refine_pose(const Pose& initial, const std::vector<Correspondence>& correspondences,
                 const CameraIntrinsics& k, int iterations, RefineReport* report) {
    if (correspondences.size() < 4)
        throw TooFewCorrespondences("refinement needs at least 4, got " +
                                    std::to_string(correspondences.size()));

    Pose pose = initial;
    double cost = reprojection_cost(pose, correspondences, k);
    if (!std::isfinite(cost)) throw BehindCamera("refinement started behind the camera");
    if (report) {
        report->costs.assign(1, cost);
        report->iterations = 0;
    }

    using Mat6 = Eigen::Matrix<double, 6, 6>;
    using Vec6 = Eigen::Matrix<double, 6, 1>;

    for (int it = 0; it < iterations; ++it) {
        Mat6 jtj = Mat6::Zero();
        Vec6 jtr = Vec6::Zero();
        for (const Correspondence& c : correspondences) {
            const Eigen::Matrix<double, 2, 6> jac = reprojection_jacobian(pose, c.point3d, k);
            const Eigen::Vector2d r = reprojection_residual(pose, c, k);
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * r;
        }

        Eigen::LDLT<Mat6> ldlt(jtj);
        Vec6 delta = ldlt.solve(-jtr);
        if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
            ldlt.compute(jtj + 1e-6 * Mat6::Identity());
            delta = ldlt.solve(-jtr);
            if (ldlt.info() != Eigen::Success || !delta.allFinite())
                throw SingularNormalEquations("normal equations not solvable");
        }

        // Halve the step until the cost actually drops; reject otherwise.
        bool accepted = false;
        double alpha = 1.0;
        for (int half = 0; half < 11; ++half, alpha *= 0.5) {
            Pose trial = apply_increment(pose, alpha * delta);
            trial.rotation = orthonormalized(trial.rotation);
            const double trial_cost = reprojection_cost(trial, correspondences, k);
            if (trial_cost < cost) {
                const double decrease = cost - trial_cost;
                pose = trial;
                cost = trial_cost;
                accepted = true;
                if (report) {
                    report->costs.push_back(cost);
                    report->iterations = it + 1;
                }
                if (decrease < 1e-10) return pose;
                break;
            }
        }
        if (!accepted) break;
    }
    return pose;
}

// ---------------------------------------------------------------------------
// RANSAC
// ---------------------------------------------------------------------------

RansacResult ransac_pnp(const std::vector<Correspondence>& correspondences,
                        const CameraIntrinsics& k, const RansacParams& params) {
    const int n = static_cast<int>(correspondences.size());
    if (n < 4)
        throw TooFewCorrespondences("ransac needs at least 4, got " + std::to_string(n));
    if (!(params.confidence > 0.0 && params.confidence < 1.0))
        throw InvariantViolation("confidence must be in (0, 1)");

    const double thr_sq = params.inlier_threshold_px * params.inlier_threshold_px;
    auto inliers_of = [&](const Pose& pose) {
        std::vector<int> in;
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector3d y = pose.transform(correspondences[i].point3d);
            if (!(y.z() > 0.0)) continue;
            const Eigen::Vector2d px(k.fx * y.x() / y.z() + k.cx, k.fy * y.y() / y.z() + k.cy);
            if ((px - correspondences[i].pixel).squaredNorm() <= thr_sq) in.push_back(i);
        }
        return in;
    };

    Rng rng(params.seed);
    RansacResult best;
    std::vector<int> best_inliers;
    int cap = params.max_iterations;

    int it = 0;
    for (; it < cap; ++it) {
        int idx[4];
        for (int s = 0; s < 4; ++s) {
            bool fresh;
            do {
                idx[s] = static_cast<int>(rng.index(n));
                fresh = true;
                for (int t = 0; t < s; ++t)
                    if (idx[t] == idx[s]) fresh = false;
            } while (!fresh);
        }

        std::vector<Pose> hypotheses;
        try {
            hypotheses = p3p_solve(correspondences[idx[0]], correspondences[idx[1]],
                                   correspondences[idx[2]], k);
        } catch (const DegenerateGeometry&) {
            continue;
        }

        // Disambiguate multiple roots on the held-out 4th point.
        int cand_count = -1;
        double cand_cost4 = std::numeric_limits<double>::infinity();
        int cand_index = -1;
        std::vector<int> cand_inliers;
        for (size_t c = 0; c < hypotheses.size(); ++c) {
            std::vector<int> in = inliers_of(hypotheses[c]);
            const int count = static_cast<int>(in.size());
            double cost4 = std::numeric_limits<double>::infinity();
            const Eigen::Vector3d y = hypotheses[c].transform(correspondences[idx[3]].point3d);
            if (y.z() > 0.0) {
                const Eigen::Vector2d px(k.fx * y.x() / y.z() + k.cx,
                                         k.fy * y.y() / y.z() + k.cy);
                cost4 = (px - correspondences[idx[3]].pixel).squaredNorm();
            }
            if (count > cand_count || (count == cand_count && cost4 < cand_cost4)) {
                cand_count = count;
                cand_cost4 = cost4;
                cand_index = static_cast<int>(c);
                cand_inliers = std::move(in);
            }
        }
        if (cand_index < 0) continue;

        if (cand_count > best.best_sample_inliers) {
            best.pose = hypotheses[cand_index];
            best.best_sample_inliers = cand_count;
            best.best_hypothesis = it;
            best_inliers = std::move(cand_inliers);

            const double w = double(cand_count) / double(n);
            const double w3 = w * w * w;
            if (w3 >= 1.0) {
                cap = it + 1;
            } else if (w3 > 0.0) {
                const double needed =
                    std::ceil(std::log(1.0 - params.confidence) / std::log(1.0 - w3));
                if (needed < double(cap)) cap = std::max(it + 1, static_cast<int>(needed));
            }
        }
    }
    best.iterations_run = it;

    if (best.best_sample_inliers < params.min_inliers)
        throw NoConsensus("best consensus " + std::to_string(best.best_sample_inliers) +
                          " below minimum " + std::to_string(params.min_inliers));

    if (best_inliers.size() >= 4) {
        std::vector<Correspondence> subset;
        subset.reserve(best_inliers.size());
        for (int i : best_inliers) subset.push_back(correspondences[i]);
        best.pose = refine_pose(best.pose, subset, k);
    }
    best.inliers = inliers_of(best.pose);
    return best;
}

}  // namespace placerec
