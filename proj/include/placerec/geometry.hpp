#ifndef PLACEREC_GEOMETRY_HPP
#define PLACEREC_GEOMETRY_HPP

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "placerec/feature_io.hpp"

namespace placerec {

// Rigid camera pose, world to camera: x_cam = R * x_world + t.
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d transform(const Eigen::Vector3d& x_world) const {
        return rotation * x_world + translation;
    }
    Pose inverse() const { return {rotation.transpose(), -(rotation.transpose() * translation)}; }
};

bool is_valid_rotation(const Eigen::Matrix3d& r, double tol = 1e-9);

// Nearest orthonormal matrix with positive determinant (SVD projection).
Eigen::Matrix3d orthonormalized(const Eigen::Matrix3d& r);

// Rodrigues exponential of an axis-angle vector.
Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& omega);

// Angle of the rotation taking r1 to r2, radians.
double rotation_angle_between(const Eigen::Matrix3d& r1, const Eigen::Matrix3d& r2);

struct Correspondence {
    Eigen::Vector3d point3d;          // world frame, meters
    Eigen::Vector2d pixel;            // observed (u, v)
    uint64_t source_keyframe = 0;     // provenance for group matching
};

struct RansacParams {
    int max_iterations = 300;
    double inlier_threshold_px = 3.0;
    double confidence = 0.99;
    int min_inliers = 15;
    uint64_t seed = 0;
};

// Pinhole projection. Throws BehindCamera when the camera-frame depth is
// not positive.
Eigen::Vector2d project(const Eigen::Vector3d& point3d, const Pose& pose,
                        const CameraIntrinsics& k);

// Sum of squared pixel residuals; +infinity if any point falls behind the
// camera under this pose.
double reprojection_cost(const Pose& pose, const std::vector<Correspondence>& correspondences,
                         const CameraIntrinsics& k);

// Minimal absolute pose from three 2D-3D correspondences (direct quartic
// solution of the three law-of-cosines range equations, roots polished by
// Newton). Up to four candidates, sorted by translation lexicographically.
// Throws DegenerateGeometry for collinear points or coincident bearings.
std::vector<Pose> p3p_solve(const Correspondence& c1, const Correspondence& c2,
                            const Correspondence& c3, const CameraIntrinsics& k);

// Residual of one correspondence: project(X) - pixel.
Eigen::Vector2d reprojection_residual(const Pose& pose, const Correspondence& c,
                                      const CameraIntrinsics& k);

// Jacobian of the residual w.r.t. the 6-vector increment delta = (omega, dt)
// applied by apply_increment, evaluated at delta = 0.
Eigen::Matrix<double, 2, 6> reprojection_jacobian(const Pose& pose, const Eigen::Vector3d& point3d,
                                                  const CameraIntrinsics& k);

// Left-composed pose increment: R' = exp(omega) R, t' = exp(omega) t + dt.
Pose apply_increment(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta);

struct RefineReport {
    std::vector<double> costs;  // accepted cost trace, costs[0] is the initial value
    int iterations = 0;
};

// Gauss-Newton over the axis-angle tangent increment, re-orthonormalizing
// the rotation each step. Cost is monotone non-increasing; stops early when
// the decrease falls below 1e-10. Throws TooFewCorrespondences (< 4),
// BehindCamera (infeasible start), SingularNormalEquations.
Pose refine_pose(const Pose& initial, const std::vector<Correspondence>& correspondences,
                 const CameraIntrinsics& k, int iterations = 10, RefineReport* report = nullptr);

struct RansacResult {
    Pose pose;
    std::vector<int> inliers;    // ascending indices into the input, under the final pose
    int iterations_run = 0;
    int best_hypothesis = -1;    // iteration index that produced the winner
    int best_sample_inliers = 0; // inlier count of the winning hypothesis, pre-refinement
};

// Hypothesize-and-verify absolute pose: seeded sampling of 3-point minimal
// sets plus a 4th point to disambiguate multiple roots, adaptive iteration
// cap from the best inlier ratio, Gauss-Newton refit on the winning inlier
// set. Bitwise deterministic for a fixed input order and seed. Throws
// TooFewCorrespondences, NoConsensus.
RansacResult ransac_pnp(const std::vector<Correspondence>& correspondences,
                        const CameraIntrinsics& k, const RansacParams& params);

}  // namespace placerec

#endif
