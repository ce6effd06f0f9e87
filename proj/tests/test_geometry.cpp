#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "placerec/geometry.hpp"
#include "placerec/rng.hpp"

using namespace placerec;
using testutil::point_in_frustum;
using testutil::random_pose;
using testutil::random_rotation;

namespace {

const CameraIntrinsics kCam{500.0, 500.0, 320.0, 240.0};

std::vector<Correspondence> make_scene(Rng& rng, int n, const Pose& pose,
                                       double pixel_noise = 0.0) {
    std::vector<Correspondence> corrs;
    corrs.reserve(n);
    for (int i = 0; i < n; ++i) {
        Correspondence c;
        c.point3d = point_in_frustum(rng, pose);
        c.pixel = project(c.point3d, pose, kCam);
        if (pixel_noise > 0.0) {
            c.pixel.x() += pixel_noise * rng.normal();
            c.pixel.y() += pixel_noise * rng.normal();
        }
        corrs.push_back(c);
    }
    return corrs;
}

double pose_rot_err(const Pose& a, const Pose& b) {
    return rotation_angle_between(a.rotation, b.rotation);
}

double pose_trans_err(const Pose& a, const Pose& b) {
    return (a.translation - b.translation).norm();
}

bool bitwise_equal(const Pose& a, const Pose& b) {
    return std::memcmp(a.rotation.data(), b.rotation.data(), 9 * sizeof(double)) == 0 &&
           std::memcmp(a.translation.data(), b.translation.data(), 3 * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("pinhole projection hand cases") {
    const Pose identity{};
    Eigen::Vector2d px = project({0, 0, 1}, identity, kCam);
    CHECK(px.x() == doctest::Approx(320.0));
    CHECK(px.y() == doctest::Approx(240.0));

    px = project({1, 0, 2}, identity, kCam);
    CHECK(px.x() == doctest::Approx(570.0));
    CHECK(px.y() == doctest::Approx(240.0));

    CameraIntrinsics skewed{500.0, 400.0, 320.0, 240.0};
    px = project({0, 1, 2}, identity, skewed);
    CHECK(px.x() == doctest::Approx(320.0));
    CHECK(px.y() == doctest::Approx(440.0));

    CHECK_THROWS_AS((void)project({0, 0, -1}, identity, kCam), BehindCamera);
    CHECK_THROWS_AS((void)project({0, 0, 0}, identity, kCam), BehindCamera);

    // The pose is world-to-camera: x_cam = R x + t.
    Pose pose;
    pose.rotation = rotation_exp({0, M_PI / 2, 0});
    pose.translation = Eigen::Vector3d(0, 0, 3);
    // World (-1, 0, 0) maps to camera (0, 0, 1) + (0, 0, 3).
    px = project({-1, 0, 0}, pose, kCam);
    CHECK(px.x() == doctest::Approx(320.0));
    CHECK(px.y() == doctest::Approx(240.0));
}

TEST_CASE("rotation utilities") {
    CHECK(rotation_exp(Eigen::Vector3d::Zero()).isApprox(Eigen::Matrix3d::Identity()));

    const Eigen::Matrix3d quarter = rotation_exp({0, 0, M_PI / 2});
    CHECK((quarter * Eigen::Vector3d::UnitX()).isApprox(Eigen::Vector3d::UnitY(), 1e-12));

    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        Eigen::Vector3d omega;
        for (int i = 0; i < 3; ++i) omega[i] = rng.uniform(-1, 1);
        const Eigen::Matrix3d r = rotation_exp(omega);
        CHECK(is_valid_rotation(r, 1e-9));
        CHECK(rotation_angle_between(Eigen::Matrix3d::Identity(), r) ==
              doctest::Approx(omega.norm()).epsilon(1e-9));
    }

    CHECK(!is_valid_rotation(2.0 * Eigen::Matrix3d::Identity()));
    Eigen::Matrix3d reflection = Eigen::Matrix3d::Identity();
    reflection(2, 2) = -1.0;  // orthonormal but det -1
    CHECK(!is_valid_rotation(reflection));

    Eigen::Matrix3d noisy = random_rotation(rng);
    const Eigen::Matrix3d clean = noisy;
    noisy.array() += 1e-4;
    CHECK(!is_valid_rotation(noisy));
    const Eigen::Matrix3d fixed = orthonormalized(noisy);
    CHECK(is_valid_rotation(fixed, 1e-9));
    CHECK(rotation_angle_between(fixed, clean) < 1e-3);
}

TEST_CASE("reprojection cost is infinite behind the camera") {
    Correspondence c;
    c.point3d = {0, 0, -2};
    c.pixel = {320, 240};
    CHECK(std::isinf(reprojection_cost(Pose{}, {c}, kCam)));

    c.point3d = {0, 0, 2};
    CHECK(reprojection_cost(Pose{}, {c}, kCam) == doctest::Approx(0.0));
    c.pixel = {323, 236};  // 3 px off in u, 4 in v
    CHECK(reprojection_cost(Pose{}, {c}, kCam) == doctest::Approx(25.0));
}

TEST_CASE("p3p recovers the true pose on random configurations") {
    Rng rng(101);
    for (int trial = 0; trial < 300; ++trial) {
        const Pose gt = random_pose(rng);
        const auto corrs = make_scene(rng, 3, gt);
        const auto candidates = p3p_solve(corrs[0], corrs[1], corrs[2], kCam);
        REQUIRE(!candidates.empty());
        CHECK(candidates.size() <= 4);

        double best = std::numeric_limits<double>::infinity();
        for (const auto& cand : candidates) {
            CHECK(is_valid_rotation(cand.rotation, 1e-6));
            // every candidate must reproject the three points
            for (const auto& c : corrs)
                CHECK(reprojection_residual(cand, c, kCam).norm() < 1e-6);
            best = std::min(best, pose_rot_err(cand, gt) + pose_trans_err(cand, gt));
        }
        // the quartic squares the conditioning, so parameter accuracy is a
        // couple of orders looser than the sub-1e-6 px reprojection above
        CHECK(best < 1e-6);

        // candidates arrive sorted by translation, lexicographically
        for (size_t i = 0; i + 1 < candidates.size(); ++i) {
            const auto& a = candidates[i].translation;
            const auto& b = candidates[i + 1].translation;
            const bool ordered =
                std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3) ||
                (a - b).norm() < 1e-12;
            CHECK(ordered);
        }
    }
}

TEST_CASE("p3p rejects degenerate geometry") {
    auto corr = [](const Eigen::Vector3d& p) {
        Correspondence c;
        c.point3d = p;
        c.pixel = project(p, Pose{}, kCam);
        return c;
    };
    // collinear world points
    CHECK_THROWS_AS((void)p3p_solve(corr({-1, 0, 3}), corr({0, 0, 3}), corr({1, 0, 3}), kCam),
                    DegenerateGeometry);
    // two points on the same viewing ray share a bearing
    CHECK_THROWS_AS((void)p3p_solve(corr({0, 0, 2}), corr({0, 0, 4}), corr({1, 1, 3}), kCam),
                    DegenerateGeometry);
}

TEST_CASE("jacobian matches central finite differences") {
    Rng rng(55);
    const double h = 1e-6;
    for (int trial = 0; trial < 200; ++trial) {
        const Pose pose = random_pose(rng);
        Correspondence c;
        c.point3d = point_in_frustum(rng, pose);
        c.pixel = {rng.uniform(0, 640), rng.uniform(0, 480)};

        const Eigen::Matrix<double, 2, 6> j = reprojection_jacobian(pose, c.point3d, kCam);
        for (int col = 0; col < 6; ++col) {
            Eigen::Matrix<double, 6, 1> delta = Eigen::Matrix<double, 6, 1>::Zero();
            delta[col] = h;
            const Eigen::Vector2d plus =
                reprojection_residual(apply_increment(pose, delta), c, kCam);
            delta[col] = -h;
            const Eigen::Vector2d minus =
                reprojection_residual(apply_increment(pose, delta), c, kCam);
            const Eigen::Vector2d fd = (plus - minus) / (2.0 * h);
            for (int row = 0; row < 2; ++row)
                CHECK(std::abs(fd[row] - j(row, col)) <=
                      1e-4 * std::max(1.0, std::abs(j(row, col))));
        }
    }
}

TEST_CASE("apply_increment composes on the left") {
    Rng rng(4);
    const Pose pose = random_pose(rng);
    Eigen::Matrix<double, 6, 1> delta;
    delta << 0.01, -0.02, 0.03, 0.1, -0.2, 0.3;
    const Pose moved = apply_increment(pose, delta);
    const Eigen::Matrix3d expect_r = rotation_exp(delta.head<3>()) * pose.rotation;
    const Eigen::Vector3d expect_t =
        rotation_exp(delta.head<3>()) * pose.translation + delta.tail<3>();
    CHECK(moved.rotation.isApprox(expect_r, 1e-12));
    CHECK(moved.translation.isApprox(expect_t, 1e-12));
}

TEST_CASE("refinement converges and its cost trace is monotone") {
    Rng rng(7);

    SUBCASE("the true pose is a fixed point") {
        const Pose gt = random_pose(rng);
        const auto corrs = make_scene(rng, 20, gt);
        RefineReport report;
        const Pose refined = refine_pose(gt, corrs, kCam, 10, &report);
        CHECK(pose_rot_err(refined, gt) < 1e-10);
        CHECK(pose_trans_err(refined, gt) < 1e-10);
        REQUIRE(!report.costs.empty());
        CHECK(report.costs.front() < 1e-18);
    }

    SUBCASE("recovers from a 2 degree / 5 cm perturbation") {
        for (int trial = 0; trial < 20; ++trial) {
            const Pose gt = random_pose(rng);
            const auto corrs = make_scene(rng, 30, gt);
            Pose start = gt;
            start.rotation = random_rotation(rng, 2.0 * M_PI / 180.0) * gt.rotation;
            for (int i = 0; i < 3; ++i)
                start.translation[i] += rng.uniform(-0.05, 0.05) / std::sqrt(3.0);
            const Pose refined = refine_pose(start, corrs, kCam, 20);
            CHECK(pose_rot_err(refined, gt) < 1e-6);
            CHECK(pose_trans_err(refined, gt) < 1e-6);
        }
    }

    SUBCASE("cost trace never increases, even on noisy data") {
        for (int trial = 0; trial < 20; ++trial) {
            const Pose gt = random_pose(rng);
            const auto corrs = make_scene(rng, 25, gt, 1.0);
            Pose start = gt;
            start.rotation = random_rotation(rng, 3.0 * M_PI / 180.0) * gt.rotation;
            start.translation += Eigen::Vector3d(0.05, -0.03, 0.04);
            RefineReport report;
            (void)refine_pose(start, corrs, kCam, 15, &report);
            REQUIRE(report.costs.size() >= 1);
            for (size_t i = 0; i + 1 < report.costs.size(); ++i)
                CHECK(report.costs[i + 1] <= report.costs[i] + 1e-12);
        }
    }

    SUBCASE("too few correspondences") {
        const Pose gt = random_pose(rng);
        const auto corrs = make_scene(rng, 3, gt);
        CHECK_THROWS_AS((void)refine_pose(gt, corrs, kCam), TooFewCorrespondences);
    }

    SUBCASE("infeasible start throws BehindCamera") {
        const Pose gt;
        auto corrs = make_scene(rng, 10, gt);
        Pose start = gt;
        start.translation.z() = -20.0;  // pushes every point behind the camera
        CHECK_THROWS_AS((void)refine_pose(start, corrs, kCam), BehindCamera);
    }
}

TEST_CASE("ransac recovers the exact pose on clean data") {
    Rng rng(31);
    const Pose gt = random_pose(rng);
    const auto corrs = make_scene(rng, 30, gt);
    const RansacResult res = ransac_pnp(corrs, kCam, {});
    CHECK(pose_rot_err(res.pose, gt) < 1e-6);
    CHECK(pose_trans_err(res.pose, gt) < 1e-6);
    REQUIRE(res.inliers.size() == 30);
    CHECK(std::is_sorted(res.inliers.begin(), res.inliers.end()));
    CHECK(res.iterations_run > 0);
    CHECK(res.best_hypothesis >= 0);
    CHECK(res.best_sample_inliers >= 4);
}

TEST_CASE("ransac shrugs off 30 percent outliers and pixel noise") {
    Rng rng(37);
    for (int trial = 0; trial < 5; ++trial) {
        const Pose gt = random_pose(rng);
        auto corrs = make_scene(rng, 70, gt, 1.0);
        for (int i = 0; i < 30; ++i) {
            Correspondence c;
            c.point3d = point_in_frustum(rng, gt);
            c.pixel = {rng.uniform(0, 640), rng.uniform(0, 480)};  // unrelated pixel
            corrs.push_back(c);
        }
        const RansacResult res = ransac_pnp(corrs, kCam, {});
        CHECK(pose_rot_err(res.pose, gt) < 0.5 * M_PI / 180.0);
        CHECK(pose_trans_err(res.pose, gt) < 0.05);

        // Jaccard overlap with the 70 planted inliers.
        std::vector<int> truth(70);
        for (int i = 0; i < 70; ++i) truth[i] = i;
        std::vector<int> inter;
        std::set_intersection(res.inliers.begin(), res.inliers.end(), truth.begin(),
                              truth.end(), std::back_inserter(inter));
        const double uni =
            double(res.inliers.size()) + double(truth.size()) - double(inter.size());
        CHECK(double(inter.size()) / uni >= 0.95);
    }
}

TEST_CASE("ransac input guards") {
    Rng rng(41);
    const Pose gt = random_pose(rng);
    const auto three = make_scene(rng, 3, gt);
    CHECK_THROWS_AS((void)ransac_pnp(three, kCam, {}), TooFewCorrespondences);

    // pure garbage never reaches min_inliers
    std::vector<Correspondence> garbage;
    for (int i = 0; i < 30; ++i) {
        Correspondence c;
        c.point3d = point_in_frustum(rng, Pose{});
        c.pixel = {rng.uniform(0, 640), rng.uniform(0, 480)};
        garbage.push_back(c);
    }
    CHECK_THROWS_AS((void)ransac_pnp(garbage, kCam, {}), NoConsensus);
}

TEST_CASE("ransac is bitwise deterministic for fixed seed and input") {
    Rng rng(47);
    const Pose gt = random_pose(rng);
    auto corrs = make_scene(rng, 40, gt, 0.5);
    for (int i = 0; i < 10; ++i) {
        Correspondence c;
        c.point3d = point_in_frustum(rng, gt);
        c.pixel = {rng.uniform(0, 640), rng.uniform(0, 480)};
        corrs.push_back(c);
    }
    RansacParams params;
    params.seed = 9;
    const RansacResult a = ransac_pnp(corrs, kCam, params);
    const RansacResult b = ransac_pnp(corrs, kCam, params);
    CHECK(bitwise_equal(a.pose, b.pose));
    CHECK(a.inliers == b.inliers);
    CHECK(a.iterations_run == b.iterations_run);
    CHECK(a.best_hypothesis == b.best_hypothesis);
    CHECK(a.best_sample_inliers == b.best_sample_inliers);
}
