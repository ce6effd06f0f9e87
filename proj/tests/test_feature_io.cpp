#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "placerec/feature_io.hpp"
#include "placerec/geometry.hpp"
#include "placerec/rng.hpp"

using namespace placerec;
using testutil::TempDir;

namespace {

FrameFeatures random_frame(Rng& rng, uint64_t id, int num_kp, int d_local, int d_global,
                           bool with_points) {
    FrameFeatures f;
    f.frame_id = id;
    f.local_descriptors.resize(num_kp, d_local);
    for (int i = 0; i < num_kp; ++i) {
        f.keypoints.push_back({static_cast<float>(rng.uniform(0, 640)),
                               static_cast<float>(rng.uniform(0, 480)),
                               static_cast<float>(rng.uniform(0, 1))});
        for (int c = 0; c < d_local; ++c)
            f.local_descriptors(i, c) = static_cast<float>(rng.normal());
    }
    Eigen::VectorXf g(d_global);
    for (int i = 0; i < d_global; ++i) g[i] = static_cast<float>(rng.normal());
    f.global_descriptor = g / g.norm();
    if (with_points)
        for (int i = 0; i < num_kp; i += 2) {
            Point3dObs obs;
            obs.keypoint_index = static_cast<uint32_t>(i);
            obs.point = Eigen::Vector3f(static_cast<float>(rng.normal()),
                                        static_cast<float>(rng.normal()),
                                        static_cast<float>(rng.uniform(0.5, 4.0)));
            f.points3d.push_back(obs);
        }
    return f;
}

bool frames_bit_equal(const FrameFeatures& a, const FrameFeatures& b) {
    if (a.frame_id != b.frame_id || a.keypoints.size() != b.keypoints.size() ||
        a.points3d.size() != b.points3d.size())
        return false;
    for (size_t i = 0; i < a.keypoints.size(); ++i)
        if (std::memcmp(&a.keypoints[i], &b.keypoints[i], sizeof(Keypoint)) != 0) return false;
    if (a.local_descriptors.rows() != b.local_descriptors.rows() ||
        a.local_descriptors.cols() != b.local_descriptors.cols())
        return false;
    if (a.local_descriptors.size() > 0 &&
        std::memcmp(a.local_descriptors.data(), b.local_descriptors.data(),
                    sizeof(float) * a.local_descriptors.size()) != 0)
        return false;
    if (a.global_descriptor.size() != b.global_descriptor.size()) return false;
    if (std::memcmp(a.global_descriptor.data(), b.global_descriptor.data(),
                    sizeof(float) * a.global_descriptor.size()) != 0)
        return false;
    for (size_t i = 0; i < a.points3d.size(); ++i) {
        if (a.points3d[i].keypoint_index != b.points3d[i].keypoint_index) return false;
        if (std::memcmp(a.points3d[i].point.data(), b.points3d[i].point.data(),
                        sizeof(float) * 3) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("feature file round-trip is bit-exact") {
    TempDir tmp("fio_roundtrip");
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const FrameFeatures f =
            random_frame(rng, 1000 + trial, 3 + trial * 7, 16, 32, trial % 2 == 0);
        const auto path = tmp.path / ("f" + std::to_string(trial) + ".dxf");
        write_frame_features(f, path);
        const FrameFeatures back = read_frame_features(path);
        CHECK(frames_bit_equal(f, back));
        CHECK(!back.renormalized_on_load);
    }
}

TEST_CASE("writing the same frame twice gives identical bytes") {
    TempDir tmp("fio_det");
    Rng rng(5);
    const FrameFeatures f = random_frame(rng, 3, 20, 8, 16, true);
    write_frame_features(f, tmp.path / "a.dxf");
    write_frame_features(f, tmp.path / "b.dxf");
    CHECK(testutil::read_bytes(tmp.path / "a.dxf") == testutil::read_bytes(tmp.path / "b.dxf"));
}

TEST_CASE("bad magic is rejected") {
    TempDir tmp("fio_magic");
    Rng rng(7);
    const auto path = tmp.path / "f.dxf";
    write_frame_features(random_frame(rng, 1, 4, 8, 8, false), path);
    auto bytes = testutil::read_bytes(path);
    bytes[0] = 'X';
    testutil::write_bytes(path, bytes, bytes.size());
    CHECK_THROWS_AS((void)read_frame_features(path), BadMagic);
}

TEST_CASE("version mismatch is rejected") {
    TempDir tmp("fio_version");
    Rng rng(7);
    const auto path = tmp.path / "f.dxf";
    write_frame_features(random_frame(rng, 1, 4, 8, 8, false), path);
    auto bytes = testutil::read_bytes(path);
    bytes[4] = 2;  // version field
    testutil::write_bytes(path, bytes, bytes.size());
    CHECK_THROWS_AS((void)read_frame_features(path), VersionMismatch);
}

TEST_CASE("zero-keypoint frame with a global descriptor is accepted") {
    TempDir tmp("fio_empty");
    FrameFeatures f;
    f.frame_id = 9;
    f.local_descriptors.resize(0, 16);
    f.global_descriptor = testutil::axis_global(8, 0);
    const auto path = tmp.path / "empty.dxf";
    write_frame_features(f, path);
    const FrameFeatures back = read_frame_features(path);
    CHECK(back.frame_id == 9);
    CHECK(back.keypoints.empty());
    CHECK(back.global_descriptor.size() == 8);
}

TEST_CASE("NaN descriptor refuses to write and leaves no file") {
    TempDir tmp("fio_nan");
    Rng rng(7);
    FrameFeatures f = random_frame(rng, 1, 4, 8, 8, false);
    f.local_descriptors(2, 3) = std::nanf("");
    const auto path = tmp.path / "bad.dxf";
    CHECK_THROWS_AS(write_frame_features(f, path), InvariantViolation);
    CHECK(!std::filesystem::exists(path));
}

TEST_CASE("file size matches the closed-form formula") {
    TempDir tmp("fio_size");
    Rng rng(3);

    // 300 keypoints at the default descriptor sizes:
    // 29-byte header + 300*12 keypoints + 300*256*4 locals + 4096*4 global.
    CHECK(frame_file_size(300, 256, 4096, false, 0) == 29u + 3600u + 307200u + 16384u);

    const FrameFeatures small = random_frame(rng, 2, 17, 12, 20, true);
    const auto path = tmp.path / "s.dxf";
    write_frame_features(small, path);
    CHECK(std::filesystem::file_size(path) ==
          frame_file_size(17, 12, 20, true, static_cast<uint32_t>(small.points3d.size())));
}

TEST_CASE("every truncation inside the payload is rejected") {
    TempDir tmp("fio_trunc");
    Rng rng(13);
    const FrameFeatures f = random_frame(rng, 2, 3, 4, 6, true);
    const auto path = tmp.path / "full.dxf";
    write_frame_features(f, path);
    const auto bytes = testutil::read_bytes(path);
    const auto cut = tmp.path / "cut.dxf";
    for (size_t len = 0; len < bytes.size(); ++len) {
        testutil::write_bytes(cut, bytes, len);
        CHECK_THROWS_AS((void)read_frame_features(cut), Error);
    }
}

TEST_CASE("slightly denormalized global is renormalized with a flag") {
    TempDir tmp("fio_renorm");
    Rng rng(17);
    FrameFeatures f = random_frame(rng, 1, 2, 4, 16, false);
    const auto path = tmp.path / "f.dxf";
    write_frame_features(f, path);

    // Scale the stored global slightly: still within the 1e-4 tolerance.
    auto bytes = testutil::read_bytes(path);
    const size_t global_off = frame_file_size(2, 4, 16, false, 0) - 16 * 4;
    for (int i = 0; i < 16; ++i) {
        float v;
        std::memcpy(&v, bytes.data() + global_off + i * 4, 4);
        v *= 1.00005f;
        std::memcpy(bytes.data() + global_off + i * 4, &v, 4);
    }
    testutil::write_bytes(path, bytes, bytes.size());
    const FrameFeatures back = read_frame_features(path);
    CHECK(back.renormalized_on_load);
    CHECK(back.global_descriptor.norm() == doctest::Approx(1.0).epsilon(1e-6));

    // Far off unity: rejected.
    for (int i = 0; i < 16; ++i) {
        float v;
        std::memcpy(&v, bytes.data() + global_off + i * 4, 4);
        v *= 1.5f;
        std::memcpy(bytes.data() + global_off + i * 4, &v, 4);
    }
    testutil::write_bytes(path, bytes, bytes.size());
    CHECK_THROWS_AS((void)read_frame_features(path), InvariantViolation);
}

TEST_CASE("lift_keypoints back-projects through the pinhole model") {
    CameraIntrinsics k{500.0, 400.0, 320.0, 240.0};
    DepthMap depth;
    depth.width = 1024;
    depth.height = 1024;
    depth.data.assign(size_t(1024) * 1024, 2.0f);

    FrameFeatures f;
    f.frame_id = 0;
    f.local_descriptors.resize(3, 2);
    f.local_descriptors.setZero();
    f.keypoints.push_back({320.f, 240.f, 1.f});          // principal point
    f.keypoints.push_back({320.f + 500.f, 240.f, 1.f});  // one focal length right
    f.keypoints.push_back({100.f, 100.f, 1.f});          // lands on a zero-depth pixel
    f.global_descriptor = testutil::axis_global(4, 0);

    depth.data[size_t(100) * 1024 + 100] = 0.0f;
    depth.data[size_t(240) * 1024 + 820] = 1.0f;

    const FrameFeatures lifted = lift_keypoints(f, depth, k);
    REQUIRE(lifted.points3d.size() == 2);
    CHECK(lifted.points3d[0].keypoint_index == 0);
    CHECK(lifted.points3d[0].point.x() == doctest::Approx(0.0));
    CHECK(lifted.points3d[0].point.y() == doctest::Approx(0.0));
    CHECK(lifted.points3d[0].point.z() == doctest::Approx(2.0));
    CHECK(lifted.points3d[1].keypoint_index == 1);
    CHECK(lifted.points3d[1].point.x() == doctest::Approx(1.0));
    CHECK(lifted.points3d[1].point.y() == doctest::Approx(0.0));
    CHECK(lifted.points3d[1].point.z() == doctest::Approx(1.0));
}

TEST_CASE("lift then project with identity pose lands within half a pixel") {
    CameraIntrinsics k{450.0, 450.0, 320.0, 240.0};
    DepthMap depth;
    depth.width = 640;
    depth.height = 480;
    depth.data.assign(size_t(640) * 480, 0.f);
    Rng rng(23);
    for (auto& d : depth.data) d = static_cast<float>(rng.uniform(0.5, 5.0));

    FrameFeatures f;
    f.frame_id = 0;
    const int n = 50;
    f.local_descriptors.resize(n, 2);
    f.local_descriptors.setZero();
    for (int i = 0; i < n; ++i)
        f.keypoints.push_back({static_cast<float>(rng.uniform(0, 639)),
                               static_cast<float>(rng.uniform(0, 479)), 1.f});
    f.global_descriptor = testutil::axis_global(4, 0);

    const FrameFeatures lifted = lift_keypoints(f, depth, k);
    REQUIRE(lifted.points3d.size() == size_t(n));
    for (const Point3dObs& obs : lifted.points3d) {
        const Eigen::Vector2d px = project(obs.point.cast<double>(), Pose{}, k);
        const Keypoint& kp = f.keypoints[obs.keypoint_index];
        CHECK(std::abs(px.x() - kp.x) <= 0.5);
        CHECK(std::abs(px.y() - kp.y) <= 0.5);
    }
}

TEST_CASE("lift_keypoints rejects a depth map that misses keypoints") {
    CameraIntrinsics k{500.0, 500.0, 32.0, 32.0};
    DepthMap depth;
    depth.width = 4;
    depth.height = 4;
    depth.data.assign(16, 1.f);
    FrameFeatures f;
    f.local_descriptors.resize(1, 2);
    f.local_descriptors.setZero();
    f.keypoints.push_back({60.f, 60.f, 1.f});
    f.global_descriptor = testutil::axis_global(4, 0);
    CHECK_THROWS_AS((void)lift_keypoints(f, depth, k), DimensionMismatch);
}

TEST_CASE("depth map and intrinsics files round-trip") {
    TempDir tmp("fio_aux");
    DepthMap depth;
    depth.width = 5;
    depth.height = 3;
    depth.data = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
    write_depth_map(depth, tmp.path / "d.dxdm");
    const DepthMap back = read_depth_map(tmp.path / "d.dxdm");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.data == depth.data);
    CHECK(back.at(1, 2) == 8.f);

    CameraIntrinsics k{517.3, 516.5, 318.6, 255.3};
    write_intrinsics(k, tmp.path / "k.txt");
    const CameraIntrinsics kb = read_intrinsics(tmp.path / "k.txt");
    CHECK(kb.fx == doctest::Approx(k.fx));
    CHECK(kb.fy == doctest::Approx(k.fy));
    CHECK(kb.cx == doctest::Approx(k.cx));
    CHECK(kb.cy == doctest::Approx(k.cy));
}
