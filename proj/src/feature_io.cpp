#include "placerec/feature_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "placerec/binary_io.hpp"
#include "placerec/config.hpp"

namespace placerec {

namespace {

constexpr char kFeatureMagic[4] = {'D', 'X', 'F', 'T'};
constexpr char kDepthMagic[4] = {'D', 'X', 'D', 'M'};
constexpr uint32_t kFeatureVersion = 1;

// Header deviation tolerated before the reader rejects a global descriptor.
constexpr double kGlobalNormTolerance = 1e-4;

bool all_finite(const DescriptorMatrix& m) {
    return m.allFinite();
}

}  // namespace

void validate_frame(const FrameFeatures& frame) {
    const int num_kp = frame.num_keypoints();
    if (frame.local_descriptors.rows() != num_kp)
        throw InvariantViolation("local descriptor rows (" +
                                 std::to_string(frame.local_descriptors.rows()) +
                                 ") != keypoint count (" + std::to_string(num_kp) + ")");
    for (int i = 0; i < num_kp; ++i) {
        const Keypoint& kp = frame.keypoints[i];
        if (!std::isfinite(kp.x) || !std::isfinite(kp.y))
            throw InvariantViolation("keypoint " + std::to_string(i) + " has non-finite coordinates");
        if (!(kp.score >= 0.f && kp.score <= 1.f))
            throw InvariantViolation("keypoint " + std::to_string(i) + " score outside [0,1]");
    }
    if (!all_finite(frame.local_descriptors))
        throw InvariantViolation("local descriptors contain non-finite values");
    if (!frame.global_descriptor.allFinite())
        throw InvariantViolation("global descriptor contains non-finite values");
    if (frame.global_descriptor.size() > 0) {
        const double norm = frame.global_descriptor.cast<double>().norm();
        if (std::abs(norm - 1.0) > 1e-6)
            throw InvariantViolation("global descriptor L2 norm off unity: " + std::to_string(norm));
    }
    for (const Point3dObs& obs : frame.points3d) {
        if (obs.keypoint_index >= static_cast<uint32_t>(num_kp))
            throw InvariantViolation("points3d index out of range");
        if (!obs.point.allFinite())
            throw InvariantViolation("points3d entry non-finite");
        if (!(obs.point.z() > 0.f))
            throw InvariantViolation("points3d depth must be positive");
    }
}

size_t frame_file_size(uint32_t num_keypoints, uint32_t d_local, uint32_t d_global,
                       bool has_points3d, uint32_t num_points3d) {
    size_t size = 4 + 4 + 8 + 4 + 4 + 4 + 1;                 // header
    size += size_t(num_keypoints) * 12;                      // keypoints
    size += size_t(num_keypoints) * d_local * 4;             // local descriptors
    size += size_t(d_global) * 4;                            // global descriptor
    if (has_points3d) size += 4 + size_t(num_points3d) * 16; // count + entries
    return size;
}

void write_frame_features(const FrameFeatures& frame, const std::filesystem::path& path) {
    validate_frame(frame);

    const uint32_t num_kp = static_cast<uint32_t>(frame.num_keypoints());
    const uint32_t d_local = static_cast<uint32_t>(frame.local_dim());
    const uint32_t d_global = static_cast<uint32_t>(frame.global_dim());
    const bool has_p3d = !frame.points3d.empty();

    ByteWriter w;
    w.put_magic(kFeatureMagic);
    w.put_u32(kFeatureVersion);
    w.put_u64(frame.frame_id);
    w.put_u32(num_kp);
    w.put_u32(d_local);
    w.put_u32(d_global);
    w.put_u8(has_p3d ? 1 : 0);
    for (const Keypoint& kp : frame.keypoints) {
        w.put_f32(kp.x);
        w.put_f32(kp.y);
        w.put_f32(kp.score);
    }
    if (num_kp > 0) w.put_f32_array(frame.local_descriptors.data(), size_t(num_kp) * d_local);
    if (d_global > 0) w.put_f32_array(frame.global_descriptor.data(), d_global);
    if (has_p3d) {
        w.put_u32(static_cast<uint32_t>(frame.points3d.size()));
        for (const Point3dObs& obs : frame.points3d) {
            w.put_u32(obs.keypoint_index);
            w.put_f32(obs.point.x());
            w.put_f32(obs.point.y());
            w.put_f32(obs.point.z());
        }
    }
    write_file_bytes(path, w.bytes());
}

FrameFeatures read_frame_features(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (!r.check_magic(kFeatureMagic)) throw BadMagic(path.string() + ": not a feature file");
    const uint32_t version = r.get_u32();
    if (version != kFeatureVersion)
        throw VersionMismatch(path.string() + ": feature file version " + std::to_string(version));

    FrameFeatures frame;
    frame.frame_id = r.get_u64();
    const uint32_t num_kp = r.get_u32();
    const uint32_t d_local = r.get_u32();
    const uint32_t d_global = r.get_u32();
    const uint8_t has_p3d = r.get_u8();
    if (has_p3d > 1) throw CorruptPayload(path.string() + ": bad has_points3d flag");

    // Validate the declared shape against the actual byte count before any
    // bulk read; a truncated or padded file never parses.
    const size_t base = frame_file_size(num_kp, d_local, d_global, false, 0);
    if (has_p3d) {
        if (bytes.size() < base + 4) throw CorruptPayload(path.string() + ": truncated file");
    } else if (bytes.size() != base) {
        throw CorruptPayload(path.string() + ": size mismatch (" + std::to_string(bytes.size()) +
                             " vs expected " + std::to_string(base) + ")");
    }

    frame.keypoints.resize(num_kp);
    for (uint32_t i = 0; i < num_kp; ++i) {
        frame.keypoints[i].x = r.get_f32();
        frame.keypoints[i].y = r.get_f32();
        frame.keypoints[i].score = r.get_f32();
    }
    frame.local_descriptors.resize(num_kp, d_local);
    if (num_kp > 0) r.get_f32_array(frame.local_descriptors.data(), size_t(num_kp) * d_local);
    frame.global_descriptor.resize(d_global);
    if (d_global > 0) r.get_f32_array(frame.global_descriptor.data(), d_global);
    if (has_p3d) {
        const uint32_t num_p3d = r.get_u32();
        if (bytes.size() != frame_file_size(num_kp, d_local, d_global, true, num_p3d))
            throw CorruptPayload(path.string() + ": size mismatch in points3d section");
        frame.points3d.resize(num_p3d);
        for (uint32_t i = 0; i < num_p3d; ++i) {
            frame.points3d[i].keypoint_index = r.get_u32();
            frame.points3d[i].point.x() = r.get_f32();
            frame.points3d[i].point.y() = r.get_f32();
            frame.points3d[i].point.z() = r.get_f32();
        }
    }

    // Tolerate serialization rounding of the global norm; reject real corruption.
    if (d_global > 0) {
        const double norm = frame.global_descriptor.cast<double>().norm();
        if (std::abs(norm - 1.0) > kGlobalNormTolerance)
            throw InvariantViolation(path.string() + ": global descriptor norm " +
                                     std::to_string(norm));
        if (std::abs(norm - 1.0) > 1e-7 && norm > 0.0) {
            frame.global_descriptor /= static_cast<float>(norm);
            frame.renormalized_on_load = true;
        }
    }

    validate_frame(frame);
    return frame;
}

FrameFeatures lift_keypoints(const FrameFeatures& frame, const DepthMap& depth_map,
                             const CameraIntrinsics& intrinsics) {
    FrameFeatures out = frame;
    out.points3d.clear();
    for (int i = 0; i < frame.num_keypoints(); ++i) {
        const Keypoint& kp = frame.keypoints[i];
        const long col = std::lround(kp.x);
        const long row = std::lround(kp.y);
        if (col < 0 || row < 0 || col >= long(depth_map.width) || row >= long(depth_map.height))
            throw DimensionMismatch("keypoint " + std::to_string(i) +
                                    " outside depth map bounds");
        const float z = depth_map.at(uint32_t(row), uint32_t(col));
        if (!std::isfinite(z) || z <= 0.f) continue;
        Point3dObs obs;
        obs.keypoint_index = static_cast<uint32_t>(i);
        obs.point.x() = static_cast<float>(z * (kp.x - intrinsics.cx) / intrinsics.fx);
        obs.point.y() = static_cast<float>(z * (kp.y - intrinsics.cy) / intrinsics.fy);
        obs.point.z() = z;
        out.points3d.push_back(obs);
    }
    return out;
}

void write_depth_map(const DepthMap& depth, const std::filesystem::path& path) {
    if (depth.data.size() != size_t(depth.width) * depth.height)
        throw InvariantViolation("depth map data size mismatch");
    ByteWriter w;
    w.put_magic(kDepthMagic);
    w.put_u32(depth.width);
    w.put_u32(depth.height);
    w.put_u32(0);  // reserved, pads the header to 16 bytes
    if (!depth.data.empty()) w.put_f32_array(depth.data.data(), depth.data.size());
    write_file_bytes(path, w.bytes());
}

DepthMap read_depth_map(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (!r.check_magic(kDepthMagic)) throw BadMagic(path.string() + ": not a depth map file");
    DepthMap depth;
    depth.width = r.get_u32();
    depth.height = r.get_u32();
    r.get_u32();  // reserved
    const size_t count = size_t(depth.width) * depth.height;
    if (bytes.size() != 16 + count * 4)
        throw CorruptPayload(path.string() + ": depth map size mismatch");
    depth.data.resize(count);
    if (count > 0) r.get_f32_array(depth.data.data(), count);
    return depth;
}

void write_intrinsics(const CameraIntrinsics& intrinsics, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    char buf[256];
    std::snprintf(buf, sizeof(buf), "fx = %.17g\nfy = %.17g\ncx = %.17g\ncy = %.17g\n",
                  intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy);
    out << buf;
    if (!out) throw IoFailure("write failed on " + path.string());
}

CameraIntrinsics read_intrinsics(const std::filesystem::path& path) {
    const Config cfg = Config::from_file(path);
    CameraIntrinsics k;
    k.fx = cfg.get_double("fx", 0.0);
    k.fy = cfg.get_double("fy", 0.0);
    k.cx = cfg.get_double("cx", 0.0);
    k.cy = cfg.get_double("cy", 0.0);
    if (!(k.fx > 0.0) || !(k.fy > 0.0))
        throw InvariantViolation(path.string() + ": focal lengths must be positive");
    return k;
}

}  // namespace placerec
