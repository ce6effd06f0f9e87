#ifndef PLACEREC_FEATURE_IO_HPP
#define PLACEREC_FEATURE_IO_HPP

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "placerec/errors.hpp"

namespace placerec {

using DescriptorMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One detected keypoint: pixel position plus detection confidence.
struct Keypoint {
    float x = 0.f;      // image column, pixels
    float y = 0.f;      // image row, pixels
    float score = 0.f;  // detection confidence in [0, 1]
};

// 3D observation attached to a keypoint, in the camera frame (meters, z > 0).
struct Point3dObs {
    uint32_t keypoint_index = 0;
    Eigen::Vector3f point = Eigen::Vector3f::Zero();
};

// All features of one image frame, as produced by an external extractor.
// local_descriptors has one row per keypoint; global_descriptor is L2-normalized.
struct FrameFeatures {
    uint64_t frame_id = 0;
    std::vector<Keypoint> keypoints;
    DescriptorMatrix local_descriptors;   // num_keypoints x D_local
    Eigen::VectorXf global_descriptor;    // D_global
    std::vector<Point3dObs> points3d;     // optional depth-lifted points

    // Set by the reader when the stored global descriptor needed renormalization.
    // Not serialized.
    bool renormalized_on_load = false;

    int num_keypoints() const { return static_cast<int>(keypoints.size()); }
    int local_dim() const { return static_cast<int>(local_descriptors.cols()); }
    int global_dim() const { return static_cast<int>(global_descriptor.size()); }
};

struct CameraIntrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
};

// Single-channel float depth raster, row-major, meters.
struct DepthMap {
    uint32_t width = 0;
    uint32_t height = 0;
    std::vector<float> data;  // height * width

    float at(uint32_t row, uint32_t col) const { return data[size_t(row) * width + col]; }
};

// Throws InvariantViolation if the frame breaks any of its invariants
// (descriptor row count, score range, finiteness, global norm, points3d).
void validate_frame(const FrameFeatures& frame);

// Binary .dxf feature file, little-endian. Writing is deterministic: the same
// frame always produces the same bytes.
void write_frame_features(const FrameFeatures& frame, const std::filesystem::path& path);
FrameFeatures read_frame_features(const std::filesystem::path& path);

// Closed-form size in bytes of the .dxf encoding of a frame with the given
// shape. Matches write_frame_features exactly.
size_t frame_file_size(uint32_t num_keypoints, uint32_t d_local, uint32_t d_global,
                       bool has_points3d, uint32_t num_points3d);

// Back-projects keypoints through the pinhole model using the depth at each
// keypoint's nearest pixel. Keypoints over non-finite or non-positive depth
// are left out. Returns a copy of the frame with points3d replaced.
FrameFeatures lift_keypoints(const FrameFeatures& frame, const DepthMap& depth_map,
                             const CameraIntrinsics& intrinsics);

// .dxdm depth raster file.
void write_depth_map(const DepthMap& depth, const std::filesystem::path& path);
DepthMap read_depth_map(const std::filesystem::path& path);

// Plain-text intrinsics (fx= fy= cx= cy=).
void write_intrinsics(const CameraIntrinsics& intrinsics, const std::filesystem::path& path);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

}  // namespace placerec

#endif
