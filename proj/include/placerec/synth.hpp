#ifndef PLACEREC_SYNTH_HPP
#define PLACEREC_SYNTH_HPP

#include <filesystem>
#include <map>
#include <utility>
#include <vector>

#include "placerec/config.hpp"
#include "placerec/geometry.hpp"

namespace placerec {

// Synthetic dataset recipe. Each frame observes a sliding window of
// `descriptors_per_frame` planted clusters, exactly one descriptor per
// cluster, so clusters act as the true visual words. Optional planted
// revisits (true loops) and perceptual aliases (matching word statistics,
// orthogonal global descriptors).
struct SynthConfig {
    int num_frames = 200;
    int descriptors_per_frame = 50;  // also the size of the active cluster window
    int num_clusters = 250;          // cluster pool; must cover the whole trajectory
    double cluster_separation = 20.0;  // in units of the within-cluster sigma (1.0)
    int descriptor_dim = 32;
    int global_dim = 64;

    int clusters_per_advance = 2;  // clusters swapped out per window advance
    int frames_per_advance = 2;    // frames between window advances

    double revisit_noise = 0.05;   // descriptor noise, fraction of cluster_separation
    double global_noise = 0.02;    // global-descriptor perturbation on revisits
    double revisit_offset = 0.2;   // meters of camera offset on revisits
    double revisit_rot_deg = 2.0;  // degrees of camera rotation on revisits
    double pixel_noise = 0.0;      // observation noise on revisit keypoints, pixels

    std::vector<std::pair<uint64_t, uint64_t>> revisit_pairs;  // (source i, revisit j), i < j
    std::vector<std::pair<uint64_t, uint64_t>> alias_pairs;    // (source i, alias j), i < j

    uint64_t seed = 0;
    CameraIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
};

SynthConfig synth_config_from(const Config& cfg);

// Writes one .dxf per frame plus poses.txt, loops.txt, aliases.txt and
// intrinsics.txt. Byte-identical for identical configs.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

// Ground-truth helpers shared with the evaluators.
void write_pose_file(const std::vector<std::pair<uint64_t, Pose>>& poses,
                     const std::filesystem::path& path);
std::map<uint64_t, Pose> read_pose_file(const std::filesystem::path& path);
void write_pair_list(const std::vector<std::pair<uint64_t, uint64_t>>& pairs,
                     const std::filesystem::path& path);
std::vector<std::pair<uint64_t, uint64_t>> read_pair_list(const std::filesystem::path& path);

// The .dxf files of a directory, sorted by file name, as (path, frame).
std::vector<std::filesystem::path> list_feature_files(const std::filesystem::path& dir);

}  // namespace placerec

#endif
