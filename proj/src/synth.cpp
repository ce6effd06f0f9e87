#include "placerec/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "placerec/feature_io.hpp"
#include "placerec/rng.hpp"

namespace placerec {

SynthConfig synth_config_from(const Config& cfg) {
    SynthConfig s;
    s.num_frames = static_cast<int>(cfg.get_int("num_frames", s.num_frames));
    s.descriptors_per_frame =
        static_cast<int>(cfg.get_int("descriptors_per_frame", s.descriptors_per_frame));
    s.num_clusters = static_cast<int>(cfg.get_int("num_clusters", s.num_clusters));
    s.cluster_separation = cfg.get_double("cluster_separation", s.cluster_separation);
    s.descriptor_dim = static_cast<int>(cfg.get_int("descriptor_dim", s.descriptor_dim));
    s.global_dim = static_cast<int>(cfg.get_int("global_dim", s.global_dim));
    s.clusters_per_advance =
        static_cast<int>(cfg.get_int("clusters_per_advance", s.clusters_per_advance));
    s.frames_per_advance =
        static_cast<int>(cfg.get_int("frames_per_advance", s.frames_per_advance));
    s.revisit_noise = cfg.get_double("revisit_noise", s.revisit_noise);
    s.global_noise = cfg.get_double("global_noise", s.global_noise);
    s.revisit_offset = cfg.get_double("revisit_offset", s.revisit_offset);
    s.revisit_rot_deg = cfg.get_double("revisit_rot_deg", s.revisit_rot_deg);
    s.pixel_noise = cfg.get_double("pixel_noise", s.pixel_noise);
    s.revisit_pairs = cfg.get_pairs("revisit_pairs", s.revisit_pairs);
    s.alias_pairs = cfg.get_pairs("alias_pairs", s.alias_pairs);
    s.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(s.seed)));
    s.intrinsics.fx = cfg.get_double("fx", s.intrinsics.fx);
    s.intrinsics.fy = cfg.get_double("fy", s.intrinsics.fy);
    s.intrinsics.cx = cfg.get_double("cx", s.intrinsics.cx);
    s.intrinsics.cy = cfg.get_double("cy", s.intrinsics.cy);
    return s;
}

namespace {

void validate_config(const SynthConfig& cfg) {
    if (cfg.num_frames < 1 || cfg.descriptors_per_frame < 1 || cfg.num_clusters < 1)
        throw InvariantViolation("synth sizes must be positive");
    if (!(cfg.cluster_separation > 0.0))
        throw InvariantViolation("cluster_separation must be positive");
    if (cfg.descriptor_dim < 2 || cfg.global_dim < 2)
        throw InvariantViolation("synth descriptor dims must be at least 2");
    if (cfg.clusters_per_advance < 1 || cfg.frames_per_advance < 1)
        throw InvariantViolation("active window parameters must be positive");
    const int last_start =
        ((cfg.num_frames - 1) / cfg.frames_per_advance) * cfg.clusters_per_advance;
    if (last_start + cfg.descriptors_per_frame > cfg.num_clusters)
        throw InvariantViolation(
            "num_clusters too small for the trajectory: need at least " +
            std::to_string(last_start + cfg.descriptors_per_frame));
    auto check_pairs = [&](const std::vector<std::pair<uint64_t, uint64_t>>& pairs,
                           const char* what) {
        for (const auto& [i, j] : pairs) {
            if (i >= j || j >= static_cast<uint64_t>(cfg.num_frames))
                throw InvariantViolation(std::string(what) + " pair out of range");
        }
    };
    check_pairs(cfg.revisit_pairs, "revisit");
    check_pairs(cfg.alias_pairs, "alias");
    for (const auto& [ri, rj] : cfg.revisit_pairs)
        for (const auto& [ai, aj] : cfg.alias_pairs)
            if (rj == aj) throw InvariantViolation("frame planted as both revisit and alias");
}

// Camera path: gentle forward arc with slow yaw. World-to-camera pose.
Pose trajectory_pose(int t) {
    const double s = 0.25 * t;
    const Eigen::Vector3d center(s, 1.5 * std::sin(0.02 * t), 0.4 * std::cos(0.015 * t));
    const double yaw = 0.01 * t;
    Eigen::Matrix3d cam_to_world;
    // Camera z looks along world +x rotated by yaw; y stays roughly down.
    cam_to_world.col(2) = Eigen::Vector3d(std::cos(yaw), std::sin(yaw), 0.0);
    cam_to_world.col(0) = Eigen::Vector3d(-std::sin(yaw), std::cos(yaw), 0.0);
    cam_to_world.col(1) = cam_to_world.col(2).cross(cam_to_world.col(0));
    Pose pose;
    pose.rotation = cam_to_world.transpose();
    pose.translation = -pose.rotation * center;
    return pose;
}

struct FrameDraft {
    FrameFeatures features;
    Pose pose;
    std::vector<Eigen::Vector3d> world_points;  // one per keypoint
    std::vector<int> cluster_of;                // descriptor row -> cluster
};

Eigen::VectorXf random_unit(Rng& rng, int dim) {
    Eigen::VectorXf v(dim);
    for (int i = 0; i < dim; ++i) v[i] = static_cast<float>(rng.normal());
    const float n = v.norm();
    return n > 0.f ? Eigen::VectorXf(v / n) : random_unit(rng, dim);
}

}  // namespace

void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    validate_config(cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoFailure("cannot create " + out_dir.string() + ": " + ec.message());

    Rng rng(cfg.seed);
    const int d = cfg.descriptor_dim;

    // Cluster centers at pairwise distance >= cluster_separation (the
    // within-cluster sigma is 1), by rejection.
    std::vector<Eigen::VectorXd> centers;
    const double center_sigma = cfg.cluster_separation * 1.5;
    while (static_cast<int>(centers.size()) < cfg.num_clusters) {
        Eigen::VectorXd c(d);
        for (int i = 0; i < d; ++i) c[i] = center_sigma * rng.normal();
        bool ok = true;
        for (const Eigen::VectorXd& other : centers)
            if ((c - other).norm() < cfg.cluster_separation) ok = false;
        if (ok) centers.push_back(std::move(c));
    }

    // Per-cluster global-descriptor direction; a frame's global descriptor
    // aggregates the directions of the clusters it actually saw.
    std::vector<Eigen::VectorXf> cluster_globals;
    for (int c = 0; c < cfg.num_clusters; ++c)
        cluster_globals.push_back(random_unit(rng, cfg.global_dim));

    std::map<uint64_t, uint64_t> revisit_source, alias_source;
    for (const auto& [i, j] : cfg.revisit_pairs) revisit_source[j] = i;
    for (const auto& [i, j] : cfg.alias_pairs) alias_source[j] = i;

    std::vector<FrameDraft> drafts(cfg.num_frames);
    std::vector<std::pair<uint64_t, Pose>> poses;

    for (int t = 0; t < cfg.num_frames; ++t) {
        FrameDraft& draft = drafts[t];
        FrameFeatures& f = draft.features;
        f.frame_id = static_cast<uint64_t>(t);
        f.local_descriptors.resize(cfg.descriptors_per_frame, d);
        draft.world_points.resize(cfg.descriptors_per_frame);
        draft.cluster_of.resize(cfg.descriptors_per_frame);

        const auto revisit_it = revisit_source.find(t);
        const auto alias_it = alias_source.find(t);

        if (revisit_it != revisit_source.end()) {
            // Re-observation of a previous frame: same underlying geometry
            // and appearance, small viewpoint and descriptor perturbations.
            const FrameDraft& src = drafts[revisit_it->second];
            const double angle = cfg.revisit_rot_deg * M_PI / 180.0;
            Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
            if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
            axis.normalize();
            Eigen::Vector3d shift(rng.normal(), rng.normal(), rng.normal());
            if (shift.norm() < 1e-12) shift = Eigen::Vector3d::UnitX();
            shift = cfg.revisit_offset * shift.normalized();

            const Pose& sp = src.pose;
            const Eigen::Vector3d src_center = -(sp.rotation.transpose() * sp.translation);
            draft.pose.rotation = rotation_exp(angle * axis) * sp.rotation;
            draft.pose.translation = -(draft.pose.rotation * (src_center + shift));

            const double sigma = cfg.revisit_noise * cfg.cluster_separation;
            for (int i = 0; i < cfg.descriptors_per_frame; ++i) {
                for (int c = 0; c < d; ++c)
                    f.local_descriptors(i, c) =
                        src.features.local_descriptors(i, c) +
                        static_cast<float>(sigma * rng.normal());
                draft.cluster_of[i] = src.cluster_of[i];
                draft.world_points[i] = src.world_points[i];
                const Eigen::Vector2d px =
                    project(src.world_points[i], draft.pose, cfg.intrinsics);
                Keypoint kp;
                kp.x = static_cast<float>(px.x() + cfg.pixel_noise * rng.normal());
                kp.y = static_cast<float>(px.y() + cfg.pixel_noise * rng.normal());
                kp.score = static_cast<float>(rng.uniform(0.3, 1.0));
                f.keypoints.push_back(kp);
            }

            Eigen::VectorXf g = src.features.global_descriptor;
            for (int i = 0; i < cfg.global_dim; ++i)
                g[i] += static_cast<float>(cfg.global_noise * rng.normal());
            f.global_descriptor = g / g.norm();
        } else {
            draft.pose = trajectory_pose(t);

            if (alias_it != alias_source.end()) {
                // A different place that looks the same: copy the source
                // frame's descriptors (hence its word histogram), but give
                // it an exactly orthogonal global descriptor.
                const FrameDraft& src = drafts[alias_it->second];
                const double sigma = cfg.revisit_noise * cfg.cluster_separation;
                for (int i = 0; i < cfg.descriptors_per_frame; ++i) {
                    for (int c = 0; c < d; ++c)
                        f.local_descriptors(i, c) =
                            src.features.local_descriptors(i, c) +
                            static_cast<float>(sigma * rng.normal());
                    draft.cluster_of[i] = src.cluster_of[i];
                }
                Eigen::VectorXf g = random_unit(rng, cfg.global_dim);
                const Eigen::VectorXf& base = src.features.global_descriptor;
                g -= g.dot(base) * base;
                f.global_descriptor = g / g.norm();
            } else {
                // Fresh view: one observation of each cluster in the active
                // window, so the second-nearest neighbor in any adjacent
                // frame comes from a different cluster and the ratio test
                // keeps the match.
                const int start =
                    (t / cfg.frames_per_advance) * cfg.clusters_per_advance;
                Eigen::VectorXf g = Eigen::VectorXf::Zero(cfg.global_dim);
                for (int i = 0; i < cfg.descriptors_per_frame; ++i) {
                    const int cluster = start + i;
                    draft.cluster_of[i] = cluster;
                    for (int c = 0; c < d; ++c)
                        f.local_descriptors(i, c) =
                            static_cast<float>(centers[cluster][c] + rng.normal());
                    g += cluster_globals[cluster];
                }
                for (int i = 0; i < cfg.global_dim; ++i)
                    g[i] += static_cast<float>(cfg.global_noise * rng.normal());
                f.global_descriptor = g / g.norm();
            }

            // Scene points in front of the camera, observed exactly.
            const Pose cam_to_world = draft.pose.inverse();
            for (int i = 0; i < cfg.descriptors_per_frame; ++i) {
                const double depth = rng.uniform(1.0, 5.0);
                const Eigen::Vector3d ray(rng.uniform(-0.35, 0.35), rng.uniform(-0.25, 0.25),
                                          1.0);
                const Eigen::Vector3d cam_point = ray * depth;
                draft.world_points[i] = cam_to_world.transform(cam_point);
                const Eigen::Vector2d px = project(draft.world_points[i], draft.pose,
                                                   cfg.intrinsics);
                Keypoint kp;
                kp.x = static_cast<float>(px.x());
                kp.y = static_cast<float>(px.y());
                kp.score = static_cast<float>(rng.uniform(0.3, 1.0));
                f.keypoints.push_back(kp);
            }
        }

        // Every keypoint carries its camera-frame 3D point.
        for (int i = 0; i < cfg.descriptors_per_frame; ++i) {
            Point3dObs obs;
            obs.keypoint_index = static_cast<uint32_t>(i);
            obs.point = draft.pose.transform(draft.world_points[i]).cast<float>();
            f.points3d.push_back(obs);
        }

        poses.emplace_back(f.frame_id, draft.pose);
    }

    char name[32];
    for (int t = 0; t < cfg.num_frames; ++t) {
        std::snprintf(name, sizeof(name), "%08d.dxf", t);
        write_frame_features(drafts[t].features, out_dir / name);
    }
    write_pose_file(poses, out_dir / "poses.txt");
    write_pair_list(cfg.revisit_pairs, out_dir / "loops.txt");
    write_pair_list(cfg.alias_pairs, out_dir / "aliases.txt");
    write_intrinsics(cfg.intrinsics, out_dir / "intrinsics.txt");
}

// ---------------------------------------------------------------------------
// Ground-truth files
// ---------------------------------------------------------------------------

void write_pose_file(const std::vector<std::pair<uint64_t, Pose>>& poses,
                     const std::filesystem::path& path) {
    std::string out = "# frame_id r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2\n";
    char buf[64];
    for (const auto& [id, pose] : poses) {
        out += std::to_string(id);
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) {
                std::snprintf(buf, sizeof(buf), " %.17g", pose.rotation(row, col));
                out += buf;
            }
            std::snprintf(buf, sizeof(buf), " %.17g", pose.translation(row));
            out += buf;
        }
        out += '\n';
    }
    std::ofstream file(path, std::ios::binary);
    if (!file || !(file << out)) throw IoFailure("cannot write " + path.string());
}

std::map<uint64_t, Pose> read_pose_file(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) throw IoFailure("cannot open " + path.string());
    std::map<uint64_t, Pose> poses;
    std::string line;
    while (std::getline(file, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        uint64_t id;
        Pose pose;
        if (!(ss >> id)) throw CorruptPayload(path.string() + ": bad pose line");
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col)
                if (!(ss >> pose.rotation(row, col)))
                    throw CorruptPayload(path.string() + ": bad pose line");
            if (!(ss >> pose.translation(row)))
                throw CorruptPayload(path.string() + ": bad pose line");
        }
        poses[id] = pose;
    }
    return poses;
}

void write_pair_list(const std::vector<std::pair<uint64_t, uint64_t>>& pairs,
                     const std::filesystem::path& path) {
    std::string out;
    for (const auto& [i, j] : pairs)
        out += std::to_string(i) + " " + std::to_string(j) + "\n";
    std::ofstream file(path, std::ios::binary);
    if (!file || !(file << out)) throw IoFailure("cannot write " + path.string());
}

std::vector<std::pair<uint64_t, uint64_t>> read_pair_list(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) throw IoFailure("cannot open " + path.string());
    std::vector<std::pair<uint64_t, uint64_t>> pairs;
    std::string line;
    while (std::getline(file, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        uint64_t i, j;
        if (!(ss >> i >> j)) throw CorruptPayload(path.string() + ": bad pair line");
        pairs.emplace_back(i, j);
    }
    return pairs;
}

std::vector<std::filesystem::path> list_feature_files(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoFailure(dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".dxf")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace placerec
