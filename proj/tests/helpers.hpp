#ifndef PLACEREC_TEST_HELPERS_HPP
#define PLACEREC_TEST_HELPERS_HPP

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "placerec/feature_io.hpp"
#include "placerec/geometry.hpp"
#include "placerec/rng.hpp"
#include "placerec/vocabulary.hpp"

namespace testutil {

// Self-cleaning scratch directory for IO tests.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("placerec_test_" + tag + "_" + std::to_string(counter.fetch_add(1)));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

// Unit global descriptor along the given axis.
inline Eigen::VectorXf axis_global(int dim, int axis) {
    Eigen::VectorXf g = Eigen::VectorXf::Zero(dim);
    g[axis % dim] = 1.f;
    return g;
}

// Frame with the given descriptor rows; keypoint i sits at (i, 0) with the
// given score.
inline placerec::FrameFeatures make_frame(uint64_t id, const placerec::DescriptorMatrix& desc,
                                          int global_dim = 8, float score = 1.f) {
    placerec::FrameFeatures f;
    f.frame_id = id;
    f.local_descriptors = desc;
    for (int i = 0; i < desc.rows(); ++i)
        f.keypoints.push_back({static_cast<float>(i), 0.f, score});
    f.global_descriptor = axis_global(global_dim, static_cast<int>(id));
    return f;
}

// n well-separated descriptors: row i has value `spacing * (i + 1)` in
// coordinate i % dim. Pairwise L2 distance at least `spacing`.
inline placerec::DescriptorMatrix separated_descriptors(int n, int dim, float spacing = 100.f) {
    placerec::DescriptorMatrix m = placerec::DescriptorMatrix::Zero(n, dim);
    for (int i = 0; i < n; ++i) m(i, i % dim) = spacing * static_cast<float>(i + 1);
    return m;
}

// Words at the given centroids with uniform idf 1, ids in input order.
inline std::vector<placerec::VisualWord> make_words(const placerec::DescriptorMatrix& centroids,
                                                    float idf = 1.f) {
    std::vector<placerec::VisualWord> words(centroids.rows());
    for (int i = 0; i < centroids.rows(); ++i) {
        words[i].word_id = static_cast<uint32_t>(i);
        words[i].centroid = centroids.row(i).transpose();
        words[i].idf = idf;
        words[i].member_count = 1;
    }
    return words;
}

// Random sparse L1-normalized visual vector with 1..max_entries entries.
inline placerec::VisualVector random_l1_vector(placerec::Rng& rng, uint32_t num_words,
                                               int max_entries) {
    placerec::VisualVector v;
    const int n = 1 + static_cast<int>(rng.index(static_cast<uint64_t>(max_entries)));
    std::vector<uint32_t> words;
    for (int i = 0; i < n; ++i) words.push_back(static_cast<uint32_t>(rng.index(num_words)));
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    double total = 0.0;
    std::vector<double> raw(words.size());
    for (size_t i = 0; i < words.size(); ++i) {
        raw[i] = rng.uniform(0.05, 1.0);
        total += raw[i];
    }
    for (size_t i = 0; i < words.size(); ++i) v.entries.emplace_back(words[i], raw[i] / total);
    return v;
}

// Random rotation via a random axis-angle.
inline Eigen::Matrix3d random_rotation(placerec::Rng& rng, double max_angle = 3.0) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-9) axis = Eigen::Vector3d::UnitZ();
    axis.normalize();
    return placerec::rotation_exp(axis * rng.uniform(-max_angle, max_angle));
}

// Random camera pose with a bounded translation.
inline placerec::Pose random_pose(placerec::Rng& rng) {
    placerec::Pose pose;
    pose.rotation = random_rotation(rng);
    pose.translation =
        Eigen::Vector3d(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    return pose;
}

// World point that projects in front of the camera under `pose`, at a
// camera-frame depth in [1, 6] and a moderate field angle.
inline Eigen::Vector3d point_in_frustum(placerec::Rng& rng, const placerec::Pose& pose) {
    const Eigen::Vector3d cam(rng.uniform(-0.4, 0.4) * rng.uniform(1.0, 6.0),
                              rng.uniform(-0.3, 0.3) * rng.uniform(1.0, 6.0),
                              rng.uniform(1.0, 6.0));
    return pose.inverse().transform(cam);
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::vector<char> bytes(std::filesystem::file_size(path));
    FILE* f = std::fopen(path.string().c_str(), "rb");
    if (f) {
        const size_t got = std::fread(bytes.data(), 1, bytes.size(), f);
        bytes.resize(got);
        std::fclose(f);
    }
    return bytes;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes,
                        size_t count) {
    FILE* f = std::fopen(path.string().c_str(), "wb");
    if (f) {
        std::fwrite(bytes.data(), 1, count, f);
        std::fclose(f);
    }
}

}  // namespace testutil

#endif
