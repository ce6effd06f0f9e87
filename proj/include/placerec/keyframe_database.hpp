#ifndef PLACEREC_KEYFRAME_DATABASE_HPP
#define PLACEREC_KEYFRAME_DATABASE_HPP

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "placerec/geometry.hpp"
#include "placerec/vocabulary.hpp"

namespace placerec {

// 1 - <g1, g2> on L2-normalized global descriptors; range [0, 2].
double global_distance(const Eigen::VectorXf& g1, const Eigen::VectorXf& g2);

struct Keyframe {
    uint64_t keyframe_id = 0;
    FrameFeatures frame;
    VisualVector visual_vector;
    Pose pose;
    std::map<uint32_t, std::vector<int>> word_to_keypoints;
};

struct LcdConfig {
    int k_candidates = 10;
    double global_dist_threshold = 0.3;
    int min_temporal_gap = 30;
};

struct LoopClosure {
    uint64_t query_id = 0;
    uint64_t matched_keyframe_id = 0;
    double bow_score = 0.0;
    double global_distance = 0.0;
};

// Inclusive keyframe-id interval; the default is empty.
struct IdRange {
    uint64_t lo = 1;
    uint64_t hi = 0;

    bool contains(uint64_t id) const { return lo <= id && id <= hi; }
    static IdRange around(uint64_t center, uint64_t radius) {
        return {center >= radius ? center - radius : 0, center + radius};
    }
};

// Keyframe store with an inverted index over visual words. One writer,
// any number of concurrent readers; readers see consistent snapshots.
class KeyframeDatabase {
public:
    explicit KeyframeDatabase(std::shared_ptr<const Vocabulary> vocab);

    // Movable for factory-style construction; the mutex is not transferred,
    // so moving is only safe while no other thread holds the source.
    KeyframeDatabase(KeyframeDatabase&& other) noexcept
        : vocab_(std::move(other.vocab_)),
          keyframes_(std::move(other.keyframes_)),
          index_(std::move(other.index_)) {}

    // Quantizes the frame, stores it, and appends inverted-index postings.
    // Ids are assigned densely in insertion order.
    uint64_t add_keyframe(FrameFeatures frame, const Pose& pose);

    // Insertion with a precomputed visual vector (persistence path).
    uint64_t add_keyframe_with_vector(FrameFeatures frame, const Pose& pose, VisualVector v);

    size_t size() const;
    const Keyframe& keyframe(uint64_t id) const;
    const Vocabulary& vocabulary() const { return *vocab_; }
    std::shared_ptr<const Vocabulary> vocabulary_ptr() const { return vocab_; }

    // Top-K most similar stored keyframes, scored through the inverted
    // index. Ranked by score descending, ties by lower id. Keyframes whose
    // id falls in `exclude` are skipped.
    std::vector<std::pair<uint64_t, double>> query_topk(const VisualVector& v, int k,
                                                        IdRange exclude = {}) const;

    // Two-phase loop detection: BoW top-K shortlist (temporal-gap window
    // excluded), then the candidate with the smallest global-descriptor
    // distance, accepted when at or below the threshold. The default window
    // is +/- min_temporal_gap around the query id; exclude_override replaces
    // it (sequential evaluation hides everything newer than the query).
    std::optional<LoopClosure> detect_loop(
        const Keyframe& query, const LcdConfig& cfg,
        std::optional<IdRange> exclude_override = std::nullopt) const;

    // Quantizes a frame into a query keyframe without storing it.
    Keyframe make_query_keyframe(FrameFeatures frame, uint64_t assumed_id) const;

    // Postings of one word as (keyframe_id, weight), insertion order.
    std::vector<std::pair<uint64_t, float>> postings(uint32_t word_id) const;

    // Recomputes the whole inverted index from stored visual vectors
    // (consistency checks in tests).
    std::map<uint32_t, std::vector<std::pair<uint64_t, float>>> rebuild_inverted_index() const;

private:
    uint64_t insert_locked(FrameFeatures frame, const Pose& pose, VisualVector v);

    std::shared_ptr<const Vocabulary> vocab_;
    std::deque<Keyframe> keyframes_;  // id == index; deque keeps references stable
    std::vector<std::vector<std::pair<uint64_t, float>>> index_;  // word -> postings
    mutable std::shared_mutex mutex_;
};

// Directory persistence: an index file `db.dxi` plus one `.dxf` frame file
// per keyframe, named by zero-padded keyframe id.
void save_database(const KeyframeDatabase& db, const std::filesystem::path& dir);
KeyframeDatabase load_database(const std::filesystem::path& dir,
                               std::shared_ptr<const Vocabulary> vocab);

}  // namespace placerec

#endif
