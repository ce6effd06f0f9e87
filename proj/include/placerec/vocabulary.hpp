#ifndef PLACEREC_VOCABULARY_HPP
#define PLACEREC_VOCABULARY_HPP

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "placerec/feature_io.hpp"

namespace placerec {

constexpr uint32_t kInvalidIndex = 0xFFFFFFFFu;

// Brute-force matcher parameters. The 300-pair cap keeps only the most
// reliably detected correspondences per adjacent image pair.
struct MatchParams {
    int max_pairs_kept = 300;
    bool mutual_check = true;
    double ratio_threshold = 0.8;
};

struct DescriptorMatch {
    int index_in_a = 0;
    int index_in_b = 0;
    float distance = 0.f;  // L2 descriptor distance
};

// A leaf prototype produced by incremental training, before tree assembly.
struct VisualWord {
    uint32_t word_id = 0;
    Eigen::VectorXf centroid;
    float idf = 0.f;
    uint32_t member_count = 0;
};

struct TreeParams {
    uint32_t k = 10;           // branching factor
    uint32_t max_levels = 6;   // depth cap for internal splitting
};

// Node of the flattened vocabulary tree, stored in breadth-first order so
// that children of any node are contiguous.
struct VocabNode {
    uint32_t parent = kInvalidIndex;
    uint32_t first_child = 0;
    uint32_t num_children = 0;
    bool is_leaf = false;
    float idf = 0.f;               // leaves only
    uint32_t word_id = kInvalidIndex;  // leaves only; dense in [0, N), BFS order
};

// Immutable vocabulary tree. Centroids live in one contiguous row-major
// float matrix so the per-node distance loop is a flat array reduction.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(uint32_t branching, DescriptorMatrix centroids, std::vector<VocabNode> nodes);

    uint32_t branching() const { return branching_; }
    uint32_t descriptor_dim() const { return static_cast<uint32_t>(centroids_.cols()); }
    uint32_t num_nodes() const { return static_cast<uint32_t>(nodes_.size()); }
    uint32_t num_words() const { return static_cast<uint32_t>(leaf_nodes_.size()); }
    bool empty() const { return leaf_nodes_.empty(); }

    const VocabNode& node(uint32_t index) const { return nodes_[index]; }
    Eigen::Ref<const Eigen::RowVectorXf> node_centroid(uint32_t index) const {
        return centroids_.row(index);
    }
    uint32_t leaf_node_index(uint32_t word_id) const { return leaf_nodes_[word_id]; }
    float word_idf(uint32_t word_id) const { return nodes_[leaf_nodes_[word_id]].idf; }

    // Greedy descent: at each node pick the child whose centroid is nearest
    // in L2 (ties to the lowest child index). Returns the leaf's word id.
    uint32_t quantize(const Eigen::Ref<const Eigen::RowVectorXf>& descriptor) const;

    // Same descent, also records the visited node indices (root..leaf).
    uint32_t quantize_trace(const Eigen::Ref<const Eigen::RowVectorXf>& descriptor,
                            std::vector<uint32_t>* visited) const;

    // Training provenance, kept in memory only.
    uint64_t training_seed = 0;
    uint64_t training_params_hash = 0;

private:
    void index_leaves();

    uint32_t branching_ = 0;
    DescriptorMatrix centroids_;        // num_nodes x D
    std::vector<VocabNode> nodes_;      // BFS order, root at 0
    std::vector<uint32_t> leaf_nodes_;  // word_id -> node index
};

// Sparse L1-normalized word-weight vector of one image. Entries are sorted
// by word id and strictly positive.
struct VisualVector {
    std::vector<std::pair<uint32_t, double>> entries;

    bool empty() const { return entries.empty(); }
    double l1_norm() const {
        double s = 0.0;
        for (const auto& [w, v] : entries) s += std::abs(v);
        return s;
    }
};

enum class Weighting {
    kTfIdf,
    kRawHistogram,  // plain term frequency, no idf
};

// Exhaustive L2 matching between two frames: optional mutual-nearest filter,
// Lowe ratio test, then the per-pair keypoint-score ranking that keeps at
// most max_pairs_kept pairs. Output is sorted best-first, ties broken by
// (index_in_a, index_in_b).
std::vector<DescriptorMatch> match_adjacent(const FrameFeatures& a, const FrameFeatures& b,
                                            const MatchParams& params);

// Per-word membership record of a training run, for inspection and testing.
struct TrainingLog {
    // members[w] lists (frame index, keypoint index) of every descriptor that
    // joined training word w, in join order.
    std::vector<std::vector<std::pair<uint32_t, uint32_t>>> members;
    // word_of[f][kp]: training word id assigned to that descriptor.
    std::vector<std::vector<uint32_t>> word_of;
    // training word id -> final word id in the built vocabulary.
    std::vector<uint32_t> final_word_id;
};

// Incremental vocabulary training over an ordered frame sequence. Matched
// descriptors between adjacent frames join the partner's word (running-mean
// centroid update); unmatched descriptors found new words. Leaves are then
// organized into a tree and idf weights computed from document frequencies.
Vocabulary train_incremental(const std::vector<FrameFeatures>& sequence,
                             const MatchParams& params, const TreeParams& tree_params,
                             uint64_t seed, TrainingLog* log = nullptr);

// Hierarchical k-means over a fixed set of leaf words. Leaves are never
// re-clustered or merged; internal node centroids are the means of the
// leaves below them. final_word_id, when given, receives the mapping from
// input word order to the BFS-dense word ids of the result.
Vocabulary build_tree(const std::vector<VisualWord>& words, uint32_t k, uint32_t max_levels,
                      uint64_t seed, std::vector<uint32_t>* final_word_id = nullptr);

// tf-idf (or raw-histogram) visual vector of a frame, L1-normalized.
VisualVector compute_visual_vector(const FrameFeatures& frame, const Vocabulary& vocab,
                                   Weighting weighting = Weighting::kTfIdf);

// Similarity of two L1-normalized sparse vectors:
//   s(v1, v2) = sum_i |v1_i| + |v2_i| - |v1_i - v2_i|
// Terms where either side is absent cancel, so only shared words contribute.
double similarity(const VisualVector& v1, const VisualVector& v2);

// Binary .dxv vocabulary serialization; save -> load is a bit-exact round trip.
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

}  // namespace placerec

#endif
