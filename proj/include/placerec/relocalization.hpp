#ifndef PLACEREC_RELOCALIZATION_HPP
#define PLACEREC_RELOCALIZATION_HPP

#include <optional>
#include <string>
#include <vector>

#include "placerec/keyframe_database.hpp"

namespace placerec {

struct RelocConfig {
    int num_candidates = 5;   // retrieved frames per query
    int group_gap = 10;       // max id gap chained into one group; 0 forces singletons
    double match_ratio = 0.8;
    int min_group_matches = 20;
    RansacParams ransac;
};

struct CandidateGroup {
    std::vector<uint64_t> keyframe_ids;  // ascending
};

// The num_candidates keyframes with the smallest global-descriptor distance
// to g, ascending, ties by lower id. Throws EmptyDatabase.
std::vector<std::pair<uint64_t, double>> retrieve_candidates(const KeyframeDatabase& db,
                                                             const Eigen::VectorXf& g,
                                                             int num_candidates);

// Chains id-sorted candidates into groups: consecutive ids stay together
// while their gap is at most group_gap.
std::vector<CandidateGroup> form_groups(std::vector<uint64_t> candidate_ids,
                                        const RelocConfig& cfg);

// Mutual-NN ratio-test matching of query keypoints against every group
// member's 3D-bearing keypoints, pooled across the group. One query
// keypoint keeps only its smallest-distance match. Correspondences carry
// world-frame points and the source keyframe id, ordered by query keypoint.
// Throws NoDepthPoints when a member has no 3D points.
std::vector<Correspondence> match_to_group(const FrameFeatures& query,
                                           const CandidateGroup& group,
                                           const KeyframeDatabase& db, const RelocConfig& cfg);

struct GroupReport {
    std::vector<uint64_t> keyframe_ids;
    double best_distance = 0.0;  // smallest member global distance
    int num_matches = 0;
    int num_inliers = 0;
    bool ransac_run = false;
    bool succeeded = false;
    std::string note;  // error text when a stage failed
};

struct RelocDiagnostics {
    std::vector<std::pair<uint64_t, double>> candidates;  // (id, global distance)
    std::vector<GroupReport> groups;                      // in attempt order
};

struct RelocResult {
    std::optional<Pose> pose;
    RelocDiagnostics diagnostics;
};

// Full pipeline: retrieval, grouping, pooled matching, RANSAC+PnP per group
// with at least min_group_matches correspondences. Groups are attempted in
// order of best member distance; the first success wins. Never throws:
// failures land in the diagnostics and an empty pose.
RelocResult relocalize(const KeyframeDatabase& db, const FrameFeatures& query,
                       const CameraIntrinsics& k, const RelocConfig& cfg);

// One line per group: ids, match count, inlier count, distance, status.
std::string to_report(const RelocDiagnostics& diag);

}  // namespace placerec

#endif
