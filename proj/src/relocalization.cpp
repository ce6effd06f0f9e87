#include "placerec/relocalization.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

namespace placerec {

std::vector<std::pair<uint64_t, double>> retrieve_candidates(const KeyframeDatabase& db,
                                                             const Eigen::VectorXf& g,
                                                             int num_candidates) {
    const size_t n = db.size();
    if (n == 0) throw EmptyDatabase("retrieval over an empty database");
    if (num_candidates < 1) throw InvariantViolation("retrieval count must be >= 1");

    std::vector<std::pair<uint64_t, double>> ranked;
    ranked.reserve(n);
    for (uint64_t id = 0; id < n; ++id)
        ranked.emplace_back(id, global_distance(g, db.keyframe(id).frame.global_descriptor));
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second < y.second;
        return x.first < y.first;
    });
    if (ranked.size() > static_cast<size_t>(num_candidates)) ranked.resize(num_candidates);
    return ranked;
}

std::vector<CandidateGroup> form_groups(std::vector<uint64_t> candidate_ids,
                                        const RelocConfig& cfg) {
    if (cfg.group_gap < 0) throw InvariantViolation("group gap must be >= 0");
    std::sort(candidate_ids.begin(), candidate_ids.end());
    candidate_ids.erase(std::unique(candidate_ids.begin(), candidate_ids.end()),
                        candidate_ids.end());

    std::vector<CandidateGroup> groups;
    for (const uint64_t id : candidate_ids) {
        if (!groups.empty() &&
            id - groups.back().keyframe_ids.back() <= static_cast<uint64_t>(cfg.group_gap))
            groups.back().keyframe_ids.push_back(id);
        else
            groups.push_back({{id}});
    }
    return groups;
}

std::vector<Correspondence> match_to_group(const FrameFeatures& query,
                                           const CandidateGroup& group,
                                           const KeyframeDatabase& db, const RelocConfig& cfg) {
    struct Hit {
        Correspondence c;
        float distance;
        bool used = false;
    };
    std::vector<Hit> best_for_kp(query.num_keypoints());

    MatchParams mp;
    mp.max_pairs_kept = std::numeric_limits<int>::max();
    mp.mutual_check = true;
    mp.ratio_threshold = cfg.match_ratio;

    for (const uint64_t kf_id : group.keyframe_ids) {
        const Keyframe& kf = db.keyframe(kf_id);
        if (kf.frame.points3d.empty())
            throw NoDepthPoints("keyframe " + std::to_string(kf_id) + " has no 3D points");

        // Restrict the keyframe side to keypoints that carry a 3D point.
        FrameFeatures sub;
        sub.frame_id = kf.frame.frame_id;
        sub.local_descriptors.resize(kf.frame.points3d.size(), kf.frame.local_dim());
        std::vector<Eigen::Vector3d> world_points(kf.frame.points3d.size());
        const Pose cam_to_world = kf.pose.inverse();
        for (size_t i = 0; i < kf.frame.points3d.size(); ++i) {
            const Point3dObs& obs = kf.frame.points3d[i];
            sub.keypoints.push_back(kf.frame.keypoints[obs.keypoint_index]);
            sub.local_descriptors.row(i) = kf.frame.local_descriptors.row(obs.keypoint_index);
            world_points[i] = cam_to_world.transform(obs.point.cast<double>());
        }

        for (const DescriptorMatch& m : match_adjacent(query, sub, mp)) {
            Hit& slot = best_for_kp[m.index_in_a];
            if (slot.used && slot.distance <= m.distance) continue;
            slot.used = true;
            slot.distance = m.distance;
            slot.c.point3d = world_points[m.index_in_b];
            slot.c.pixel = Eigen::Vector2d(query.keypoints[m.index_in_a].x,
                                           query.keypoints[m.index_in_a].y);
            slot.c.source_keyframe = kf_id;
        }
    }

    std::vector<Correspondence> pooled;
    for (const Hit& hit : best_for_kp)
        if (hit.used) pooled.push_back(hit.c);
    return pooled;
}

RelocResult relocalize(const KeyframeDatabase& db, const FrameFeatures& query,
                       const CameraIntrinsics& k, const RelocConfig& cfg) {
    RelocResult result;
    if (db.size() == 0) return result;

    try {
        result.diagnostics.candidates =
            retrieve_candidates(db, query.global_descriptor, cfg.num_candidates);
    } catch (const Error& e) {
        GroupReport report;
        report.note = e.what();
        result.diagnostics.groups.push_back(std::move(report));
        return result;
    }

    std::vector<uint64_t> ids;
    for (const auto& [id, dist] : result.diagnostics.candidates) ids.push_back(id);
    std::vector<CandidateGroup> groups = form_groups(ids, cfg);

    // Attempt order: best (smallest) member distance first.
    std::vector<std::pair<double, size_t>> order;
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& [id, dist] : result.diagnostics.candidates)
            if (std::find(groups[gi].keyframe_ids.begin(), groups[gi].keyframe_ids.end(), id) !=
                groups[gi].keyframe_ids.end())
                best = std::min(best, dist);
        order.emplace_back(best, gi);
    }
    std::sort(order.begin(), order.end(), [&](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first < y.first;
        return groups[x.second].keyframe_ids.front() < groups[y.second].keyframe_ids.front();
    });

    for (const auto& [best_dist, gi] : order) {
        GroupReport report;
        report.keyframe_ids = groups[gi].keyframe_ids;
        report.best_distance = best_dist;
        try {
            const std::vector<Correspondence> pooled = match_to_group(query, groups[gi], db, cfg);
            report.num_matches = static_cast<int>(pooled.size());
            if (report.num_matches < cfg.min_group_matches) {
                report.note = "below min_group_matches";
                result.diagnostics.groups.push_back(std::move(report));
                continue;
            }
            report.ransac_run = true;
            const RansacResult ransac = ransac_pnp(pooled, k, cfg.ransac);
            report.num_inliers = static_cast<int>(ransac.inliers.size());
            report.succeeded = true;
            result.diagnostics.groups.push_back(std::move(report));
            result.pose = ransac.pose;
            return result;
        } catch (const Error& e) {
            report.note = e.what();
            result.diagnostics.groups.push_back(std::move(report));
        }
    }
    return result;
}

std::string to_report(const RelocDiagnostics& diag) {
    std::string out;
    char buf[160];
    for (const GroupReport& g : diag.groups) {
        std::string ids;
        for (size_t i = 0; i < g.keyframe_ids.size(); ++i) {
            if (i) ids += ',';
            ids += std::to_string(g.keyframe_ids[i]);
        }
        const std::string note = g.note.empty() ? "" : " (" + g.note + ")";
        std::snprintf(buf, sizeof(buf), "group [%s] matches=%d inliers=%d distance=%.6f %s%s\n",
                      ids.c_str(), g.num_matches, g.num_inliers, g.best_distance,
                      g.succeeded ? "ok" : "failed", note.c_str());
        out += buf;
    }
    return out;
}

}  // namespace placerec
