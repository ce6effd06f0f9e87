#include "placerec/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "placerec/feature_io.hpp"

namespace placerec {

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string fmt_ms(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Decision {
    uint64_t query;
    uint64_t match;
    double value;  // global distance (full mode) or BoW score (phase-1 modes)
};

// Greedy one-to-one matching of accepted detections against planted pairs,
// in query order. Each planted pair is claimed at most once.
PrPoint score_decisions(const std::vector<Decision>& accepted,
                        const std::vector<std::pair<uint64_t, uint64_t>>& gt, int tol,
                        double threshold) {
    auto near = [tol](uint64_t a, uint64_t b) {
        return (a > b ? a - b : b - a) <= static_cast<uint64_t>(tol);
    };
    std::vector<char> claimed(gt.size(), 0);
    PrPoint p;
    p.threshold = threshold;
    for (const Decision& d : accepted) {
        bool found = false;
        for (size_t g = 0; g < gt.size() && !found; ++g) {
            if (claimed[g]) continue;
            const auto& [i, j] = gt[g];
            if ((near(d.query, j) && near(d.match, i)) ||
                (near(d.query, i) && near(d.match, j))) {
                claimed[g] = 1;
                found = true;
            }
        }
        found ? ++p.tp : ++p.fp;
    }
    p.fn = static_cast<int>(gt.size()) - p.tp;
    p.precision = (p.tp + p.fp) > 0 ? double(p.tp) / double(p.tp + p.fp) : 1.0;
    p.recall = (p.tp + p.fn) > 0 ? double(p.tp) / double(p.tp + p.fn) : 1.0;
    return p;
}

double elapsed_ms(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

}  // namespace

LcdEvalResult run_lcd_eval(const std::filesystem::path& db_dir,
                           const std::filesystem::path& queries_dir,
                           std::shared_ptr<const Vocabulary> vocab, const LcdEvalConfig& cfg) {
    const std::filesystem::path gt_path = queries_dir / "loops.txt";
    if (!std::filesystem::exists(gt_path))
        throw MissingGroundTruth("no loops.txt in " + queries_dir.string());
    const auto gt = read_pair_list(gt_path);

    const KeyframeDatabase db = load_database(db_dir, vocab);

    // Parallel database with raw-histogram weights for the ablation mode.
    KeyframeDatabase db_raw{vocab};
    for (uint64_t id = 0; id < db.size(); ++id) {
        const Keyframe& kf = db.keyframe(id);
        db_raw.add_keyframe_with_vector(
            kf.frame, kf.pose,
            compute_visual_vector(kf.frame, *vocab, Weighting::kRawHistogram));
    }

    // Accept-everything threshold so the full-mode decision records the
    // smallest global distance; acceptance is decided later in the sweep.
    LcdConfig wide = cfg.lcd;
    wide.global_dist_threshold = 3.0;

    std::vector<Decision> full, phase1, phase1_raw;
    for (const auto& path : list_feature_files(queries_dir)) {
        const FrameFeatures frame = read_frame_features(path);
        const uint64_t qid = frame.frame_id;
        const uint64_t gap = static_cast<uint64_t>(cfg.lcd.min_temporal_gap);
        // Sequential protocol: everything newer than (query - gap) is hidden.
        const IdRange exclude{qid >= gap ? qid - gap : 0,
                              std::numeric_limits<uint64_t>::max()};

        const Keyframe query = db.make_query_keyframe(frame, qid);
        if (const auto loop = db.detect_loop(query, wide, exclude))
            full.push_back({qid, loop->matched_keyframe_id, loop->global_distance});

        const auto top1 = db.query_topk(query.visual_vector, 1, exclude);
        if (!top1.empty()) phase1.push_back({qid, top1[0].first, top1[0].second});

        const auto raw_vector = compute_visual_vector(frame, *vocab, Weighting::kRawHistogram);
        const auto top1_raw = db_raw.query_topk(raw_vector, 1, exclude);
        if (!top1_raw.empty())
            phase1_raw.push_back({qid, top1_raw[0].first, top1_raw[0].second});
    }

    LcdEvalResult result;
    result.csv = "mode,threshold,tp,fp,fn,precision,recall\n";
    auto emit = [&](const std::string& mode, const PrPoint& p) {
        result.rows.emplace_back(mode, p);
        result.csv += mode + "," + fmt_g(p.threshold) + "," + std::to_string(p.tp) + "," +
                      std::to_string(p.fp) + "," + std::to_string(p.fn) + "," +
                      fmt_g(p.precision) + "," + fmt_g(p.recall) + "\n";
    };

    // Full mode accepts distance <= threshold, swept upward from none.
    {
        emit("full", score_decisions({}, gt, cfg.gt_tolerance, -1.0));
        std::vector<double> values;
        for (const Decision& d : full) values.push_back(d.value);
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (const double threshold : values) {
            std::vector<Decision> accepted;
            for (const Decision& d : full)
                if (d.value <= threshold) accepted.push_back(d);
            emit("full", score_decisions(accepted, gt, cfg.gt_tolerance, threshold));
        }
    }

    // Phase-1 modes accept score >= threshold, swept downward from none
    // (scores never exceed 2, so 3 accepts nothing).
    auto sweep_scores = [&](const std::string& mode, const std::vector<Decision>& decisions) {
        emit(mode, score_decisions({}, gt, cfg.gt_tolerance, 3.0));
        std::vector<double> values;
        for (const Decision& d : decisions) values.push_back(d.value);
        std::sort(values.begin(), values.end(), std::greater<double>());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        for (const double threshold : values) {
            std::vector<Decision> accepted;
            for (const Decision& d : decisions)
                if (d.value >= threshold) accepted.push_back(d);
            emit(mode, score_decisions(accepted, gt, cfg.gt_tolerance, threshold));
        }
    };
    sweep_scores("phase1", phase1);
    sweep_scores("phase1_raw", phase1_raw);

    return result;
}

// ---------------------------------------------------------------------------
// Re-localization evaluation
// ---------------------------------------------------------------------------

RelocEvalResult run_reloc_eval(const std::filesystem::path& db_dir,
                               const std::filesystem::path& queries_dir,
                               std::shared_ptr<const Vocabulary> vocab, const RelocConfig& cfg) {
    const std::filesystem::path gt_path = queries_dir / "poses.txt";
    if (!std::filesystem::exists(gt_path))
        throw MissingGroundTruth("no poses.txt in " + queries_dir.string());
    const auto gt_poses = read_pose_file(gt_path);

    CameraIntrinsics k;
    if (std::filesystem::exists(queries_dir / "intrinsics.txt"))
        k = read_intrinsics(queries_dir / "intrinsics.txt");
    else if (std::filesystem::exists(db_dir / "intrinsics.txt"))
        k = read_intrinsics(db_dir / "intrinsics.txt");
    else
        throw IoFailure("no intrinsics.txt in " + queries_dir.string() + " or " +
                        db_dir.string());

    const KeyframeDatabase db = load_database(db_dir, vocab);

    RelocEvalResult result;
    result.csv = "query_id,success,rot_err_deg,trans_err_m,wall_ms\n";
    int successes = 0;
    double rot_sum = 0.0, trans_sum = 0.0, total_ms = 0.0;

    for (const auto& path : list_feature_files(queries_dir)) {
        const FrameFeatures frame = read_frame_features(path);
        const auto gt_it = gt_poses.find(frame.frame_id);
        if (gt_it == gt_poses.end())
            throw MissingGroundTruth("no ground-truth pose for frame " +
                                     std::to_string(frame.frame_id));

        const auto t0 = std::chrono::steady_clock::now();
        const RelocResult reloc = relocalize(db, frame, k, cfg);
        const double ms = elapsed_ms(t0);
        total_ms += ms;

        RelocEvalRow row;
        row.query_id = frame.frame_id;
        row.wall_ms = ms;
        row.success = reloc.pose.has_value();
        if (row.success) {
            const Pose& est = *reloc.pose;
            const Pose& gt = gt_it->second;
            row.rot_err_deg =
                rotation_angle_between(est.rotation, gt.rotation) * 180.0 / M_PI;
            const Eigen::Vector3d c_est = -(est.rotation.transpose() * est.translation);
            const Eigen::Vector3d c_gt = -(gt.rotation.transpose() * gt.translation);
            row.trans_err_m = (c_est - c_gt).norm();
            ++successes;
            rot_sum += row.rot_err_deg;
            trans_sum += row.trans_err_m;
            result.csv += std::to_string(row.query_id) + ",1," + fmt_g(row.rot_err_deg) + "," +
                          fmt_g(row.trans_err_m) + "," + fmt_ms(ms) + "\n";
        } else {
            result.csv += std::to_string(row.query_id) + ",0,,," + fmt_ms(ms) + "\n";
        }
        result.rows.push_back(row);
    }

    const size_t n = result.rows.size();
    result.success_rate = n > 0 ? double(successes) / double(n) : 0.0;
    result.mean_rot_err_deg = successes > 0 ? rot_sum / successes : 0.0;
    result.mean_trans_err_m = successes > 0 ? trans_sum / successes : 0.0;
    result.csv += "summary," + fmt_g(result.success_rate) + "," +
                  fmt_g(result.mean_rot_err_deg) + "," + fmt_g(result.mean_trans_err_m) + "," +
                  fmt_ms(total_ms) + "\n";
    return result;
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

BenchResult run_benchmark(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& db_dir) {
    BenchResult result;
    auto add_row = [&](const std::string& stage, std::vector<double> samples) {
        BenchRow row;
        row.stage = stage;
        row.iterations = static_cast<int>(samples.size());
        if (!samples.empty()) {
            double sum = 0.0;
            for (double s : samples) sum += s;
            row.mean_ms = sum / samples.size();
            std::sort(samples.begin(), samples.end());
            const size_t idx =
                std::min(samples.size() - 1,
                         static_cast<size_t>(std::ceil(0.95 * samples.size())) - 1);
            row.p95_ms = samples[idx];
        } else {
            row.mean_ms = row.p95_ms = std::nan("");
        }
        result.rows.push_back(row);
    };

    std::vector<double> load_samples;
    std::shared_ptr<const Vocabulary> vocab;
    for (int i = 0; i < 3; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto loaded = load_vocab(vocab_path);
        load_samples.push_back(elapsed_ms(t0));
        if (!vocab) vocab = std::make_shared<const Vocabulary>(std::move(loaded));
    }
    add_row("vocab_load", std::move(load_samples));

    const KeyframeDatabase db = load_database(db_dir, vocab);
    const size_t num_queries = std::min<size_t>(db.size(), 30);

    std::vector<Keyframe> queries;
    for (size_t i = 0; i < num_queries; ++i)
        queries.push_back(db.make_query_keyframe(db.keyframe(i).frame, db.keyframe(i).frame.frame_id));

    std::vector<double> vv, topk, lcd, reloc;
    const LcdConfig lcd_cfg;
    for (size_t i = 0; i < num_queries; ++i) {
        const FrameFeatures& frame = db.keyframe(i).frame;
        auto t0 = std::chrono::steady_clock::now();
        const VisualVector v = compute_visual_vector(frame, *vocab);
        vv.push_back(elapsed_ms(t0));

        t0 = std::chrono::steady_clock::now();
        (void)db.query_topk(v, lcd_cfg.k_candidates);
        topk.push_back(elapsed_ms(t0));

        t0 = std::chrono::steady_clock::now();
        (void)db.detect_loop(queries[i], lcd_cfg);
        lcd.push_back(elapsed_ms(t0));
    }
    add_row("visual_vector", std::move(vv));
    add_row("query_topk", std::move(topk));
    add_row("detect_loop", std::move(lcd));

    if (std::filesystem::exists(db_dir / "intrinsics.txt")) {
        const CameraIntrinsics k = read_intrinsics(db_dir / "intrinsics.txt");
        const RelocConfig cfg;
        for (size_t i = 0; i < num_queries; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            (void)relocalize(db, db.keyframe(i).frame, k, cfg);
            reloc.push_back(elapsed_ms(t0));
        }
    }
    add_row("relocalize", std::move(reloc));

    result.csv = "stage,iterations,mean_ms,p95_ms\n";
    for (const BenchRow& row : result.rows)
        result.csv += row.stage + "," + std::to_string(row.iterations) + "," +
                      fmt_ms(row.mean_ms) + "," + fmt_ms(row.p95_ms) + "\n";
    return result;
}

}  // namespace placerec
