#ifndef PLACEREC_EVAL_HPP
#define PLACEREC_EVAL_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "placerec/relocalization.hpp"
#include "placerec/synth.hpp"

namespace placerec {

struct PrPoint {
    double threshold = 0.0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double precision = 1.0;
    double recall = 1.0;
};

struct LcdEvalConfig {
    LcdConfig lcd;
    int gt_tolerance = 5;  // frames; a detection within this of a planted pair counts
};

struct LcdEvalResult {
    // One PR row per (mode, threshold). Modes: "full" sweeps the global
    // distance threshold, "phase1" and "phase1_raw" sweep a BoW score
    // threshold on the top-1 candidate.
    std::vector<std::pair<std::string, PrPoint>> rows;
    std::string csv;  // mode,threshold,tp,fp,fn,precision,recall
};

// Replays the query sequence against a stored database. Each query sees
// only keyframes older than its own id minus the temporal gap, mirroring
// online sequential detection. Ground truth comes from loops.txt next to
// the query frames.
LcdEvalResult run_lcd_eval(const std::filesystem::path& db_dir,
                           const std::filesystem::path& queries_dir,
                           std::shared_ptr<const Vocabulary> vocab, const LcdEvalConfig& cfg);

struct RelocEvalRow {
    uint64_t query_id = 0;
    bool success = false;
    double rot_err_deg = 0.0;
    double trans_err_m = 0.0;
    double wall_ms = 0.0;
};

struct RelocEvalResult {
    std::vector<RelocEvalRow> rows;
    double success_rate = 0.0;
    double mean_rot_err_deg = 0.0;    // over successful queries
    double mean_trans_err_m = 0.0;    // over successful queries
    std::string csv;  // query_id,success,rot_err_deg,trans_err_m,wall_ms (+ summary row)
};

// Relocalizes every query frame against the database and scores pose errors
// against poses.txt. Translation error compares camera centers.
RelocEvalResult run_reloc_eval(const std::filesystem::path& db_dir,
                               const std::filesystem::path& queries_dir,
                               std::shared_ptr<const Vocabulary> vocab, const RelocConfig& cfg);

struct BenchRow {
    std::string stage;
    int iterations = 0;
    double mean_ms = 0.0;
    double p95_ms = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::string csv;  // stage,iterations,mean_ms,p95_ms
};

// Kernel timings over frames sampled from the database: vocabulary load,
// visual-vector computation, top-K query, loop detection, relocalization.
// Row set and order are fixed; only the timing numbers vary between runs.
BenchResult run_benchmark(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& db_dir);

}  // namespace placerec

#endif
