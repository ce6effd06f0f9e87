#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "placerec/eval.hpp"
#include "placerec/feature_io.hpp"
#include "placerec/keyframe_database.hpp"
#include "placerec/relocalization.hpp"
#include "placerec/synth.hpp"
#include "placerec/vocabulary.hpp"

namespace {

using namespace placerec;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream file(path, std::ios::binary);
    if (!file || !(file << text)) throw IoFailure("cannot write " + path.string());
}

Config load_config(const std::string& path) {
    return path.empty() ? Config{} : Config::from_file(path);
}

void reject_unknown(const Config& cfg, const std::string& path) {
    const auto leftover = cfg.unconsumed_keys();
    if (leftover.empty()) return;
    std::string msg = "unknown config keys in " + path + ":";
    for (const auto& key : leftover) msg += " " + key;
    throw CorruptPayload(msg);
}

std::vector<FrameFeatures> load_frames(const std::filesystem::path& dir) {
    std::vector<FrameFeatures> frames;
    for (const auto& path : list_feature_files(dir))
        frames.push_back(read_frame_features(path));
    if (frames.empty()) throw EmptySequence("no .dxf files in " + dir.string());
    return frames;
}

std::shared_ptr<const Vocabulary> load_vocab_for_db(const std::string& explicit_path,
                                                    const std::filesystem::path& db_dir) {
    const std::filesystem::path path =
        explicit_path.empty() ? db_dir / "vocab.dxv" : std::filesystem::path(explicit_path);
    return std::make_shared<const Vocabulary>(load_vocab(path));
}

RansacParams ransac_from(const Config& cfg) {
    RansacParams p;
    p.max_iterations = static_cast<int>(cfg.get_int("ransac_max_iterations", p.max_iterations));
    p.inlier_threshold_px = cfg.get_double("ransac_inlier_threshold_px", p.inlier_threshold_px);
    p.confidence = cfg.get_double("ransac_confidence", p.confidence);
    p.min_inliers = static_cast<int>(cfg.get_int("ransac_min_inliers", p.min_inliers));
    p.seed = static_cast<uint64_t>(cfg.get_int("ransac_seed", static_cast<int64_t>(p.seed)));
    return p;
}

int run_train_vocab(const std::string& input, const std::string& out, int k, int levels,
                    int top_matches, uint64_t seed, double ratio, bool no_mutual) {
    const std::vector<FrameFeatures> frames = load_frames(input);
    MatchParams mp;
    mp.max_pairs_kept = top_matches;
    mp.ratio_threshold = ratio;
    mp.mutual_check = !no_mutual;
    TreeParams tp;
    tp.k = static_cast<uint32_t>(k);
    tp.max_levels = static_cast<uint32_t>(levels);

    const Vocabulary vocab = train_incremental(frames, mp, tp, seed);
    save_vocab(vocab, out);
    std::printf("trained %u words (%u nodes) from %zu frames -> %s\n", vocab.num_words(),
                vocab.num_nodes(), frames.size(), out.c_str());
    return 0;
}

int run_build_db(const std::string& input, const std::string& vocab_path,
                 const std::string& out) {
    auto vocab = std::make_shared<const Vocabulary>(load_vocab(vocab_path));
    const std::filesystem::path in_dir(input), out_dir(out);

    std::map<uint64_t, Pose> poses;
    if (std::filesystem::exists(in_dir / "poses.txt"))
        poses = read_pose_file(in_dir / "poses.txt");

    KeyframeDatabase db(vocab);
    for (const auto& path : list_feature_files(in_dir)) {
        FrameFeatures frame = read_frame_features(path);
        Pose pose;
        if (const auto it = poses.find(frame.frame_id); it != poses.end()) pose = it->second;
        db.add_keyframe(std::move(frame), pose);
    }
    save_database(db, out_dir);

    std::filesystem::copy_file(vocab_path, out_dir / "vocab.dxv",
                               std::filesystem::copy_options::overwrite_existing);
    if (std::filesystem::exists(in_dir / "intrinsics.txt"))
        std::filesystem::copy_file(in_dir / "intrinsics.txt", out_dir / "intrinsics.txt",
                                   std::filesystem::copy_options::overwrite_existing);
    std::printf("stored %zu keyframes -> %s\n", db.size(), out.c_str());
    return 0;
}

int run_detect_loops(const std::string& db_dir, const std::string& queries,
                     const std::string& config_path, const std::string& vocab_path,
                     const std::string& out) {
    const Config cfg_file = load_config(config_path);
    LcdEvalConfig cfg;
    cfg.lcd.k_candidates = static_cast<int>(cfg_file.get_int("K", cfg.lcd.k_candidates));
    cfg.lcd.global_dist_threshold =
        cfg_file.get_double("global_dist_threshold", cfg.lcd.global_dist_threshold);
    cfg.lcd.min_temporal_gap =
        static_cast<int>(cfg_file.get_int("min_temporal_gap", cfg.lcd.min_temporal_gap));
    cfg.gt_tolerance = static_cast<int>(cfg_file.get_int("gt_tolerance", cfg.gt_tolerance));
    reject_unknown(cfg_file, config_path);

    const auto vocab = load_vocab_for_db(vocab_path, db_dir);
    const LcdEvalResult result = run_lcd_eval(db_dir, queries, vocab, cfg);
    write_text(out, result.csv);
    std::printf("%zu PR rows -> %s\n", result.rows.size(), out.c_str());
    return 0;
}

RelocConfig reloc_config_from(const Config& cfg_file) {
    RelocConfig cfg;
    cfg.num_candidates = static_cast<int>(cfg_file.get_int("M", cfg.num_candidates));
    cfg.group_gap = static_cast<int>(cfg_file.get_int("group_gap", cfg.group_gap));
    cfg.match_ratio = cfg_file.get_double("match_ratio", cfg.match_ratio);
    cfg.min_group_matches =
        static_cast<int>(cfg_file.get_int("min_group_matches", cfg.min_group_matches));
    cfg.ransac = ransac_from(cfg_file);
    return cfg;
}

int run_relocalize(const std::string& db_dir, const std::string& queries,
                   const std::string& config_path, const std::string& vocab_path,
                   const std::string& out) {
    const Config cfg_file = load_config(config_path);
    const RelocConfig cfg = reloc_config_from(cfg_file);
    reject_unknown(cfg_file, config_path);

    const auto vocab = load_vocab_for_db(vocab_path, db_dir);
    const RelocEvalResult result = run_reloc_eval(db_dir, queries, vocab, cfg);
    write_text(out, result.csv);
    std::printf("success rate %.3f over %zu queries -> %s\n", result.success_rate,
                result.rows.size(), out.c_str());
    return 0;
}

int run_synth(const std::string& config_path, const std::string& out) {
    const Config cfg_file = Config::from_file(config_path);
    const SynthConfig cfg = synth_config_from(cfg_file);
    reject_unknown(cfg_file, config_path);
    generate_synthetic(cfg, out);
    std::printf("generated %d frames -> %s\n", cfg.num_frames, out.c_str());
    return 0;
}

int run_bench(const std::string& vocab_path, const std::string& db_dir,
              const std::string& out) {
    const BenchResult result = run_benchmark(vocab_path, db_dir);
    write_text(out, result.csv);
    std::printf("%zu stages -> %s\n", result.rows.size(), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Place recognition toolkit: vocabulary training, loop-closure "
                 "detection and re-localization over pre-extracted features"};
    app.require_subcommand(1);

    std::string input, out, vocab_path, db_dir, queries, config_path;
    int k = 10, levels = 6, top_matches = 300;
    uint64_t seed = 0;
    double ratio = 0.8;
    bool no_mutual = false;

    auto* train = app.add_subcommand("train-vocab", "Train a vocabulary from a frame sequence");
    train->add_option("--input", input, "Directory of .dxf feature files")->required();
    train->add_option("--out", out, "Output vocabulary file (.dxv)")->required();
    train->add_option("--k", k, "Tree branching factor");
    train->add_option("--levels", levels, "Maximum tree depth");
    train->add_option("--top-matches", top_matches, "Adjacent-pair matches kept");
    train->add_option("--seed", seed, "Random seed");
    train->add_option("--ratio", ratio, "Lowe ratio threshold");
    train->add_flag("--no-mutual", no_mutual, "Disable the mutual-nearest check");

    auto* build = app.add_subcommand("build-db", "Build a keyframe database from a dataset");
    build->add_option("--input", input, "Directory of .dxf feature files")->required();
    build->add_option("--vocab", vocab_path, "Vocabulary file")->required();
    build->add_option("--out", out, "Output database directory")->required();

    auto* detect = app.add_subcommand("detect-loops", "Loop-closure PR evaluation");
    detect->add_option("--db", db_dir, "Database directory (from build-db)")->required();
    detect->add_option("--queries", queries, "Query dataset directory with loops.txt")
        ->required();
    detect->add_option("--config", config_path, "Flat key=value config file");
    detect->add_option("--vocab", vocab_path, "Vocabulary (default: <db>/vocab.dxv)");
    detect->add_option("--out", out, "Output PR CSV")->required();

    auto* reloc = app.add_subcommand("relocalize", "Re-localization evaluation");
    reloc->add_option("--db", db_dir, "Database directory (from build-db)")->required();
    reloc->add_option("--queries", queries, "Query dataset directory with poses.txt")
        ->required();
    reloc->add_option("--config", config_path, "Flat key=value config file");
    reloc->add_option("--vocab", vocab_path, "Vocabulary (default: <db>/vocab.dxv)");
    reloc->add_option("--out", out, "Output report CSV")->required();

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", config_path, "Synth config file")->required();
    synth->add_option("--out", out, "Output dataset directory")->required();

    auto* bench = app.add_subcommand("bench", "Kernel timing report");
    bench->add_option("--vocab", vocab_path, "Vocabulary file")->required();
    bench->add_option("--db", db_dir, "Database directory")->required();
    bench->add_option("--out", out, "Output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (train->parsed())
            return run_train_vocab(input, out, k, levels, top_matches, seed, ratio, no_mutual);
        if (build->parsed()) return run_build_db(input, vocab_path, out);
        if (detect->parsed())
            return run_detect_loops(db_dir, queries, config_path, vocab_path, out);
        if (reloc->parsed()) return run_relocalize(db_dir, queries, config_path, vocab_path, out);
        if (synth->parsed()) return run_synth(config_path, out);
        if (bench->parsed()) return run_bench(vocab_path, db_dir, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
