#include "placerec/keyframe_database.hpp"

#include <algorithm>
#include <cstdio>
#include <mutex>

#include "placerec/binary_io.hpp"

namespace placerec {

double global_distance(const Eigen::VectorXf& g1, const Eigen::VectorXf& g2) {
    if (g1.size() != g2.size())
        throw DimensionMismatch("global descriptor dims " + std::to_string(g1.size()) + " vs " +
                                std::to_string(g2.size()));
    return 1.0 - double(g1.dot(g2));
}

KeyframeDatabase::KeyframeDatabase(std::shared_ptr<const Vocabulary> vocab)
    : vocab_(std::move(vocab)) {
    if (!vocab_ || vocab_->empty()) throw EmptyVocabulary("database needs a vocabulary");
    index_.resize(vocab_->num_words());
}

uint64_t KeyframeDatabase::insert_locked(FrameFeatures frame, const Pose& pose, VisualVector v) {
    if (!is_valid_rotation(pose.rotation))
        throw InvariantViolation("keyframe pose rotation not orthonormal");
    for (const auto& [word, weight] : v.entries)
        if (word >= vocab_->num_words())
            throw DimensionMismatch("visual vector word " + std::to_string(word) +
                                    " outside vocabulary");

    const uint64_t id = keyframes_.size();
    Keyframe kf;
    kf.keyframe_id = id;
    kf.pose = pose;
    kf.visual_vector = std::move(v);
    for (int i = 0; i < frame.num_keypoints(); ++i)
        kf.word_to_keypoints[vocab_->quantize(frame.local_descriptors.row(i))].push_back(i);
    kf.frame = std::move(frame);

    for (const auto& [word, weight] : kf.visual_vector.entries)
        index_[word].emplace_back(id, static_cast<float>(weight));
    keyframes_.push_back(std::move(kf));
    return id;
}

uint64_t KeyframeDatabase::add_keyframe(FrameFeatures frame, const Pose& pose) {
    if (frame.num_keypoints() > 0 &&
        frame.local_dim() != static_cast<int>(vocab_->descriptor_dim()))
        throw DimensionMismatch("frame descriptor dim does not match vocabulary");
    VisualVector v = compute_visual_vector(frame, *vocab_);
    std::unique_lock lock(mutex_);
    return insert_locked(std::move(frame), pose, std::move(v));
}

uint64_t KeyframeDatabase::add_keyframe_with_vector(FrameFeatures frame, const Pose& pose,
                                                    VisualVector v) {
    std::unique_lock lock(mutex_);
    return insert_locked(std::move(frame), pose, std::move(v));
}

size_t KeyframeDatabase::size() const {
    std::shared_lock lock(mutex_);
    return keyframes_.size();
}

const Keyframe& KeyframeDatabase::keyframe(uint64_t id) const {
    std::shared_lock lock(mutex_);
    if (id >= keyframes_.size())
        throw InvariantViolation("keyframe id " + std::to_string(id) + " out of range");
    return keyframes_[id];
}

std::vector<std::pair<uint64_t, double>> KeyframeDatabase::query_topk(const VisualVector& v,
                                                                      int k,
                                                                      IdRange exclude) const {
    std::shared_lock lock(mutex_);
    if (k <= 0 || v.empty() || keyframes_.empty()) return {};

    // Accumulate per-keyframe sums word by word in ascending word order,
    // which reproduces the dense two-vector merge bit for bit.
    std::vector<double> score(keyframes_.size(), 0.0);
    std::vector<char> touched(keyframes_.size(), 0);
    std::vector<uint64_t> hit_order;
    for (const auto& [word, qw] : v.entries) {
        if (word >= index_.size()) continue;
        for (const auto& [kf, kw] : index_[word]) {
            const double a = qw, b = double(kw);
            score[kf] += a + b - std::abs(a - b);
            if (!touched[kf]) {
                touched[kf] = 1;
                hit_order.push_back(kf);
            }
        }
    }

    std::vector<std::pair<uint64_t, double>> ranked;
    ranked.reserve(hit_order.size());
    for (uint64_t kf : hit_order)
        if (!exclude.contains(kf)) ranked.emplace_back(kf, score[kf]);
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (ranked.size() > static_cast<size_t>(k)) ranked.resize(k);
    return ranked;
}

std::optional<LoopClosure> KeyframeDatabase::detect_loop(
    const Keyframe& query, const LcdConfig& cfg, std::optional<IdRange> exclude_override) const {
    if (cfg.k_candidates < 1) throw InvariantViolation("LCD candidate count must be >= 1");
    const IdRange window =
        exclude_override ? *exclude_override
                         : IdRange::around(query.keyframe_id,
                                           static_cast<uint64_t>(cfg.min_temporal_gap));
    const auto shortlist = query_topk(query.visual_vector, cfg.k_candidates, window);
    if (shortlist.empty()) return std::nullopt;

    std::shared_lock lock(mutex_);
    std::optional<LoopClosure> best;
    for (const auto& [kf_id, bow_score] : shortlist) {
        const double dist = global_distance(query.frame.global_descriptor,
                                            keyframes_[kf_id].frame.global_descriptor);
        if (!best || dist < best->global_distance)
            best = LoopClosure{query.keyframe_id, kf_id, bow_score, dist};
    }
    if (best && best->global_distance <= cfg.global_dist_threshold) return best;
    return std::nullopt;
}

Keyframe KeyframeDatabase::make_query_keyframe(FrameFeatures frame, uint64_t assumed_id) const {
    Keyframe kf;
    kf.keyframe_id = assumed_id;
    kf.visual_vector = compute_visual_vector(frame, *vocab_);
    for (int i = 0; i < frame.num_keypoints(); ++i)
        kf.word_to_keypoints[vocab_->quantize(frame.local_descriptors.row(i))].push_back(i);
    kf.frame = std::move(frame);
    return kf;
}

std::vector<std::pair<uint64_t, float>> KeyframeDatabase::postings(uint32_t word_id) const {
    std::shared_lock lock(mutex_);
    if (word_id >= index_.size()) return {};
    return index_[word_id];
}

std::map<uint32_t, std::vector<std::pair<uint64_t, float>>>
KeyframeDatabase::rebuild_inverted_index() const {
    std::shared_lock lock(mutex_);
    std::map<uint32_t, std::vector<std::pair<uint64_t, float>>> rebuilt;
    for (const Keyframe& kf : keyframes_)
        for (const auto& [word, weight] : kf.visual_vector.entries)
            rebuilt[word].emplace_back(kf.keyframe_id, static_cast<float>(weight));
    return rebuilt;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kDbMagic[4] = {'D', 'X', 'D', 'B'};
constexpr uint32_t kDbVersion = 1;

std::string frame_file_name(uint64_t keyframe_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%08llu.dxf", static_cast<unsigned long long>(keyframe_id));
    return buf;
}

}  // namespace

void save_database(const KeyframeDatabase& db, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoFailure("cannot create " + dir.string() + ": " + ec.message());

    const size_t n = db.size();
    ByteWriter w;
    w.put_magic(kDbMagic);
    w.put_u32(kDbVersion);
    w.put_u32(static_cast<uint32_t>(n));
    for (uint64_t id = 0; id < n; ++id) {
        const Keyframe& kf = db.keyframe(id);
        w.put_u64(kf.frame.frame_id);
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) w.put_f64(kf.pose.rotation(row, col));
            w.put_f64(kf.pose.translation(row));
        }
        w.put_u32(static_cast<uint32_t>(kf.visual_vector.entries.size()));
        for (const auto& [word, weight] : kf.visual_vector.entries) {
            w.put_u32(word);
            w.put_f32(static_cast<float>(weight));
        }
        write_frame_features(kf.frame, dir / frame_file_name(id));
    }
    write_file_bytes(dir / "db.dxi", w.bytes());
}

KeyframeDatabase load_database(const std::filesystem::path& dir,
                               std::shared_ptr<const Vocabulary> vocab) {
    const std::filesystem::path index_path = dir / "db.dxi";
    const std::vector<uint8_t> bytes = read_file_bytes(index_path);
    ByteReader r(bytes);
    if (!r.check_magic(kDbMagic)) throw BadMagic(index_path.string() + ": not a database index");
    const uint32_t version = r.get_u32();
    if (version != kDbVersion)
        throw VersionMismatch(index_path.string() + ": database version " +
                              std::to_string(version));
    const uint32_t n = r.get_u32();

    KeyframeDatabase db(std::move(vocab));
    for (uint32_t id = 0; id < n; ++id) {
        const uint64_t frame_id = r.get_u64();
        Pose pose;
        for (int row = 0; row < 3; ++row) {
            for (int col = 0; col < 3; ++col) pose.rotation(row, col) = r.get_f64();
            pose.translation(row) = r.get_f64();
        }
        if (!is_valid_rotation(pose.rotation))
            throw CorruptPayload(index_path.string() + ": keyframe " + std::to_string(id) +
                                 " pose rotation not orthonormal");
        const uint32_t num_entries = r.get_u32();
        VisualVector v;
        v.entries.reserve(num_entries);
        uint32_t prev_word = 0;
        for (uint32_t e = 0; e < num_entries; ++e) {
            const uint32_t word = r.get_u32();
            const float weight = r.get_f32();
            if (e > 0 && word <= prev_word)
                throw CorruptPayload(index_path.string() + ": vector words not ascending");
            if (word >= db.vocabulary().num_words())
                throw CorruptPayload(index_path.string() + ": word id outside vocabulary");
            if (!(weight > 0.f) || !std::isfinite(weight))
                throw CorruptPayload(index_path.string() + ": non-positive vector weight");
            prev_word = word;
            v.entries.emplace_back(word, double(weight));
        }

        FrameFeatures frame = read_frame_features(dir / frame_file_name(id));
        if (frame.frame_id != frame_id)
            throw CorruptPayload(index_path.string() + ": frame id mismatch at keyframe " +
                                 std::to_string(id));
        db.add_keyframe_with_vector(std::move(frame), pose, std::move(v));
    }
    if (r.remaining() != 0)
        throw CorruptPayload(index_path.string() + ": trailing bytes after last keyframe");
    return db;
}

}  // namespace placerec
