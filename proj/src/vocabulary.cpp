#include "placerec/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "placerec/binary_io.hpp"
#include "placerec/rng.hpp"

namespace placerec {

namespace {

constexpr char kVocabMagic[4] = {'D', 'X', 'V', 'B'};
constexpr uint32_t kVocabVersion = 1;

struct NearestPair {
    int best = -1;
    float best_d2 = std::numeric_limits<float>::infinity();
    float second_d2 = std::numeric_limits<float>::infinity();
};

// Nearest and second-nearest rows of `to` for each row of `from`.
std::vector<NearestPair> nearest_neighbors(const DescriptorMatrix& from,
                                           const DescriptorMatrix& to) {
    std::vector<NearestPair> result(from.rows());
    for (int i = 0; i < from.rows(); ++i) {
        NearestPair nn;
        for (int j = 0; j < to.rows(); ++j) {
            const float d2 = (from.row(i) - to.row(j)).squaredNorm();
            if (d2 < nn.best_d2) {
                nn.second_d2 = nn.best_d2;
                nn.best_d2 = d2;
                nn.best = j;
            } else if (d2 < nn.second_d2) {
                nn.second_d2 = d2;
            }
        }
        result[i] = nn;
    }
    return result;
}

bool passes_ratio(const NearestPair& nn, double ratio) {
    if (!std::isfinite(nn.second_d2)) return true;  // no second neighbor
    return std::sqrt(double(nn.best_d2)) <= ratio * std::sqrt(double(nn.second_d2));
}

}  // namespace

std::vector<DescriptorMatch> match_adjacent(const FrameFeatures& a, const FrameFeatures& b,
                                            const MatchParams& params) {
    if (a.num_keypoints() == 0 || b.num_keypoints() == 0) return {};
    if (a.local_dim() != b.local_dim())
        throw DimensionMismatch("descriptor dims differ: " + std::to_string(a.local_dim()) +
                                " vs " + std::to_string(b.local_dim()));

    const auto nn_ab = nearest_neighbors(a.local_descriptors, b.local_descriptors);
    std::vector<NearestPair> nn_ba;
    if (params.mutual_check) nn_ba = nearest_neighbors(b.local_descriptors, a.local_descriptors);

    std::vector<DescriptorMatch> matches;
    for (int i = 0; i < a.num_keypoints(); ++i) {
        const NearestPair& nn = nn_ab[i];
        if (nn.best < 0) continue;
        if (!passes_ratio(nn, params.ratio_threshold)) continue;
        if (params.mutual_check) {
            const NearestPair& back = nn_ba[nn.best];
            if (back.best != i) continue;
            if (!passes_ratio(back, params.ratio_threshold)) continue;
        }
        matches.push_back({i, nn.best, std::sqrt(nn.best_d2)});
    }

    // Rank by the weaker of the two detection scores, best first.
    auto rank_key = [&](const DescriptorMatch& m) {
        return std::min(a.keypoints[m.index_in_a].score, b.keypoints[m.index_in_b].score);
    };
    std::stable_sort(matches.begin(), matches.end(),
                     [&](const DescriptorMatch& x, const DescriptorMatch& y) {
                         const float kx = rank_key(x), ky = rank_key(y);
                         if (kx != ky) return kx > ky;
                         if (x.index_in_a != y.index_in_a) return x.index_in_a < y.index_in_a;
                         return x.index_in_b < y.index_in_b;
                     });
    if (static_cast<int>(matches.size()) > params.max_pairs_kept)
        matches.resize(params.max_pairs_kept);
    return matches;
}

// ---------------------------------------------------------------------------
// Incremental training
// ---------------------------------------------------------------------------

namespace {

struct TrainingWord {
    Eigen::VectorXd sum;
    uint32_t count = 0;
    uint32_t doc_count = 0;
    uint32_t last_doc = kInvalidIndex;
};

class WordRegistry {
public:
    explicit WordRegistry(TrainingLog* log) : log_(log) {}

    uint32_t create() {
        words_.emplace_back();
        if (log_) log_->members.emplace_back();
        return static_cast<uint32_t>(words_.size() - 1);
    }

    void join(uint32_t word, const Eigen::Ref<const Eigen::RowVectorXf>& descriptor,
              uint32_t frame, uint32_t kp) {
        TrainingWord& w = words_[word];
        if (w.count == 0)
            w.sum = descriptor.transpose().cast<double>();
        else
            w.sum += descriptor.transpose().cast<double>();
        ++w.count;
        if (log_) log_->members[word].emplace_back(frame, kp);
    }

    void mark_document(uint32_t word, uint32_t frame) {
        TrainingWord& w = words_[word];
        if (w.last_doc != frame) {
            w.last_doc = frame;
            ++w.doc_count;
        }
    }

    size_t size() const { return words_.size(); }
    const TrainingWord& word(uint32_t i) const { return words_[i]; }

private:
    std::vector<TrainingWord> words_;
    TrainingLog* log_;
};

uint64_t hash_combine(uint64_t h, uint64_t v) {
    return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

uint64_t hash_params(const MatchParams& mp, const TreeParams& tp) {
    uint64_t h = 0;
    h = hash_combine(h, static_cast<uint64_t>(mp.max_pairs_kept));
    h = hash_combine(h, mp.mutual_check ? 1 : 0);
    uint64_t bits;
    std::memcpy(&bits, &mp.ratio_threshold, 8);
    h = hash_combine(h, bits);
    h = hash_combine(h, tp.k);
    h = hash_combine(h, tp.max_levels);
    return h;
}

}  // namespace

Vocabulary train_incremental(const std::vector<FrameFeatures>& sequence,
                             const MatchParams& params, const TreeParams& tree_params,
                             uint64_t seed, TrainingLog* log) {
    if (sequence.empty()) throw EmptySequence("training sequence is empty");
    int dim = -1;
    for (const FrameFeatures& f : sequence) {
        if (f.num_keypoints() == 0) continue;
        if (dim < 0) dim = f.local_dim();
        else if (f.local_dim() != dim)
            throw DimensionMismatch("training frames have mixed descriptor dims");
    }
    if (dim < 0) throw EmptySequence("training sequence has no descriptors");

    if (log) {
        log->members.clear();
        log->word_of.assign(sequence.size(), {});
        log->final_word_id.clear();
    }

    WordRegistry registry(log);
    const uint32_t num_frames = static_cast<uint32_t>(sequence.size());

    std::vector<uint32_t> word_of_prev;
    std::vector<uint32_t> word_of_cur(sequence[0].num_keypoints(), kInvalidIndex);

    auto finalize_frame = [&](uint32_t frame_idx, std::vector<uint32_t>& word_of) {
        const FrameFeatures& frame = sequence[frame_idx];
        for (uint32_t kp = 0; kp < word_of.size(); ++kp) {
            if (word_of[kp] == kInvalidIndex) {
                const uint32_t w = registry.create();
                registry.join(w, frame.local_descriptors.row(kp), frame_idx, kp);
                word_of[kp] = w;
            }
        }
        for (const uint32_t w : word_of) registry.mark_document(w, frame_idx);
        if (log) log->word_of[frame_idx] = word_of;
    };

    for (uint32_t t = 1; t < num_frames; ++t) {
        word_of_prev = std::move(word_of_cur);
        word_of_cur.assign(sequence[t].num_keypoints(), kInvalidIndex);

        const auto matches = match_adjacent(sequence[t - 1], sequence[t], params);
        for (const DescriptorMatch& m : matches) {
            const uint32_t i = static_cast<uint32_t>(m.index_in_a);
            const uint32_t j = static_cast<uint32_t>(m.index_in_b);
            uint32_t w = word_of_prev[i];
            if (w == kInvalidIndex) {
                // Neither side has a word yet: both descriptors found one
                // shared word together.
                w = registry.create();
                registry.join(w, sequence[t - 1].local_descriptors.row(i), t - 1, i);
                word_of_prev[i] = w;
            }
            registry.join(w, sequence[t].local_descriptors.row(j), t, j);
            word_of_cur[j] = w;
        }
        // Frame t-1 is final now: its leftover descriptors become new words.
        finalize_frame(t - 1, word_of_prev);
    }
    finalize_frame(num_frames - 1, word_of_cur);

    // idf over training documents, clamped at zero.
    std::vector<VisualWord> words(registry.size());
    for (uint32_t w = 0; w < registry.size(); ++w) {
        const TrainingWord& tw = registry.word(w);
        words[w].word_id = w;
        words[w].centroid = (tw.sum / double(tw.count)).cast<float>();
        words[w].member_count = tw.count;
        const double idf = std::log(double(num_frames) / (1.0 + double(tw.doc_count)));
        words[w].idf = static_cast<float>(std::max(0.0, idf));
    }

    Vocabulary vocab = build_tree(words, tree_params.k, tree_params.max_levels, seed,
                                  log ? &log->final_word_id : nullptr);
    vocab.training_seed = seed;
    vocab.training_params_hash = hash_params(params, tree_params);
    return vocab;
}

// ---------------------------------------------------------------------------
// Tree construction
// ---------------------------------------------------------------------------

namespace {

using IndexList = std::vector<uint32_t>;

struct TempNode {
    Eigen::VectorXd centroid;
    std::vector<int> children;  // indices into the temp node pool
    int leaf_word = -1;         // index into the input word list, leaves only
};

struct TreeBuilder {
    const std::vector<VisualWord>& words;
    Eigen::MatrixXd points;  // one row per word, double precision for clustering
    uint32_t k;
    uint32_t max_levels;
    Rng rng;
    std::vector<TempNode> pool;

    TreeBuilder(const std::vector<VisualWord>& w, uint32_t k_, uint32_t levels, uint64_t seed)
        : words(w), k(k_), max_levels(levels), rng(seed) {
        points.resize(w.size(), w[0].centroid.size());
        for (size_t i = 0; i < w.size(); ++i)
            points.row(i) = w[i].centroid.cast<double>().transpose();
    }

    Eigen::VectorXd mean_of(const IndexList& set) const {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(points.cols());
        for (uint32_t idx : set) m += points.row(idx).transpose();
        return m / double(set.size());
    }

    // k-means++ seeding followed by Lloyd iterations. Returns the nonempty
    // clusters in seed order; clusters that lose all points are dropped.
    std::vector<IndexList> partition(const IndexList& set) {
        const size_t n = set.size();
        std::vector<Eigen::VectorXd> centers;
        centers.reserve(k);
        centers.push_back(points.row(set[rng.index(n)]).transpose());

        std::vector<double> d2(n);
        auto refresh_d2 = [&](const Eigen::VectorXd& latest) {
            for (size_t i = 0; i < n; ++i) {
                const double d = (points.row(set[i]).transpose() - latest).squaredNorm();
                if (centers.size() == 1 || d < d2[i]) d2[i] = d;
            }
        };
        refresh_d2(centers.back());

        while (centers.size() < k) {
            const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
            if (total <= 0.0) break;  // remaining points coincide with centers
            const double r = rng.real01() * total;
            double cum = 0.0;
            size_t pick = n - 1;
            for (size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum > r) {
                    pick = i;
                    break;
                }
            }
            centers.push_back(points.row(set[pick]).transpose());
            refresh_d2(centers.back());
        }

        std::vector<int> assign(n, 0);
        for (int iter = 0; iter < 50; ++iter) {
            for (size_t i = 0; i < n; ++i) {
                double best = std::numeric_limits<double>::infinity();
                int best_c = 0;
                for (size_t c = 0; c < centers.size(); ++c) {
                    const double d = (points.row(set[i]).transpose() - centers[c]).squaredNorm();
                    if (d < best) {
                        best = d;
                        best_c = static_cast<int>(c);
                    }
                }
                assign[i] = best_c;
            }
            // Recompute centers; drop the ones that went empty.
            std::vector<Eigen::VectorXd> next(centers.size(),
                                              Eigen::VectorXd::Zero(points.cols()));
            std::vector<int> counts(centers.size(), 0);
            for (size_t i = 0; i < n; ++i) {
                next[assign[i]] += points.row(set[i]).transpose();
                ++counts[assign[i]];
            }
            std::vector<Eigen::VectorXd> kept;
            std::vector<int> remap(centers.size(), -1);
            for (size_t c = 0; c < centers.size(); ++c) {
                if (counts[c] == 0) continue;
                remap[c] = static_cast<int>(kept.size());
                kept.push_back(next[c] / double(counts[c]));
            }
            double shift = 0.0;
            if (kept.size() == centers.size()) {
                for (size_t c = 0; c < centers.size(); ++c)
                    shift = std::max(shift, (kept[c] - centers[c]).norm());
            } else {
                shift = std::numeric_limits<double>::infinity();  // keep iterating
            }
            for (size_t i = 0; i < n; ++i) assign[i] = remap[assign[i]];
            centers = std::move(kept);
            if (shift < 1e-6) break;
        }

        std::vector<IndexList> clusters(centers.size());
        for (size_t i = 0; i < n; ++i) clusters[assign[i]].push_back(set[i]);
        clusters.erase(std::remove_if(clusters.begin(), clusters.end(),
                                      [](const IndexList& c) { return c.empty(); }),
                       clusters.end());
        return clusters;
    }

    int make_leaf(uint32_t word_index) {
        TempNode leaf;
        leaf.centroid = points.row(word_index).transpose();
        leaf.leaf_word = static_cast<int>(word_index);
        pool.push_back(std::move(leaf));
        return static_cast<int>(pool.size() - 1);
    }

    // depth is the level of the node being built (root = 0).
    int build(const IndexList& set, uint32_t depth) {
        const int self = static_cast<int>(pool.size());
        pool.emplace_back();
        pool[self].centroid = mean_of(set);

        const bool attach = set.size() <= k || depth + 1 >= max_levels;
        std::vector<IndexList> parts;
        if (!attach) {
            parts = partition(set);
            if (parts.size() <= 1) parts.clear();  // unsplittable (duplicates)
        }

        // make_leaf/build may reallocate the pool, so the child index must be
        // taken before pool[self] is touched again.
        if (attach || parts.empty()) {
            for (uint32_t idx : set) {
                const int leaf = make_leaf(idx);
                pool[self].children.push_back(leaf);
            }
        } else {
            for (const IndexList& part : parts) {
                const int child = build(part, depth + 1);
                pool[self].children.push_back(child);
            }
        }
        return self;
    }
};

}  // namespace

Vocabulary build_tree(const std::vector<VisualWord>& words, uint32_t k, uint32_t max_levels,
                      uint64_t seed, std::vector<uint32_t>* final_word_id) {
    if (words.empty()) throw NoWords("cannot build a vocabulary from zero words");
    if (k < 2) throw InvariantViolation("branching factor must be at least 2");
    for (const VisualWord& w : words) {
        if (w.centroid.size() != words[0].centroid.size())
            throw DimensionMismatch("word centroids have mixed dims");
        if (!w.centroid.allFinite())
            throw InvariantViolation("word centroid contains non-finite values");
    }

    TreeBuilder builder(words, k, std::max(1u, max_levels), seed);
    IndexList all(words.size());
    std::iota(all.begin(), all.end(), 0u);
    const int root = builder.build(all, 0);

    // Flatten breadth-first; children of each node stay contiguous.
    std::vector<int> order;
    order.push_back(root);
    for (size_t head = 0; head < order.size(); ++head)
        for (int child : builder.pool[order[head]].children) order.push_back(child);

    std::vector<uint32_t> pool_to_flat(builder.pool.size());
    for (size_t i = 0; i < order.size(); ++i) pool_to_flat[order[i]] = static_cast<uint32_t>(i);

    const uint32_t dim = static_cast<uint32_t>(words[0].centroid.size());
    DescriptorMatrix centroids(order.size(), dim);
    std::vector<VocabNode> nodes(order.size());
    if (final_word_id) final_word_id->assign(words.size(), kInvalidIndex);

    uint32_t next_word = 0;
    for (size_t flat = 0; flat < order.size(); ++flat) {
        const TempNode& src = builder.pool[order[flat]];
        VocabNode& dst = nodes[flat];
        centroids.row(flat) = src.centroid.cast<float>().transpose();
        if (src.leaf_word >= 0) {
            dst.is_leaf = true;
            dst.word_id = next_word++;
            dst.idf = words[src.leaf_word].idf;
            if (final_word_id) (*final_word_id)[src.leaf_word] = dst.word_id;
        } else {
            dst.first_child = pool_to_flat[src.children.front()];
            dst.num_children = static_cast<uint32_t>(src.children.size());
            for (int child : src.children)
                nodes[pool_to_flat[child]].parent = static_cast<uint32_t>(flat);
        }
    }

    return Vocabulary(k, std::move(centroids), std::move(nodes));
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(uint32_t branching, DescriptorMatrix centroids,
                       std::vector<VocabNode> nodes)
    : branching_(branching), centroids_(std::move(centroids)), nodes_(std::move(nodes)) {
    index_leaves();
}

void Vocabulary::index_leaves() {
    leaf_nodes_.clear();
    for (uint32_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_leaf) {
            if (nodes_[i].word_id != leaf_nodes_.size())
                throw InvariantViolation("leaf word ids not dense in BFS order");
            leaf_nodes_.push_back(i);
        }
    }
}

uint32_t Vocabulary::quantize(const Eigen::Ref<const Eigen::RowVectorXf>& descriptor) const {
    return quantize_trace(descriptor, nullptr);
}

uint32_t Vocabulary::quantize_trace(const Eigen::Ref<const Eigen::RowVectorXf>& descriptor,
                                    std::vector<uint32_t>* visited) const {
    if (empty()) throw EmptyVocabulary("quantize on an empty vocabulary");
    if (descriptor.size() != centroids_.cols())
        throw DimensionMismatch("descriptor dim " + std::to_string(descriptor.size()) +
                                " vs vocabulary dim " + std::to_string(centroids_.cols()));
    uint32_t current = 0;
    if (visited) visited->push_back(current);
    while (!nodes_[current].is_leaf) {
        const VocabNode& n = nodes_[current];
        uint32_t best = n.first_child;
        float best_d2 = (descriptor - centroids_.row(best)).squaredNorm();
        for (uint32_t c = 1; c < n.num_children; ++c) {
            const uint32_t child = n.first_child + c;
            const float d2 = (descriptor - centroids_.row(child)).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best = child;
            }
        }
        current = best;
        if (visited) visited->push_back(current);
    }
    return nodes_[current].word_id;
}

VisualVector compute_visual_vector(const FrameFeatures& frame, const Vocabulary& vocab,
                                   Weighting weighting) {
    VisualVector v;
    const int total = frame.num_keypoints();
    if (total == 0) return v;
    if (frame.local_dim() != static_cast<int>(vocab.descriptor_dim()))
        throw DimensionMismatch("frame descriptor dim does not match vocabulary");

    std::vector<uint32_t> counts(vocab.num_words(), 0);
    std::vector<uint32_t> touched;
    for (int i = 0; i < total; ++i) {
        const uint32_t w = vocab.quantize(frame.local_descriptors.row(i));
        if (counts[w]++ == 0) touched.push_back(w);
    }
    std::sort(touched.begin(), touched.end());

    double sum = 0.0;
    for (const uint32_t w : touched) {
        const double tf = double(counts[w]) / double(total);
        const double weight = (weighting == Weighting::kTfIdf) ? tf * vocab.word_idf(w) : tf;
        if (weight > 0.0) {
            v.entries.emplace_back(w, weight);
            sum += weight;
        }
    }
    if (sum <= 0.0) {
        v.entries.clear();
        return v;
    }
    for (auto& [w, weight] : v.entries) weight /= sum;
    return v;
}

double similarity(const VisualVector& v1, const VisualVector& v2) {
    // Only shared words contribute: |x| + 0 - |x - 0| = 0 for the others.
    double s = 0.0;
    size_t i = 0, j = 0;
    while (i < v1.entries.size() && j < v2.entries.size()) {
        const auto& [w1, a] = v1.entries[i];
        const auto& [w2, b] = v2.entries[j];
        if (w1 < w2) {
            ++i;
        } else if (w2 < w1) {
            ++j;
        } else {
            s += std::abs(a) + std::abs(b) - std::abs(a - b);
            ++i;
            ++j;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
    ByteWriter w;
    w.put_magic(kVocabMagic);
    w.put_u32(kVocabVersion);
    w.put_u32(vocab.descriptor_dim());
    w.put_u32(vocab.branching());
    w.put_u32(vocab.num_nodes());
    w.put_u32(vocab.num_words());
    for (uint32_t i = 0; i < vocab.num_nodes(); ++i) {
        const VocabNode& n = vocab.node(i);
        w.put_u32(n.parent);
        w.put_u32(n.first_child);
        w.put_u32(n.num_children);
        w.put_u8(n.is_leaf ? 1 : 0);
        w.put_f32(n.is_leaf ? n.idf : 0.f);
        w.put_f32_array(vocab.node_centroid(i).data(), vocab.descriptor_dim());
    }
    write_file_bytes(path, w.bytes());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    if (!r.check_magic(kVocabMagic)) throw BadMagic(path.string() + ": not a vocabulary file");
    const uint32_t version = r.get_u32();
    if (version != kVocabVersion)
        throw VersionMismatch(path.string() + ": vocabulary version " + std::to_string(version));
    const uint32_t dim = r.get_u32();
    const uint32_t k = r.get_u32();
    const uint32_t num_nodes = r.get_u32();
    const uint32_t num_words = r.get_u32();
    if (num_nodes == 0) throw CorruptPayload(path.string() + ": vocabulary with zero nodes");

    // Header is 24 bytes; each node stores parent, first_child, num_children
    // (u32 each), is_leaf (u8), idf (f32) and the centroid (f32 x dim).
    const size_t expected = 24 + size_t(num_nodes) * (17 + size_t(dim) * 4);
    if (bytes.size() != expected)
        throw CorruptPayload(path.string() + ": size mismatch (" + std::to_string(bytes.size()) +
                             " vs expected " + std::to_string(expected) + ")");

    DescriptorMatrix centroids(num_nodes, dim);
    std::vector<VocabNode> nodes(num_nodes);
    uint32_t next_word = 0;
    for (uint32_t i = 0; i < num_nodes; ++i) {
        VocabNode& n = nodes[i];
        n.parent = r.get_u32();
        n.first_child = r.get_u32();
        n.num_children = r.get_u32();
        n.is_leaf = r.get_u8() != 0;
        n.idf = r.get_f32();
        r.get_f32_array(centroids.row(i).data(), dim);
        if (n.is_leaf) n.word_id = next_word++;
    }
    if (next_word != num_words)
        throw CorruptPayload(path.string() + ": leaf count disagrees with header");

    // Structural sanity: BFS layout, contiguous children, consistent links.
    if (nodes[0].parent != kInvalidIndex)
        throw CorruptPayload(path.string() + ": root parent link invalid");
    for (uint32_t i = 0; i < num_nodes; ++i) {
        const VocabNode& n = nodes[i];
        if (n.is_leaf) {
            if (n.num_children != 0)
                throw CorruptPayload(path.string() + ": leaf with children");
        } else {
            if (n.num_children == 0)
                throw CorruptPayload(path.string() + ": internal node without children");
            if (n.first_child <= i || size_t(n.first_child) + n.num_children > num_nodes)
                throw CorruptPayload(path.string() + ": child range out of bounds");
        }
        if (i > 0) {
            if (n.parent >= i) throw CorruptPayload(path.string() + ": parent link not BFS");
            const VocabNode& p = nodes[n.parent];
            if (p.is_leaf || i < p.first_child || i >= p.first_child + p.num_children)
                throw CorruptPayload(path.string() + ": node not within its parent's range");
        }
    }

    return Vocabulary(k, std::move(centroids), std::move(nodes));
}

}  // namespace placerec
