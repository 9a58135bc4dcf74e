#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "codir/encoder.hpp"
#include "codir/sampling.hpp"

namespace codir {

class Vocab {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kCls = 2;
    static constexpr std::size_t kSep = 3;
    static constexpr std::size_t kMask = 4;
    static constexpr std::size_t kNumSpecial = 5;

    Vocab();

    std::size_t add(const std::string& token);
    std::size_t id(const std::string& token) const;  // kUnk when absent
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::string& token(std::size_t id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    // Token per line, reserved tokens first.
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    static std::vector<std::size_t> special_ids() { return {kPad, kUnk, kCls, kSep, kMask}; }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Lowercased whitespace tokens mapped through `vocab`, prefixed with [CLS].
std::vector<std::size_t> tokenize(const std::string& text, const Vocab& vocab);
// Inverse of tokenize for known tokens; drops [CLS] and [PAD].
std::string detokenize(std::span<const std::size_t> ids, const Vocab& vocab);
std::string normalize_text(const std::string& text);

struct Example {
    std::vector<std::size_t> ids;  // [CLS]-prefixed
    std::optional<std::size_t> label;
    std::size_t index = 0;     // stable dataset index
    std::size_t document = 0;  // source document (pretraining corpora)

    std::size_t valid_len() const { return ids.size(); }
};

struct Dataset {
    std::vector<Example> examples;
    std::size_t num_classes = 0;  // 0 for unlabeled corpora
    Vocab vocab;

    std::size_t size() const { return examples.size(); }
    std::vector<std::size_t> labels() const;
};

// Lines "label<TAB>sentence[<TAB>sentence2]" with integer labels. When
// `vocab` is null a vocabulary is built from the file. Pair inputs are
// encoded as [CLS] s1 [SEP] s2.
Dataset load_tsv_classification(const std::string& path, const Vocab* vocab = nullptr, std::size_t max_len = 512,
                                std::size_t expected_classes = 0);
void save_tsv_classification(const Dataset& dataset, const std::string& path);
// One whitespace sentence per line, blank lines separating documents.
void save_corpus(const Dataset& dataset, const std::string& path);
Dataset load_corpus(const std::string& path, const Vocab* vocab = nullptr, std::size_t max_len = 512);

enum class SyntheticKind { Classification, Corpus };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::Classification;
    std::size_t num_classes = 2;
    std::size_t filler_tokens = 24;
    std::size_t markers_per_class = 2;
    std::size_t cues_per_class = 3;
    double marker_prob = 0.9;
    // Probability that a stored label is replaced by a different class after
    // the sentence is generated.
    double label_noise = 0.0;
    std::size_t min_len = 6;  // words, excluding [CLS]
    std::size_t max_len = 12;
    bool pair = false;
    // Corpus only.
    std::size_t num_topics = 4;
    std::size_t topic_tokens = 6;
    std::size_t sentences_per_doc = 8;
    double topic_prob = 0.5;

    void validate() const;
    static SyntheticSpec from_map(const std::map<std::string, std::string>& values);
    std::map<std::string, std::string> to_map() const;
};

// Deterministic vocabulary shared by every dataset generated from `spec`.
Vocab synthetic_vocab(const SyntheticSpec& spec);
Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed);

// Rule-based reference classifier: argmax over per-class marker counts,
// ties broken toward the lowest class.
std::size_t marker_count_predict(const Example& example, const SyntheticSpec& spec, const Vocab& vocab);

struct Batch {
    TokenBatch tokens;
    std::vector<std::size_t> indices;
    std::vector<std::size_t> labels;
    // Pretraining only: masked row positions in [batch*seq_len] space and their targets.
    std::vector<std::size_t> mask_rows;
    std::vector<std::size_t> mask_targets;
};

// Pads the selected examples to the longest one in the batch.
Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
// Replaces tokens according to per-example masking plans drawn from `rng`.
void apply_masking(Batch& batch, const MaskingOptions& options, std::mt19937_64& rng);

enum class BatchOrder { Shuffled, Contiguous };

// Partition of {0..n-1} into batches. Contiguous keeps consecutive indices
// together (only the batch order is shuffled); Shuffled permutes everything.
std::vector<std::vector<std::size_t>> make_epoch_batches(std::size_t n, std::size_t batch_size, BatchOrder order,
                                                         std::mt19937_64& rng);

// Bounded FIFO handoff between a producer and a consumer thread.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

    // Blocks while full. Returns false if the queue was closed.
    bool push(T item) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
        if (closed_) return false;
        items_.push_back(std::move(item));
        not_empty_.notify_one();
        return true;
    }

    // Blocks while empty; std::nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable not_full_, not_empty_;
    std::deque<T> items_;
    bool closed_ = false;
};

}  // namespace codir
