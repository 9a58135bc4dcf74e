#include "codir/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include "codir/error.hpp"

namespace codir {

Vocab::Vocab() {
    for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add(t);
}

std::size_t Vocab::add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    tokens_.push_back(token);
    index_.emplace(token, tokens_.size() - 1);
    return tokens_.size() - 1;
}

std::size_t Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
    if (id >= tokens_.size()) fail(ErrorKind::Bounds, "token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[id];
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write vocabulary to " + path);
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read vocabulary " + path);
    Vocab vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no < kNumSpecial) {
            if (line != vocab.tokens_[line_no]) {
                fail(ErrorKind::Format, path + ":" + std::to_string(line_no + 1) + ": expected reserved token " +
                                            vocab.tokens_[line_no]);
            }
        } else {
            if (line.empty()) fail(ErrorKind::Format, path + ":" + std::to_string(line_no + 1) + ": empty token");
            if (vocab.contains(line)) fail(ErrorKind::Format, path + ": duplicate token " + line);
            vocab.add(line);
        }
        ++line_no;
    }
    if (line_no < kNumSpecial) fail(ErrorKind::Format, path + ": missing reserved tokens");
    return vocab;
}

std::string normalize_text(const std::string& text) {
    std::istringstream in(text);
    std::string word, out;
    while (in >> word) {
        std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return std::tolower(c); });
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(normalize_text(text));
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

}  // namespace

std::vector<std::size_t> tokenize(const std::string& text, const Vocab& vocab) {
    const auto words = split_words(text);
    if (words.empty()) fail(ErrorKind::Input, "cannot tokenize empty text");
    std::vector<std::size_t> ids{Vocab::kCls};
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
}

std::string detokenize(std::span<const std::size_t> ids, const Vocab& vocab) {
    std::string out;
    for (std::size_t id : ids) {
        if (id == Vocab::kCls || id == Vocab::kPad) continue;
        if (!out.empty()) out += ' ';
        out += vocab.token(id);
    }
    return out;
}

std::vector<std::size_t> Dataset::labels() const {
    std::vector<std::size_t> out;
    out.reserve(examples.size());
    for (const auto& e : examples) {
        if (!e.label) fail(ErrorKind::State, "dataset example " + std::to_string(e.index) + " has no label");
        out.push_back(*e.label);
    }
    return out;
}

Dataset load_tsv_classification(const std::string& path, const Vocab* vocab, std::size_t max_len,
                                std::size_t expected_classes) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read " + path);

    struct Row {
        std::size_t label;
        std::vector<std::string> sentences;
    };
    std::vector<Row> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        const std::string where = path + ":" + std::to_string(line_no);
        if (fields.size() < 2 || fields.size() > 3) {
            fail(ErrorKind::Format, where + ": expected label<TAB>sentence[<TAB>sentence2]");
        }
        Row row;
        const std::string& label_text = fields[0];
        if (label_text.empty() || !std::all_of(label_text.begin(), label_text.end(), ::isdigit)) {
            fail(ErrorKind::Format, where + ": label '" + label_text + "' is not a non-negative integer");
        }
        row.label = std::stoul(label_text);
        if (expected_classes > 0 && row.label >= expected_classes) {
            fail(ErrorKind::Format, where + ": unknown label " + label_text);
        }
        for (std::size_t f = 1; f < fields.size(); ++f) {
            if (split_words(fields[f]).empty()) fail(ErrorKind::Format, where + ": empty sentence");
            row.sentences.push_back(fields[f]);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) fail(ErrorKind::Input, path + ": empty dataset");

    Dataset ds;
    if (vocab) {
        ds.vocab = *vocab;
    } else {
        for (const auto& r : rows)
            for (const auto& s : r.sentences)
                for (const auto& w : split_words(s)) ds.vocab.add(w);
    }
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Example ex;
        ex.index = i;
        ex.label = rows[i].label;
        max_label = std::max(max_label, rows[i].label);
        ex.ids = tokenize(rows[i].sentences[0], ds.vocab);
        if (rows[i].sentences.size() == 2) {
            ex.ids.push_back(Vocab::kSep);
            for (const auto& w : split_words(rows[i].sentences[1])) ex.ids.push_back(ds.vocab.id(w));
        }
        if (ex.ids.size() > max_len) {
            fail(ErrorKind::Input, path + ": example " + std::to_string(i) + " has " + std::to_string(ex.ids.size()) +
                                       " tokens, more than max_len " + std::to_string(max_len));
        }
        ds.examples.push_back(std::move(ex));
    }
    ds.num_classes = expected_classes > 0 ? expected_classes : std::max<std::size_t>(max_label + 1, 2);
    return ds;
}

namespace {

std::string sentence_text(std::span<const std::size_t> ids, const Vocab& vocab) {
    std::string out;
    for (std::size_t id : ids) {
        if (id == Vocab::kCls || id == Vocab::kPad) continue;
        if (id == Vocab::kSep) {
            out += '\t';
            continue;
        }
        if (!out.empty() && out.back() != '\t') out += ' ';
        out += vocab.token(id);
    }
    return out;
}

}  // namespace

void save_tsv_classification(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    for (const auto& ex : dataset.examples) {
        if (!ex.label) fail(ErrorKind::State, "save_tsv_classification: unlabeled example");
        out << *ex.label << '\t' << sentence_text(ex.ids, dataset.vocab) << '\n';
    }
}

void save_corpus(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& ex = dataset.examples[i];
        if (i > 0 && ex.document != dataset.examples[i - 1].document) out << '\n';
        out << detokenize(ex.ids, dataset.vocab) << '\n';
    }
}

Dataset load_corpus(const std::string& path, const Vocab* vocab, std::size_t max_len) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read " + path);
    std::vector<std::pair<std::size_t, std::string>> lines;
    std::string line;
    std::size_t doc = 0;
    bool in_doc = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (split_words(line).empty()) {
            if (in_doc) ++doc;
            in_doc = false;
            continue;
        }
        in_doc = true;
        lines.emplace_back(doc, line);
    }
    if (lines.empty()) fail(ErrorKind::Input, path + ": empty corpus");
    Dataset ds;
    if (vocab) {
        ds.vocab = *vocab;
    } else {
        for (const auto& [d, text] : lines)
            for (const auto& w : split_words(text)) ds.vocab.add(w);
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        Example ex;
        ex.index = i;
        ex.document = lines[i].first;
        ex.ids = tokenize(lines[i].second, ds.vocab);
        if (ex.ids.size() > max_len) {
            fail(ErrorKind::Input, path + ": sentence " + std::to_string(i) + " exceeds max_len " + std::to_string(max_len));
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data.

namespace {

std::size_t get_size(const std::map<std::string, std::string>& m, const std::string& key, std::size_t fallback) {
    auto it = m.find(key);
    if (it == m.end()) return fallback;
    try {
        return std::stoul(it->second);
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "invalid integer for " + key + ": '" + it->second + "'");
    }
}

double get_double(const std::map<std::string, std::string>& m, const std::string& key, double fallback) {
    auto it = m.find(key);
    if (it == m.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "invalid number for " + key + ": '" + it->second + "'");
    }
}

std::string filler_token(std::size_t i) { return "w" + std::to_string(i); }
std::string marker_token(std::size_t c, std::size_t j) { return "m" + std::to_string(c) + "x" + std::to_string(j); }
std::string cue_token(std::size_t c, std::size_t j) { return "c" + std::to_string(c) + "x" + std::to_string(j); }
std::string topic_token(std::size_t t, std::size_t j) { return "t" + std::to_string(t) + "x" + std::to_string(j); }

}  // namespace

void SyntheticSpec::validate() const {
    if (kind == SyntheticKind::Classification) {
        if (num_classes < 2) fail(ErrorKind::Parameter, "synthetic classification needs at least 2 classes");
        if (markers_per_class < 1 || cues_per_class < 1) fail(ErrorKind::Parameter, "markers and cues must be >= 1");
        if (!(marker_prob >= 0.0 && marker_prob <= 1.0)) fail(ErrorKind::Parameter, "marker_prob must lie in [0, 1]");
        if (!(label_noise >= 0.0 && label_noise < 1.0)) fail(ErrorKind::Parameter, "label_noise must lie in [0, 1)");
        if (min_len < 3) fail(ErrorKind::Parameter, "classification sentences need at least 3 words");
    } else {
        if (num_topics < 1 || topic_tokens < 1 || sentences_per_doc < 1) {
            fail(ErrorKind::Parameter, "corpus spec needs topics, topic tokens and sentences per document");
        }
        if (!(topic_prob >= 0.0 && topic_prob <= 1.0)) fail(ErrorKind::Parameter, "topic_prob must lie in [0, 1]");
        if (min_len < 1) fail(ErrorKind::Parameter, "min_len must be >= 1");
    }
    if (filler_tokens < 1) fail(ErrorKind::Parameter, "filler_tokens must be >= 1");
    if (max_len < min_len) fail(ErrorKind::Parameter, "max_len must be >= min_len");
}

SyntheticSpec SyntheticSpec::from_map(const std::map<std::string, std::string>& values) {
    SyntheticSpec s;
    if (auto it = values.find("kind"); it != values.end()) {
        if (it->second == "classification") s.kind = SyntheticKind::Classification;
        else if (it->second == "corpus") s.kind = SyntheticKind::Corpus;
        else fail(ErrorKind::Config, "unknown synthetic kind '" + it->second + "'");
    }
    s.num_classes = get_size(values, "num_classes", s.num_classes);
    s.filler_tokens = get_size(values, "filler_tokens", s.filler_tokens);
    s.markers_per_class = get_size(values, "markers_per_class", s.markers_per_class);
    s.cues_per_class = get_size(values, "cues_per_class", s.cues_per_class);
    s.marker_prob = get_double(values, "marker_prob", s.marker_prob);
    s.label_noise = get_double(values, "label_noise", s.label_noise);
    s.min_len = get_size(values, "min_len", s.min_len);
    s.max_len = get_size(values, "max_len", s.max_len);
    if (auto it = values.find("pair"); it != values.end()) s.pair = it->second == "true" || it->second == "1";
    s.num_topics = get_size(values, "num_topics", s.num_topics);
    s.topic_tokens = get_size(values, "topic_tokens", s.topic_tokens);
    s.sentences_per_doc = get_size(values, "sentences_per_doc", s.sentences_per_doc);
    s.topic_prob = get_double(values, "topic_prob", s.topic_prob);
    return s;
}

std::map<std::string, std::string> SyntheticSpec::to_map() const {
    return {
        {"kind", kind == SyntheticKind::Classification ? "classification" : "corpus"},
        {"num_classes", std::to_string(num_classes)},
        {"filler_tokens", std::to_string(filler_tokens)},
        {"markers_per_class", std::to_string(markers_per_class)},
        {"cues_per_class", std::to_string(cues_per_class)},
        {"marker_prob", std::to_string(marker_prob)},
        {"label_noise", std::to_string(label_noise)},
        {"min_len", std::to_string(min_len)},
        {"max_len", std::to_string(max_len)},
        {"pair", pair ? "true" : "false"},
        {"num_topics", std::to_string(num_topics)},
        {"topic_tokens", std::to_string(topic_tokens)},
        {"sentences_per_doc", std::to_string(sentences_per_doc)},
        {"topic_prob", std::to_string(topic_prob)},
    };
}

Vocab synthetic_vocab(const SyntheticSpec& spec) {
    Vocab vocab;
    for (std::size_t i = 0; i < spec.filler_tokens; ++i) vocab.add(filler_token(i));
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t j = 0; j < spec.markers_per_class; ++j) vocab.add(marker_token(c, j));
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t j = 0; j < spec.cues_per_class; ++j) vocab.add(cue_token(c, j));
    for (std::size_t t = 0; t < spec.num_topics; ++t)
        for (std::size_t j = 0; j < spec.topic_tokens; ++j) vocab.add(topic_token(t, j));
    return vocab;
}

namespace {

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::vector<std::size_t> filler_words(const SyntheticSpec& spec, const Vocab& vocab, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
    std::vector<std::size_t> words(len_dist(rng));
    for (auto& w : words) w = vocab.id(filler_token(uniform_index(spec.filler_tokens, rng)));
    return words;
}

// A labeled sentence: with probability marker_prob one class marker;
// otherwise two cues of the class and one cue of another class.
std::vector<std::size_t> class_sentence(std::size_t label, const SyntheticSpec& spec, const Vocab& vocab,
                                        std::mt19937_64& rng) {
    std::vector<std::size_t> words = filler_words(spec, vocab, rng);
    std::vector<std::size_t> slots(words.size());
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);
    std::bernoulli_distribution has_marker(spec.marker_prob);
    if (has_marker(rng)) {
        words[slots[0]] = vocab.id(marker_token(label, uniform_index(spec.markers_per_class, rng)));
    } else {
        std::size_t other = uniform_index(spec.num_classes - 1, rng);
        if (other >= label) ++other;
        words[slots[0]] = vocab.id(cue_token(label, uniform_index(spec.cues_per_class, rng)));
        words[slots[1]] = vocab.id(cue_token(label, uniform_index(spec.cues_per_class, rng)));
        words[slots[2]] = vocab.id(cue_token(other, uniform_index(spec.cues_per_class, rng)));
    }
    return words;
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, std::size_t n, std::uint64_t seed) {
    spec.validate();
    if (n < 2) fail(ErrorKind::Parameter, "synthetic datasets need n >= 2");
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.vocab = synthetic_vocab(spec);

    if (spec.kind == SyntheticKind::Classification) {
        ds.num_classes = spec.num_classes;
        std::vector<std::size_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = i % spec.num_classes;
        std::shuffle(labels.begin(), labels.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            Example ex;
            ex.index = i;
            ex.label = labels[i];
            ex.ids.push_back(Vocab::kCls);
            std::vector<std::size_t> signal = class_sentence(labels[i], spec, ds.vocab, rng);
            if (spec.label_noise > 0.0 && std::bernoulli_distribution(spec.label_noise)(rng)) {
                std::size_t other = uniform_index(spec.num_classes - 1, rng);
                if (other >= labels[i]) ++other;
                ex.label = other;
            }
            if (spec.pair) {
                std::vector<std::size_t> plain = filler_words(spec, ds.vocab, rng);
                const bool signal_first = std::bernoulli_distribution(0.5)(rng);
                const auto& first = signal_first ? signal : plain;
                const auto& second = signal_first ? plain : signal;
                ex.ids.insert(ex.ids.end(), first.begin(), first.end());
                ex.ids.push_back(Vocab::kSep);
                ex.ids.insert(ex.ids.end(), second.begin(), second.end());
            } else {
                ex.ids.insert(ex.ids.end(), signal.begin(), signal.end());
            }
            ds.examples.push_back(std::move(ex));
        }
        return ds;
    }

    std::bernoulli_distribution on_topic(spec.topic_prob);
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
    std::size_t doc = 0, topic = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i % spec.sentences_per_doc == 0) {
            doc = i / spec.sentences_per_doc;
            topic = uniform_index(spec.num_topics, rng);
        }
        Example ex;
        ex.index = i;
        ex.document = doc;
        ex.ids.push_back(Vocab::kCls);
        const std::size_t len = len_dist(rng);
        for (std::size_t w = 0; w < len; ++w) {
            const std::string tok = on_topic(rng) ? topic_token(topic, uniform_index(spec.topic_tokens, rng))
                                                  : filler_token(uniform_index(spec.filler_tokens, rng));
            ex.ids.push_back(ds.vocab.id(tok));
        }
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::size_t marker_count_predict(const Example& example, const SyntheticSpec& spec, const Vocab& vocab) {
    std::vector<std::size_t> counts(spec.num_classes, 0);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t j = 0; j < spec.markers_per_class; ++j) {
            const std::size_t id = vocab.id(marker_token(c, j));
            counts[c] += static_cast<std::size_t>(std::count(example.ids.begin(), example.ids.end(), id));
        }
    }
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

// ---------------------------------------------------------------------------
// Batching.

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    if (indices.empty()) fail(ErrorKind::Input, "make_batch: no indices");
    Batch batch;
    batch.indices.assign(indices.begin(), indices.end());
    std::size_t longest = 0;
    for (std::size_t i : indices) {
        if (i >= dataset.size()) fail(ErrorKind::Bounds, "make_batch: index " + std::to_string(i) + " out of range");
        longest = std::max(longest, dataset.examples[i].ids.size());
    }
    TokenBatch& tb = batch.tokens;
    tb.batch = indices.size();
    tb.seq_len = longest;
    tb.ids.assign(tb.batch * longest, Vocab::kPad);
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const Example& ex = dataset.examples[indices[b]];
        std::copy(ex.ids.begin(), ex.ids.end(), tb.ids.begin() + static_cast<std::ptrdiff_t>(b * longest));
        tb.valid_lens.push_back(ex.ids.size());
        if (ex.label) batch.labels.push_back(*ex.label);
    }
    if (!batch.labels.empty() && batch.labels.size() != indices.size()) {
        fail(ErrorKind::State, "make_batch: mixed labeled and unlabeled examples");
    }
    return batch;
}

void apply_masking(Batch& batch, const MaskingOptions& options, std::mt19937_64& rng) {
    TokenBatch& tb = batch.tokens;
    batch.mask_rows.clear();
    batch.mask_targets.clear();
    for (std::size_t b = 0; b < tb.batch; ++b) {
        auto begin = tb.ids.begin() + static_cast<std::ptrdiff_t>(b * tb.seq_len);
        std::span<const std::size_t> tokens(&*begin, tb.valid_lens[b]);
        MaskingPlan plan = make_masking_plan(tokens, options, rng);
        std::copy(plan.masked_tokens.begin(), plan.masked_tokens.end(), begin);
        for (std::size_t i = 0; i < plan.positions.size(); ++i) {
            batch.mask_rows.push_back(b * tb.seq_len + plan.positions[i]);
            batch.mask_targets.push_back(plan.targets[i]);
        }
    }
}

std::vector<std::vector<std::size_t>> make_epoch_batches(std::size_t n, std::size_t batch_size, BatchOrder order,
                                                         std::mt19937_64& rng) {
    if (batch_size == 0) fail(ErrorKind::Parameter, "batch size must be >= 1");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    if (order == BatchOrder::Shuffled) std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (order == BatchOrder::Contiguous) std::shuffle(batches.begin(), batches.end(), rng);
    return batches;
}

}  // namespace codir
