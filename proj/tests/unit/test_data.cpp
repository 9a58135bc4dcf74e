#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "codir/data.hpp"
#include "codir/error.hpp"

using namespace codir;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::State;
}

std::string error_text(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() / ("codir_test_data_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path / name;
        std::ofstream(p) << content;
        return p.string();
    }
};

bool same_examples(const Dataset& a, const Dataset& b) {
    if (a.size() != b.size() || a.num_classes != b.num_classes || !(a.vocab == b.vocab)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto &x = a.examples[i], &y = b.examples[i];
        if (x.ids != y.ids || x.label != y.label || x.index != y.index || x.document != y.document) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("vocab reserves special ids") {
    Vocab v;
    CHECK(v.size() == Vocab::kNumSpecial);
    CHECK(v.token(Vocab::kPad) == "[PAD]");
    CHECK(v.token(Vocab::kMask) == "[MASK]");
    CHECK(v.token(Vocab::kCls) == "[CLS]");
    CHECK(v.token(Vocab::kSep) == "[SEP]");
    CHECK(v.token(Vocab::kUnk) == "[UNK]");
    const std::size_t a = v.add("alpha");
    CHECK(a == Vocab::kNumSpecial);
    CHECK(v.add("alpha") == a);
    CHECK(v.id("missing") == Vocab::kUnk);
    CHECK(kind_of([&] { v.token(99); }) == ErrorKind::Bounds);
}

TEST_CASE("vocab save and load round trip") {
    TempDir dir;
    Vocab v;
    for (const char* t : {"the", "cat", "sat"}) v.add(t);
    const std::string path = (dir.path / "vocab.txt").string();
    v.save(path);
    const Vocab w = Vocab::load(path);
    CHECK(w == v);
    CHECK(w.id("cat") == v.id("cat"));
    CHECK(kind_of([&] { Vocab::load(dir.file("bad.txt", "[PAD]\nfoo\n")); }) == ErrorKind::Format);
    CHECK(kind_of([&] { Vocab::load((dir.path / "none.txt").string()); }) == ErrorKind::Io);
}

TEST_CASE("tokenize examples") {
    Vocab v;
    const std::size_t a = v.add("a");
    CHECK(kind_of([&] { tokenize("", v); }) == ErrorKind::Input);
    CHECK(kind_of([&] { tokenize("   \t ", v); }) == ErrorKind::Input);
    CHECK(tokenize("a a a", v) == std::vector<std::size_t>{Vocab::kCls, a, a, a});
    CHECK(tokenize("A  zebra", v) == std::vector<std::size_t>{Vocab::kCls, a, Vocab::kUnk});
}

TEST_CASE("tokenize round trip over a corpus") {
    std::mt19937_64 rng(3);
    const std::vector<std::string> words = {"Alpha", "beta", "GAMMA", "delta", "eps", "zeta", "Eta"};
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1), len(1, 9);
    Vocab v;
    for (const auto& w : words) v.add(normalize_text(w));
    for (int line = 0; line < 100; ++line) {
        std::string text;
        const std::size_t n = len(rng);
        for (std::size_t i = 0; i < n; ++i) text += (i ? (i % 3 ? " " : "   ") : "") + words[pick(rng)];
        CHECK(detokenize(tokenize(text, v), v) == normalize_text(text));
    }
}

TEST_CASE("TSV loading examples") {
    TempDir dir;
    CHECK(kind_of([&] { load_tsv_classification(dir.file("empty.tsv", "")); }) == ErrorKind::Input);

    const Dataset ds = load_tsv_classification(dir.file("two.tsv", "0\tthe cat\n1\ta dog runs\n"));
    CHECK(ds.size() == 2);
    CHECK(ds.num_classes == 2);
    CHECK(ds.examples[0].index == 0);
    CHECK(ds.examples[1].label == 1u);
    CHECK(ds.examples[1].ids.size() == 4);

    const Dataset pair = load_tsv_classification(dir.file("pair.tsv", "1\tleft side\tright\n"));
    CHECK(pair.examples[0].ids ==
          std::vector<std::size_t>{Vocab::kCls, pair.vocab.id("left"), pair.vocab.id("side"), Vocab::kSep,
                                   pair.vocab.id("right")});
}

TEST_CASE("TSV errors name the line") {
    TempDir dir;
    const std::string bad = dir.file("bad.tsv", "0\tfine\n0 no tab here\n");
    CHECK(kind_of([&] { load_tsv_classification(bad); }) == ErrorKind::Format);
    CHECK(error_text([&] { load_tsv_classification(bad); }).find("bad.tsv:2") != std::string::npos);
    const std::string label = dir.file("label.tsv", "0\tfine\nx\tword\n");
    CHECK(error_text([&] { load_tsv_classification(label); }).find("label.tsv:2") != std::string::npos);
    const std::string unknown = dir.file("unknown.tsv", "0\tfine\n1\tok\n5\tword\n");
    CHECK(kind_of([&] { load_tsv_classification(unknown, nullptr, 512, 2); }) == ErrorKind::Format);
    CHECK(error_text([&] { load_tsv_classification(unknown, nullptr, 512, 2); }).find("unknown.tsv:3") !=
          std::string::npos);
    const std::string long_line = dir.file("long.tsv", "0\ta b c d e f\n");
    CHECK(kind_of([&] { load_tsv_classification(long_line, nullptr, 4); }) == ErrorKind::Input);
    CHECK(kind_of([&] { load_tsv_classification((dir.path / "missing.tsv").string()); }) == ErrorKind::Io);
}

TEST_CASE("shuffled TSV gives the same multiset of examples") {
    TempDir dir;
    std::vector<std::string> lines;
    for (int i = 0; i < 30; ++i) lines.push_back(std::to_string(i % 3) + "\tw" + std::to_string(i % 7) + " x" + std::to_string(i));
    std::string original, shuffled;
    for (const auto& l : lines) original += l + "\n";
    std::vector<std::string> perm = lines;
    std::mt19937_64 rng(5);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (const auto& l : perm) shuffled += l + "\n";

    const Dataset a = load_tsv_classification(dir.file("a.tsv", original));
    const Dataset b = load_tsv_classification(dir.file("b.tsv", shuffled), &a.vocab);
    auto key = [](const Example& e) { return std::pair{*e.label, e.ids}; };
    std::multiset<std::pair<std::size_t, std::vector<std::size_t>>> ma, mb;
    for (const auto& e : a.examples) ma.insert(key(e));
    for (const auto& e : b.examples) mb.insert(key(e));
    CHECK(ma == mb);
    bool index_moved = false;
    for (std::size_t i = 0; i < a.size(); ++i) index_moved |= key(a.examples[i]) != key(b.examples[i]);
    CHECK(index_moved);
}

TEST_CASE("TSV and corpus save and load") {
    TempDir dir;
    SyntheticSpec spec;
    spec.pair = true;
    const Dataset ds = generate_synthetic(spec, 40, 3);
    const std::string tsv = (dir.path / "ds.tsv").string();
    save_tsv_classification(ds, tsv);
    const Dataset back = load_tsv_classification(tsv, &ds.vocab, 512, ds.num_classes);
    CHECK(same_examples(ds, back));

    SyntheticSpec corpus;
    corpus.kind = SyntheticKind::Corpus;
    const Dataset c = generate_synthetic(corpus, 30, 4);
    const std::string txt = (dir.path / "corpus.txt").string();
    save_corpus(c, txt);
    const Dataset c2 = load_corpus(txt, &c.vocab);
    CHECK(same_examples(c, c2));
}

TEST_CASE("synthetic generation is deterministic") {
    SyntheticSpec spec;
    CHECK(same_examples(generate_synthetic(spec, 200, 9), generate_synthetic(spec, 200, 9)));
    CHECK_FALSE(same_examples(generate_synthetic(spec, 200, 9), generate_synthetic(spec, 200, 10)));
    spec.kind = SyntheticKind::Corpus;
    CHECK(same_examples(generate_synthetic(spec, 200, 9), generate_synthetic(spec, 200, 9)));
}

TEST_CASE("synthetic spec errors") {
    SyntheticSpec spec;
    spec.num_classes = 1;
    CHECK(kind_of([&] { generate_synthetic(spec, 10, 1); }) == ErrorKind::Parameter);
    spec = {};
    CHECK(kind_of([&] { generate_synthetic(spec, 1, 1); }) == ErrorKind::Parameter);
    spec.label_noise = 1.0;
    CHECK(kind_of([&] { generate_synthetic(spec, 10, 1); }) == ErrorKind::Parameter);
    CHECK(kind_of([] { SyntheticSpec::from_map({{"marker_prob", "lots"}}); }) == ErrorKind::Config);
}

TEST_CASE("synthetic spec map round trip") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.marker_prob = 0.625;
    spec.label_noise = 0.25;
    spec.pair = true;
    const SyntheticSpec back = SyntheticSpec::from_map(spec.to_map());
    CHECK(back.to_map() == spec.to_map());
    CHECK(back.label_noise == 0.25);
}

TEST_CASE("marker-count rule and label balance") {
    for (std::size_t classes : {2, 3, 4}) {
        SyntheticSpec spec;
        spec.num_classes = classes;
        const Dataset ds = generate_synthetic(spec, 1000, 21);
        std::size_t correct = 0;
        std::vector<std::size_t> per_class(classes, 0);
        for (const auto& e : ds.examples) {
            correct += marker_count_predict(e, spec, ds.vocab) == *e.label;
            ++per_class[*e.label];
            CHECK(e.ids.front() == Vocab::kCls);
            for (std::size_t id : e.ids) CHECK(id < ds.vocab.size());
        }
        CHECK(correct >= 900);
        for (std::size_t n : per_class) CHECK(std::abs(static_cast<double>(n) / 1000.0 - 1.0 / classes) <= 0.02);
    }
}

TEST_CASE("label noise flips the requested share of labels") {
    SyntheticSpec clean;
    clean.marker_prob = 1.0;
    SyntheticSpec noisy = clean;
    noisy.label_noise = 0.25;
    const Dataset ds = generate_synthetic(noisy, 4000, 2);
    std::size_t disagree = 0;
    for (const auto& e : ds.examples) disagree += marker_count_predict(e, noisy, ds.vocab) != *e.label;
    CHECK(static_cast<double>(disagree) / ds.size() == doctest::Approx(0.25).epsilon(0.1));
    CHECK(synthetic_vocab(noisy) == synthetic_vocab(clean));
}

TEST_CASE("corpus documents share topical tokens") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::Corpus;
    const Dataset ds = generate_synthetic(spec, 400, 6);
    CHECK(ds.num_classes == 0);
    auto overlap = [&](const Example& a, const Example& b) {
        std::set<std::size_t> sa(a.ids.begin() + 1, a.ids.end());
        std::size_t n = 0;
        for (std::size_t id : std::set<std::size_t>(b.ids.begin() + 1, b.ids.end())) n += sa.count(id);
        return static_cast<double>(n);
    };
    double within = 0, across = 0;
    std::size_t nw = 0, na = 0;
    for (std::size_t i = 0; i + 1 < ds.size(); ++i) {
        const auto &a = ds.examples[i], &b = ds.examples[i + 1];
        if (a.document == b.document) {
            within += overlap(a, b);
            ++nw;
        } else {
            across += overlap(a, b);
            ++na;
        }
    }
    CHECK(within / nw > 1.5 * (across / na));
}

TEST_CASE("epoch batches cover every index once") {
    std::mt19937_64 rng(1);
    for (BatchOrder order : {BatchOrder::Shuffled, BatchOrder::Contiguous}) {
        for (std::size_t n : {1, 7, 32, 101}) {
            const auto batches = make_epoch_batches(n, 8, order, rng);
            std::vector<std::size_t> all;
            for (const auto& b : batches) {
                CHECK(b.size() <= 8);
                all.insert(all.end(), b.begin(), b.end());
                if (order == BatchOrder::Contiguous)
                    for (std::size_t i = 1; i < b.size(); ++i) CHECK(b[i] == b[i - 1] + 1);
            }
            std::sort(all.begin(), all.end());
            std::vector<std::size_t> expected(n);
            std::iota(expected.begin(), expected.end(), 0);
            CHECK(all == expected);
        }
    }
    CHECK(kind_of([&] { make_epoch_batches(4, 0, BatchOrder::Shuffled, rng); }) == ErrorKind::Parameter);
}

TEST_CASE("make_batch pads after the valid length") {
    SyntheticSpec spec;
    const Dataset ds = generate_synthetic(spec, 10, 1);
    const std::vector<std::size_t> idx = {3, 7, 1};
    const Batch b = make_batch(ds, idx);
    CHECK(b.indices == idx);
    CHECK(b.labels.size() == 3);
    std::size_t longest = 0;
    for (std::size_t i : idx) longest = std::max(longest, ds.examples[i].ids.size());
    CHECK(b.tokens.seq_len == longest);
    for (std::size_t r = 0; r < 3; ++r) {
        const auto& ex = ds.examples[idx[r]];
        CHECK(b.tokens.valid_lens[r] == ex.ids.size());
        for (std::size_t t = 0; t < longest; ++t) {
            const std::size_t got = b.tokens.ids[r * longest + t];
            CHECK(got == (t < ex.ids.size() ? ex.ids[t] : Vocab::kPad));
        }
    }
    CHECK(kind_of([&] { make_batch(ds, std::vector<std::size_t>{}); }) == ErrorKind::Input);
    CHECK(kind_of([&] { make_batch(ds, std::vector<std::size_t>{10}); }) == ErrorKind::Bounds);
}

TEST_CASE("apply_masking records flat rows and targets") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::Corpus;
    const Dataset ds = generate_synthetic(spec, 8, 3);
    const std::vector<std::size_t> idx = {0, 1, 2, 3};
    Batch b = make_batch(ds, idx);
    const Batch original = b;
    MaskingOptions o;
    o.mask_id = Vocab::kMask;
    o.special_ids = Vocab::special_ids();
    std::mt19937_64 rng(2);
    apply_masking(b, o, rng);
    REQUIRE(b.mask_rows.size() == b.mask_targets.size());
    CHECK(b.mask_rows.size() >= 4);
    for (std::size_t i = 0; i < b.mask_rows.size(); ++i) {
        const std::size_t row = b.mask_rows[i];
        CHECK(b.tokens.ids[row] == Vocab::kMask);
        CHECK(original.tokens.ids[row] == b.mask_targets[i]);
        CHECK(row % b.tokens.seq_len < b.tokens.valid_lens[row / b.tokens.seq_len]);
    }
}

TEST_CASE("bounded queue is FIFO with backpressure") {
    BoundedQueue<int> q(2);
    std::vector<int> got;
    std::atomic<int> max_size{0};
    std::thread producer([&] {
        for (int i = 0; i < 200; ++i) {
            q.push(i);
            max_size = std::max<int>(max_size, static_cast<int>(q.size()));
        }
        q.close();
    });
    while (auto item = q.pop()) got.push_back(*item);
    producer.join();
    std::vector<int> expected(200);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(got == expected);
    CHECK(max_size <= 2);
    CHECK_FALSE(q.push(1));
}
