#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "codir/checkpoint.hpp"
#include "codir/encoder.hpp"
#include "codir/error.hpp"
#include "codir/ops.hpp"

using namespace codir;

namespace {

EncoderConfig small_config() {
    EncoderConfig c;
    c.num_layers = 2;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.vocab_size = 20;
    c.max_len = 8;
    c.num_classes = 2;
    c.dropout = 0.0;
    return c;
}

EncoderConfig desk_teacher() {
    EncoderConfig c;
    c.num_layers = 4;
    c.hidden_dim = 32;
    c.num_heads = 4;
    c.ffn_dim = 128;
    c.vocab_size = 64;
    c.max_len = 32;
    c.num_classes = 2;
    return c;
}

TokenBatch random_batch(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> id(0, vocab - 1);
    std::uniform_int_distribution<std::size_t> valid(1, len);
    TokenBatch b;
    b.batch = batch;
    b.seq_len = len;
    for (std::size_t i = 0; i < batch * len; ++i) b.ids.push_back(id(rng));
    for (std::size_t i = 0; i < batch; ++i) b.valid_lens.push_back(valid(rng));
    return b;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::State;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("codir_test_encoder_" + name)).string();
}

}  // namespace

TEST_CASE("forward shapes for a small student") {
    const TransformerEncoder model(small_config(), 1);
    const EncoderOutput out = model.forward(random_batch(2, 8, 20, 3));
    CHECK(out.logits.shape() == Shape{2, 2});
    REQUIRE(out.hidden.size() == 2);
    for (const auto& h : out.hidden) CHECK(h.shape() == Shape{2, 8, 8});
    CHECK(out.valid_lens.size() == 2);
}

TEST_CASE("masked-LM head emits per-position logits") {
    EncoderConfig c = small_config();
    c.head = HeadKind::MaskedLm;
    const TransformerEncoder model(c, 1);
    const EncoderOutput out = model.forward(random_batch(3, 5, 20, 4));
    CHECK(out.logits.shape() == Shape{15, 20});
}

TEST_CASE("intermediate feature count at BERT-base scale") {
    EncoderConfig c;
    c.num_layers = 6;
    c.max_len = 512;
    c.hidden_dim = 768;
    CHECK(intermediate_feature_count(c) == 6u * 512u * 768u);
    CHECK(intermediate_feature_count(c) == 2359296u);
}

TEST_CASE("config validation") {
    EncoderConfig c = small_config();
    c.num_layers = 0;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
    CHECK(kind_of([&] { TransformerEncoder m(c, 1); }) == ErrorKind::Config);
    c = small_config();
    c.num_heads = 3;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
    c = small_config();
    c.num_classes = 1;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
    c = small_config();
    c.dropout = 1.0;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
    c = small_config();
    c.max_len = 0;
    CHECK(kind_of([&] { c.validate(); }) == ErrorKind::Config);
}

TEST_CASE("config map round trip") {
    EncoderConfig c = small_config();
    c.head = HeadKind::MaskedLm;
    c.pooling = Pooling::Cls;
    c.dropout = 0.125;
    CHECK(EncoderConfig::from_map(c.to_map()) == c);
}

TEST_CASE("forward input errors") {
    const TransformerEncoder model(small_config(), 1);
    TokenBatch b = random_batch(1, 4, 20, 1);
    b.ids[0] = 20;
    CHECK(kind_of([&] { model.forward(b); }) == ErrorKind::Input);
    const TokenBatch too_long = random_batch(1, 9, 20, 1);
    CHECK(kind_of([&] { model.forward(too_long); }) == ErrorKind::Input);
}

TEST_CASE("embedding-only count") {
    EncoderConfig c = small_config();
    c.num_layers = 0;
    const ParameterCount n = count_parameters(c);
    CHECK(n.embedding == c.vocab_size * c.hidden_dim + c.max_len * c.hidden_dim);
    CHECK(n.blocks == 0);
    CHECK(n.total == n.embedding + n.head);
}

TEST_CASE("doubling depth doubles the block subtotal") {
    EncoderConfig c = desk_teacher();
    const ParameterCount a = count_parameters(c);
    c.num_layers *= 2;
    const ParameterCount b = count_parameters(c);
    CHECK(b.blocks == 2 * a.blocks);
    CHECK(b.embedding == a.embedding);
    CHECK(b.head == a.head);
}

TEST_CASE("desk teacher parameter count") {
    // embeddings: 64*32 + 32*32 = 3072
    // per layer: q,k,v,o 4*32*32 + biases 3*32, two norms 4*32,
    //            ffn 32*128 + 128 + 128*32 + 32 = 12672
    // head: 32*2 + 2 = 66
    const ParameterCount n = count_parameters(desk_teacher());
    CHECK(n.embedding == 3072);
    CHECK(n.per_layer == 12672);
    CHECK(n.head == 66);
    CHECK(n.total == 53826);
    const TransformerEncoder model(desk_teacher(), 5);
    CHECK(count_parameters(model) == 53826);
}

TEST_CASE("enumerated parameters match the formula") {
    for (std::size_t layers : {1, 2, 3}) {
        for (HeadKind head : {HeadKind::Classification, HeadKind::MaskedLm}) {
            EncoderConfig c = small_config();
            c.num_layers = layers;
            c.head = head;
            const TransformerEncoder model(c, 1);
            std::size_t total = 0;
            for (const auto& p : model.parameters()) total += p.tensor.numel();
            CHECK(total == count_parameters(c).total);
        }
    }
}

TEST_CASE("initialization is a truncated normal with zero biases") {
    const TransformerEncoder model(desk_teacher(), 3);
    for (const auto& p : model.parameters()) {
        if (p.name.ends_with(".gain")) {
            for (double v : p.tensor.values()) CHECK(v == 1.0);
            continue;
        }
        for (double v : p.tensor.values()) CHECK(std::abs(v) <= 0.04);
        if (p.name.ends_with(".bias") || p.name.ends_with(".bq") || p.name.ends_with(".bv") ||
            p.name.ends_with(".bo") || p.name.ends_with(".b1") || p.name.ends_with(".b2")) {
            for (double v : p.tensor.values()) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("gradient reaches every parameter") {
    EncoderConfig c = small_config();
    c.num_layers = 3;
    TransformerEncoder model(c, 11);
    const TokenBatch b = random_batch(4, 8, 20, 12);
    TapeScope scope;
    const EncoderOutput out = model.forward(b);
    const std::vector<std::size_t> labels = {0, 1, 1, 0};
    Tensor loss = nll_rows(log_softmax_rows(out.logits), labels);
    std::mt19937_64 rng(13);
    std::normal_distribution<double> nd;
    for (const auto& h : out.hidden) {
        std::vector<double> w(h.numel());
        for (auto& x : w) x = nd(rng);
        loss = add(loss, mean(mul(h, Tensor::from(h.shape(), w))));
    }
    backward(loss);
    for (const auto& p : model.parameters()) {
        INFO(p.name);
        bool nonzero = false;
        for (double g : p.tensor.grad()) nonzero |= g != 0.0;
        CHECK(nonzero);
    }
}

TEST_CASE("eval forward is deterministic and ignores the hidden-state switch") {
    EncoderConfig c = small_config();
    c.dropout = 0.3;
    const TransformerEncoder model(c, 2);
    const TokenBatch b = random_batch(3, 8, 20, 5);
    const EncoderOutput a = model.forward(b);
    const EncoderOutput a2 = model.forward(b);
    ForwardOptions no_hidden;
    no_hidden.keep_hidden = false;
    const EncoderOutput n = model.forward(b, no_hidden);
    CHECK(bitwise_equal(a.logits, a2.logits));
    CHECK(bitwise_equal(a.logits, n.logits));
    CHECK(n.hidden.empty());
}

TEST_CASE("training-mode dropout is seeded") {
    EncoderConfig c = small_config();
    c.dropout = 0.3;
    const TransformerEncoder model(c, 2);
    const TokenBatch b = random_batch(3, 8, 20, 5);
    auto run = [&](std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        ForwardOptions o;
        o.training = true;
        o.rng = &rng;
        return model.forward(b, o).logits;
    };
    CHECK(bitwise_equal(run(1), run(1)));
    CHECK_FALSE(bitwise_equal(run(1), run(2)));
    CHECK_FALSE(bitwise_equal(run(1), model.forward(b).logits));
    ForwardOptions missing;
    missing.training = true;
    CHECK(kind_of([&] { model.forward(b, missing); }) == ErrorKind::State);
}

TEST_CASE("padding does not change valid outputs") {
    for (Pooling pooling : {Pooling::MeanPool, Pooling::Cls}) {
        EncoderConfig c = small_config();
        c.pooling = pooling;
        const TransformerEncoder model(c, 4);
        TokenBatch tight;
        tight.batch = 1;
        tight.seq_len = 5;
        tight.ids = {2, 7, 9, 11, 5};
        tight.valid_lens = {5};
        TokenBatch padded = tight;
        padded.seq_len = 8;
        padded.ids = {2, 7, 9, 11, 5, 0, 13, 0};
        padded.valid_lens = {5};
        const EncoderOutput a = model.forward(tight);
        const EncoderOutput b = model.forward(padded);
        CHECK(bitwise_equal(a.logits, b.logits));
        for (std::size_t l = 0; l < a.hidden.size(); ++l) {
            for (std::size_t t = 0; t < 5; ++t)
                for (std::size_t j = 0; j < c.hidden_dim; ++j) CHECK(a.hidden[l].at(0, t, j) == b.hidden[l].at(0, t, j));
        }
    }
}

TEST_CASE("examples in a batch do not interact") {
    const TransformerEncoder model(small_config(), 4);
    const TokenBatch pair = random_batch(2, 6, 20, 8);
    TokenBatch first;
    first.batch = 1;
    first.seq_len = 6;
    first.ids.assign(pair.ids.begin(), pair.ids.begin() + 6);
    first.valid_lens = {pair.valid_lens[0]};
    const Tensor joint = model.forward(pair).logits;
    const Tensor alone = model.forward(first).logits;
    CHECK(joint.at(0, 0) == alone.at(0, 0));
    CHECK(joint.at(0, 1) == alone.at(0, 1));
}

TEST_CASE("set_trainable and copy_body_from") {
    TransformerEncoder a(small_config(), 1);
    EncoderConfig mlm = small_config();
    mlm.head = HeadKind::MaskedLm;
    TransformerEncoder b(mlm, 2);
    a.copy_body_from(b);
    for (std::size_t i = 0; i + 2 < a.parameters().size(); ++i) {
        const auto& pa = a.parameters()[i].tensor;
        const auto& pb = b.parameters()[i].tensor;
        CHECK(bitwise_equal(pa, pb));
    }
    CHECK(a.parameter("head.weight").shape() == Shape{8, 2});
    a.set_trainable(false);
    for (const auto& p : a.parameters()) CHECK_FALSE(p.tensor.requires_grad());
    EncoderConfig deeper = small_config();
    deeper.num_layers = 3;
    const TransformerEncoder c(deeper, 3);
    CHECK(kind_of([&] { a.copy_body_from(c); }) == ErrorKind::Dimension);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const TransformerEncoder model(desk_teacher(), 21);
    const ProjectionHead ps(64, 16, 1), pt(128, 16, 2);
    const MemoryBank bank = MemoryBank::init(10, 16, 3, 0.25);
    const std::string path = temp_path("roundtrip.ckpt");
    save_model(path, model, &ps, &pt, &bank);
    const ModelBundle loaded = load_model(path);
    CHECK(loaded.model.config() == model.config());
    REQUIRE(loaded.model.parameters().size() == model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        CHECK(loaded.model.parameters()[i].name == model.parameters()[i].name);
        CHECK(bitwise_equal(loaded.model.parameters()[i].tensor, model.parameters()[i].tensor));
    }
    REQUIRE(loaded.proj_student);
    REQUIRE(loaded.proj_teacher);
    REQUIRE(loaded.bank);
    CHECK(bitwise_equal(loaded.proj_student->weight(), ps.weight()));
    CHECK(bitwise_equal(loaded.proj_teacher->weight(), pt.weight()));
    CHECK(loaded.bank->values() == bank.values());
    CHECK(loaded.bank->beta() == 0.25);
    const TokenBatch b = random_batch(2, 10, 64, 7);
    CHECK(bitwise_equal(loaded.model.forward(b).logits, model.forward(b).logits));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint format errors") {
    const std::string path = temp_path("bad.ckpt");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPT";
    }
    CHECK(kind_of([&] { load_model(path); }) == ErrorKind::Format);
    CHECK(kind_of([&] { load_model(temp_path("missing.ckpt")); }) == ErrorKind::Io);

    const TransformerEncoder model(small_config(), 1);
    save_model(path, model);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
    CHECK(kind_of([&] { load_model(path); }) == ErrorKind::Format);

    Checkpoint ck = make_checkpoint(model);
    ck.version = kCheckpointVersion + 1;
    save_checkpoint(ck, path);
    CHECK(kind_of([&] { load_checkpoint(path); }) == ErrorKind::Format);
    std::filesystem::remove(path);
}

TEST_CASE("concurrent eval calls agree") {
    const TransformerEncoder model(small_config(), 9);
    const TokenBatch b = random_batch(4, 8, 20, 1);
    const Tensor ref = model.forward(b).logits;
    std::vector<Tensor> results(4);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            NoGradGuard no_grad;
            results[t] = model.forward(b).logits;
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& r : results) CHECK(bitwise_equal(r, ref));
}
