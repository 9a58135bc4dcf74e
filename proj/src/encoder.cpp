#include "codir/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "codir/error.hpp"
#include "codir/ops.hpp"

namespace codir {

std::string to_string(HeadKind head) { return head == HeadKind::MaskedLm ? "mlm" : "classification"; }

std::string to_string(Pooling pooling) { return pooling == Pooling::Cls ? "cls" : "mean"; }

HeadKind parse_head_kind(const std::string& text) {
    if (text == "classification") return HeadKind::Classification;
    if (text == "mlm") return HeadKind::MaskedLm;
    fail(ErrorKind::Config, "unknown head kind '" + text + "' (expected classification|mlm)");
}

Pooling parse_pooling(const std::string& text) {
    if (text == "mean" || text == "mean_pool") return Pooling::MeanPool;
    if (text == "cls") return Pooling::Cls;
    fail(ErrorKind::Config, "unknown summarization mode '" + text + "' (expected mean|cls)");
}

void EncoderConfig::validate() const {
    if (num_layers < 1) fail(ErrorKind::Config, "num_layers must be >= 1");
    if (hidden_dim < 1 || num_heads < 1) fail(ErrorKind::Config, "hidden_dim and num_heads must be >= 1");
    if (hidden_dim % num_heads != 0) {
        fail(ErrorKind::Config, "hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                                    std::to_string(num_heads));
    }
    if (ffn_dim < 1) fail(ErrorKind::Config, "ffn_dim must be >= 1");
    if (vocab_size < 1) fail(ErrorKind::Config, "vocab_size must be >= 1");
    if (max_len < 1) fail(ErrorKind::Config, "max_len must be >= 1");
    if (head == HeadKind::Classification && num_classes < 2) fail(ErrorKind::Config, "num_classes must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(ErrorKind::Config, "dropout must be in [0, 1)");
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::size_t get_size(const std::map<std::string, std::string>& m, const std::string& key, std::size_t fallback) {
    auto it = m.find(key);
    if (it == m.end()) return fallback;
    try {
        return std::stoul(it->second);
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "invalid integer for " + key + ": '" + it->second + "'");
    }
}

}  // namespace

std::map<std::string, std::string> EncoderConfig::to_map() const {
    return {
        {"num_layers", std::to_string(num_layers)},
        {"hidden_dim", std::to_string(hidden_dim)},
        {"num_heads", std::to_string(num_heads)},
        {"ffn_dim", std::to_string(ffn_dim)},
        {"vocab_size", std::to_string(vocab_size)},
        {"max_len", std::to_string(max_len)},
        {"num_classes", std::to_string(num_classes)},
        {"head", to_string(head)},
        {"pooling", to_string(pooling)},
        {"dropout", format_double(dropout)},
    };
}

EncoderConfig EncoderConfig::from_map(const std::map<std::string, std::string>& values) {
    EncoderConfig c;
    c.num_layers = get_size(values, "num_layers", c.num_layers);
    c.hidden_dim = get_size(values, "hidden_dim", c.hidden_dim);
    c.num_heads = get_size(values, "num_heads", c.num_heads);
    c.ffn_dim = get_size(values, "ffn_dim", c.ffn_dim);
    c.vocab_size = get_size(values, "vocab_size", c.vocab_size);
    c.max_len = get_size(values, "max_len", c.max_len);
    c.num_classes = get_size(values, "num_classes", c.num_classes);
    if (auto it = values.find("head"); it != values.end()) c.head = parse_head_kind(it->second);
    if (auto it = values.find("pooling"); it != values.end()) c.pooling = parse_pooling(it->second);
    if (auto it = values.find("dropout"); it != values.end()) c.dropout = std::stod(it->second);
    return c;
}

std::size_t intermediate_feature_count(const EncoderConfig& config) {
    return config.num_layers * config.max_len * config.hidden_dim;
}

ParameterCount count_parameters(const EncoderConfig& config) {
    const std::size_t d = config.hidden_dim, f = config.ffn_dim;
    ParameterCount count;
    count.embedding = config.vocab_size * d + config.max_len * d;
    // q, k, v, o projections (no key bias); two layer norms; two FFN linears.
    count.per_layer = 4 * d * d + 3 * d + 2 * (2 * d) + (d * f + f) + (f * d + d);
    count.blocks = config.num_layers * count.per_layer;
    count.head = d * config.output_dim() + config.output_dim();
    count.total = count.embedding + count.blocks + count.head;
    return count;
}

void validate_batch(const TokenBatch& batch, const EncoderConfig& config) {
    if (batch.batch == 0 || batch.seq_len == 0) fail(ErrorKind::Input, "empty batch");
    if (batch.seq_len > config.max_len) {
        fail(ErrorKind::Input, "sequence length " + std::to_string(batch.seq_len) + " exceeds max_len " +
                                   std::to_string(config.max_len));
    }
    if (batch.ids.size() != batch.batch * batch.seq_len || batch.valid_lens.size() != batch.batch) {
        fail(ErrorKind::Input, "token batch layout does not match its declared extents");
    }
    for (std::size_t len : batch.valid_lens) {
        if (len < 1 || len > batch.seq_len) fail(ErrorKind::Input, "valid length out of range");
    }
    for (std::size_t id : batch.ids) {
        if (id >= config.vocab_size) {
            fail(ErrorKind::Input, "token id " + std::to_string(id) + " outside vocabulary of size " +
                                       std::to_string(config.vocab_size));
        }
    }
}

namespace {

enum class Init { TruncatedNormal, Zeros, Ones };

constexpr double kInitStd = 0.02;

std::vector<double> init_values(std::size_t n, Init init, std::mt19937_64& rng) {
    std::vector<double> values(n, init == Init::Ones ? 1.0 : 0.0);
    if (init == Init::TruncatedNormal) {
        std::normal_distribution<double> normal(0.0, 1.0);
        for (double& v : values) {
            double z = normal(rng);
            while (std::abs(z) > 2.0) z = normal(rng);
            v = kInitStd * z;
        }
    }
    return values;
}

}  // namespace

Tensor TransformerEncoder::add_param(const std::string& name, Shape shape, std::mt19937_64& rng, double fill) {
    const Init init = fill < 0.0 ? Init::TruncatedNormal : (fill == 0.0 ? Init::Zeros : Init::Ones);
    Tensor t = Tensor::from(shape, init_values(shape_numel(shape), init, rng), true);
    params_.push_back({name, t});
    return t;
}

TransformerEncoder::TransformerEncoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = config_.hidden_dim, f = config_.ffn_dim;
    token_embedding_ = add_param("embed.token", {config_.vocab_size, d}, rng);
    position_embedding_ = add_param("embed.position", {config_.max_len, d}, rng);
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        Layer layer;
        layer.wq = add_param(p + "attn.wq", {d, d}, rng);
        layer.bq = add_param(p + "attn.bq", {d}, rng, 0.0);
        layer.wk = add_param(p + "attn.wk", {d, d}, rng);
        layer.wv = add_param(p + "attn.wv", {d, d}, rng);
        layer.bv = add_param(p + "attn.bv", {d}, rng, 0.0);
        layer.wo = add_param(p + "attn.wo", {d, d}, rng);
        layer.bo = add_param(p + "attn.bo", {d}, rng, 0.0);
        layer.ln1_gain = add_param(p + "ln1.gain", {d}, rng, 1.0);
        layer.ln1_bias = add_param(p + "ln1.bias", {d}, rng, 0.0);
        layer.w1 = add_param(p + "ffn.w1", {d, f}, rng);
        layer.b1 = add_param(p + "ffn.b1", {f}, rng, 0.0);
        layer.w2 = add_param(p + "ffn.w2", {f, d}, rng);
        layer.b2 = add_param(p + "ffn.b2", {d}, rng, 0.0);
        layer.ln2_gain = add_param(p + "ln2.gain", {d}, rng, 1.0);
        layer.ln2_bias = add_param(p + "ln2.bias", {d}, rng, 0.0);
        layers_.push_back(std::move(layer));
    }
    head_weight_ = add_param("head.weight", {d, config_.output_dim()}, rng);
    head_bias_ = add_param("head.bias", {config_.output_dim()}, rng, 0.0);
}

EncoderOutput TransformerEncoder::forward(const TokenBatch& batch, const ForwardOptions& options) const {
    validate_batch(batch, config_);
    const std::size_t B = batch.batch, L = batch.seq_len, d = config_.hidden_dim, H = config_.num_heads;
    const bool drop = options.training && config_.dropout > 0.0;
    if (drop && options.rng == nullptr) fail(ErrorKind::State, "training-mode forward with dropout needs an rng");
    auto maybe_dropout = [&](const Tensor& t) { return drop ? dropout(t, config_.dropout, *options.rng) : t; };

    std::vector<std::size_t> positions(B * L);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % L;
    Tensor x = add(select_rows(token_embedding_, batch.ids), select_rows(position_embedding_, positions));
    x = maybe_dropout(x);

    std::vector<std::size_t> key_lens(B * H);
    for (std::size_t b = 0; b < B; ++b) std::fill_n(key_lens.begin() + b * H, H, batch.valid_lens[b]);
    const double score_scale = 1.0 / std::sqrt(static_cast<double>(d / H));

    EncoderOutput out;
    out.valid_lens = batch.valid_lens;
    for (const Layer& layer : layers_) {
        Tensor q = split_heads(add_bias(matmul(x, layer.wq), layer.bq), B, L, H);
        Tensor k = split_heads(matmul(x, layer.wk), B, L, H);
        Tensor v = split_heads(add_bias(matmul(x, layer.wv), layer.bv), B, L, H);
        Tensor probs = maybe_dropout(masked_softmax_rows(scale(bmm(q, transpose(k)), score_scale), key_lens));
        Tensor context = merge_heads(bmm(probs, v), B, L, H);
        Tensor attn = maybe_dropout(add_bias(matmul(context, layer.wo), layer.bo));
        x = layer_norm(add(x, attn), layer.ln1_gain, layer.ln1_bias);

        Tensor inner = gelu(add_bias(matmul(x, layer.w1), layer.b1));
        Tensor ffn = maybe_dropout(add_bias(matmul(inner, layer.w2), layer.b2));
        x = layer_norm(add(x, ffn), layer.ln2_gain, layer.ln2_bias);
        if (options.keep_hidden) out.hidden.push_back(reshape(x, {B, L, d}));
    }

    if (config_.head == HeadKind::MaskedLm) {
        out.logits = add_bias(matmul(x, head_weight_), head_bias_);
        return out;
    }
    Tensor pooled;
    if (config_.pooling == Pooling::MeanPool) {
        pooled = mean_pool_rows(reshape(x, {B, L, d}), batch.valid_lens);
    } else {
        std::vector<std::size_t> first(B);
        for (std::size_t b = 0; b < B; ++b) first[b] = b * L;
        pooled = select_rows(x, first);
    }
    out.logits = add_bias(matmul(pooled, head_weight_), head_bias_);
    return out;
}

std::vector<Tensor> TransformerEncoder::parameter_tensors() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
}

Tensor TransformerEncoder::parameter(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p.tensor;
    }
    fail(ErrorKind::Parameter, "no parameter named " + name);
}

void TransformerEncoder::set_trainable(bool trainable) {
    for (auto& p : params_) {
        p.tensor.node()->requires_grad = trainable;
        if (!trainable) p.tensor.node()->grad.clear();
    }
}

void TransformerEncoder::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

void TransformerEncoder::copy_body_from(const TransformerEncoder& other) {
    if (other.config_.num_layers != config_.num_layers) {
        fail(ErrorKind::Dimension, "copy_body_from: source has " + std::to_string(other.config_.num_layers) +
                                       " layers, expected " + std::to_string(config_.num_layers));
    }
    for (auto& p : params_) {
        if (p.name.rfind("head.", 0) == 0) continue;
        Tensor src = other.parameter(p.name);
        if (src.shape() != p.tensor.shape()) {
            fail(ErrorKind::Dimension, "copy_body_from: " + p.name + " has shape " + src.shape_string() + ", expected " +
                                           p.tensor.shape_string());
        }
        auto dst = p.tensor.mutable_values();
        std::copy(src.values().begin(), src.values().end(), dst.begin());
    }
}

std::size_t count_parameters(const TransformerEncoder& model) {
    std::size_t total = 0;
    for (const auto& p : model.parameters()) total += p.tensor.numel();
    return total;
}

}  // namespace codir
