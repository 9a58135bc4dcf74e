#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "codir/tensor.hpp"

namespace codir {

enum class HeadKind { Classification, MaskedLm };
enum class Pooling { MeanPool, Cls };

std::string to_string(HeadKind head);
std::string to_string(Pooling pooling);
HeadKind parse_head_kind(const std::string& text);
Pooling parse_pooling(const std::string& text);

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t vocab_size = 64;
    std::size_t max_len = 32;
    // Output classes for Classification; ignored (vocab_size used) for MaskedLm.
    std::size_t num_classes = 2;
    HeadKind head = HeadKind::Classification;
    // Summary of the last layer that feeds the classification head.
    Pooling pooling = Pooling::MeanPool;
    double dropout = 0.1;

    void validate() const;
    std::size_t output_dim() const { return head == HeadKind::MaskedLm ? vocab_size : num_classes; }

    std::map<std::string, std::string> to_map() const;
    static EncoderConfig from_map(const std::map<std::string, std::string>& values);

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Padded token ids for a batch: ids is row-major [batch x seq_len]; positions
// at or beyond valid_lens[b] are padding and never influence valid outputs.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::size_t> ids;
    std::vector<std::size_t> valid_lens;
};

struct ForwardOptions {
    bool training = false;
    bool keep_hidden = true;
    std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

struct EncoderOutput {
    // Classification: [batch x num_classes]. MaskedLm: [(batch*seq_len) x vocab].
    Tensor logits;
    // H_1..H_n, each [batch x seq_len x hidden_dim].
    std::vector<Tensor> hidden;
    std::vector<std::size_t> valid_lens;
};

struct NamedParameter {
    std::string name;
    Tensor tensor;
};

struct ParameterCount {
    std::size_t embedding = 0;
    std::size_t per_layer = 0;
    std::size_t blocks = 0;
    std::size_t head = 0;
    std::size_t total = 0;
};

// Closed-form parameter count of the architecture described by `config`.
ParameterCount count_parameters(const EncoderConfig& config);

// Post-norm Transformer encoder with learned positions and a
// classification or masked-LM head.
class TransformerEncoder {
public:
    TransformerEncoder(EncoderConfig config, std::uint64_t seed);

    EncoderOutput forward(const TokenBatch& batch, const ForwardOptions& options = {}) const;

    const EncoderConfig& config() const { return config_; }

    // Parameters in the fixed checkpoint order.
    const std::vector<NamedParameter>& parameters() const { return params_; }
    std::vector<Tensor> parameter_tensors() const;
    Tensor parameter(const std::string& name) const;

    void set_trainable(bool trainable);
    void zero_grad();

    // Replaces every parameter except the output head with the values of
    // `other`, which must share the body architecture.
    void copy_body_from(const TransformerEncoder& other);

private:
    struct Layer {
        // No key bias: it shifts every score in a row equally, which the softmax
        // cancels.
        Tensor wq, bq, wk, wv, bv, wo, bo;
        Tensor ln1_gain, ln1_bias;
        Tensor w1, b1, w2, b2;
        Tensor ln2_gain, ln2_bias;
    };

    Tensor add_param(const std::string& name, Shape shape, std::mt19937_64& rng, double fill = -1.0);

    EncoderConfig config_;
    std::vector<NamedParameter> params_;
    Tensor token_embedding_;
    Tensor position_embedding_;
    std::vector<Layer> layers_;
    Tensor head_weight_;
    Tensor head_bias_;
};

std::size_t count_parameters(const TransformerEncoder& model);

// Hidden-state values exposed per full-length example: layers * max_len * d.
std::size_t intermediate_feature_count(const EncoderConfig& config);

// Validates ids and lengths against `config`; throws Input errors.
void validate_batch(const TokenBatch& batch, const EncoderConfig& config);

}  // namespace codir
