#include "codir/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "codir/error.hpp"

namespace codir {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
    KeyValues out;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') fail(ErrorKind::Config, where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Config, where + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail(ErrorKind::Config, where + ": empty key");
        if (section == "synthetic") key = "synthetic." + key;
        if (!out.emplace(key, value).second) fail(ErrorKind::Config, where + ": duplicate key " + key);
    }
    return out;
}

KeyValues parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot read config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::PretrainMlm: return "pretrain_mlm";
        case Stage::PretrainCodir: return "pretrain_codir";
        case Stage::FinetuneStandard: return "finetune_standard";
        case Stage::FinetuneKd: return "finetune_kd";
        case Stage::FinetuneCodir: return "finetune_codir";
    }
    return "unknown";
}

Stage parse_stage(const std::string& text) {
    for (Stage s : {Stage::PretrainMlm, Stage::PretrainCodir, Stage::FinetuneStandard, Stage::FinetuneKd,
                    Stage::FinetuneCodir}) {
        if (to_string(s) == text) return s;
    }
    fail(ErrorKind::Config, "unknown stage '" + text + "'");
}

bool stage_is_pretrain(Stage stage) { return stage == Stage::PretrainMlm || stage == Stage::PretrainCodir; }

bool stage_uses_kd(Stage stage) {
    return stage == Stage::PretrainCodir || stage == Stage::FinetuneKd || stage == Stage::FinetuneCodir;
}

bool stage_uses_crd(Stage stage) { return stage == Stage::PretrainCodir || stage == Stage::FinetuneCodir; }

TrainConfig TrainConfig::defaults_for(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    if (stage_is_pretrain(stage)) {
        c.weights = LossWeights::pretrain_defaults();
        c.order = BatchOrder::Contiguous;
        c.student.head = HeadKind::MaskedLm;
        // Stage two runs 1/3.5 of the stage-one steps at 1/7 of its rate.
        c.steps = stage == Stage::PretrainMlm ? 3000 : 1000;
        c.lr = stage == Stage::PretrainMlm ? 7e-4 : 1e-4;
    } else {
        c.weights = LossWeights::finetune_defaults();
        c.order = BatchOrder::Shuffled;
        c.student.head = HeadKind::Classification;
    }
    return c;
}

namespace {

std::size_t to_size(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size() || x < 0) throw std::invalid_argument(v);
        return static_cast<std::size_t>(x);
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "key " + key + " expects a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        fail(ErrorKind::Config, "key " + key + " expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::Config, "key " + key + " expects a boolean, got '" + v + "'");
}

enum Relevance { kAlways, kKd, kCrd, kPretrain };

struct KeyInfo {
    ConfigKey key;
    Relevance relevance;
};

const std::vector<KeyInfo>& key_table() {
    static const std::vector<KeyInfo> table = {
        {{"stage", "train", "pretrain_mlm | pretrain_codir | finetune_standard | finetune_kd | finetune_codir"}, kAlways},
        {{"steps", "train", "optimizer steps"}, kAlways},
        {{"batch_size", "train", "examples per step"}, kAlways},
        {{"lr", "train", "peak learning rate"}, kAlways},
        {{"warmup_frac", "train", "fraction of steps spent in linear warmup"}, kAlways},
        {{"adam_beta1", "train", "Adam beta1"}, kAlways},
        {{"adam_beta2", "train", "Adam beta2"}, kAlways},
        {{"adam_eps", "train", "Adam epsilon"}, kAlways},
        {{"clip_norm", "train", "global gradient-norm clip (0 disables)"}, kAlways},
        {{"seed", "train", "seed for initialization, dropout, sampling and batching"}, kAlways},
        {{"eval_every", "train", "evaluate on dev data every N steps (0: only at the end)"}, kAlways},
        {{"prefetch", "train", "prepare batches on a producer thread"}, kAlways},
        {{"alpha1", "loss", "weight of the KD term"}, kKd},
        {{"rho", "loss", "KD temperature"}, kKd},
        {{"alpha2", "loss", "weight of the contrastive term"}, kCrd},
        {{"tau", "loss", "contrastive temperature"}, kCrd},
        {{"negatives", "loss", "negatives per positive (K)"}, kCrd},
        {{"bank_beta", "loss", "memory-bank momentum"}, kCrd},
        {{"summary", "loss", "layer summarization for the contrastive term: mean | cls"}, kCrd},
        {{"proj_dim", "loss", "projection dimension m"}, kCrd},
        {{"mask_rate", "data", "masked-token rate"}, kPretrain},
        {{"bert_mask", "data", "80/10/10 replacement instead of pure [MASK]"}, kPretrain},
        {{"batch_order", "data", "shuffled | contiguous"}, kAlways},
        {{"train_data", "data", "training data (TSV for finetuning, corpus text for pretraining)"}, kAlways},
        {{"dev_data", "data", "dev TSV for evaluation"}, kAlways},
        {{"vocab", "data", "vocabulary file (token per line)"}, kAlways},
        {{"layers", "student", "student Transformer layers"}, kAlways},
        {{"hidden_dim", "student", "student hidden size"}, kAlways},
        {{"heads", "student", "attention heads"}, kAlways},
        {{"ffn_dim", "student", "feed-forward size"}, kAlways},
        {{"max_len", "student", "maximum sequence length"}, kAlways},
        {{"dropout", "student", "dropout rate"}, kAlways},
        {{"pooling", "student", "classification-head input: mean | cls"}, kAlways},
        {{"teacher", "paths", "teacher checkpoint"}, kKd},
        {{"init", "paths", "student initialization checkpoint"}, kAlways},
        {{"out", "paths", "output checkpoint"}, kAlways},
        {{"metrics", "paths", "per-step metrics CSV"}, kAlways},
    };
    return table;
}

}  // namespace

const std::vector<ConfigKey>& train_config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& k : key_table()) out.push_back(k.key);
        return out;
    }();
    return keys;
}

bool key_active_in_stage(const std::string& key, Stage stage) {
    for (const auto& k : key_table()) {
        if (k.key.name != key) continue;
        switch (k.relevance) {
            case kAlways: return true;
            case kKd: return stage_uses_kd(stage);
            case kCrd: return stage_uses_crd(stage);
            case kPretrain: return stage_is_pretrain(stage);
        }
    }
    fail(ErrorKind::Config, "unknown configuration key '" + key + "'");
}

void TrainConfig::set(const std::string& key, const std::string& v) {
    if (key == "stage") stage = parse_stage(v);
    else if (key == "steps") steps = to_size(key, v);
    else if (key == "batch_size") batch_size = to_size(key, v);
    else if (key == "lr") lr = to_double(key, v);
    else if (key == "warmup_frac") warmup_frac = to_double(key, v);
    else if (key == "adam_beta1") adam_beta1 = to_double(key, v);
    else if (key == "adam_beta2") adam_beta2 = to_double(key, v);
    else if (key == "adam_eps") adam_eps = to_double(key, v);
    else if (key == "clip_norm") clip_norm = to_double(key, v);
    else if (key == "seed") seed = to_size(key, v);
    else if (key == "eval_every") eval_every = to_size(key, v);
    else if (key == "prefetch") prefetch = to_bool(key, v);
    else if (key == "alpha1") weights.alpha1 = to_double(key, v);
    else if (key == "rho") weights.rho = to_double(key, v);
    else if (key == "alpha2") weights.alpha2 = to_double(key, v);
    else if (key == "tau") weights.tau = to_double(key, v);
    else if (key == "negatives") negatives = to_size(key, v);
    else if (key == "bank_beta") bank_beta = to_double(key, v);
    else if (key == "summary") summary = parse_pooling(v);
    else if (key == "proj_dim") proj_dim = to_size(key, v);
    else if (key == "mask_rate") mask_rate = to_double(key, v);
    else if (key == "bert_mask") bert_mask = to_bool(key, v);
    else if (key == "batch_order") {
        if (v == "shuffled") order = BatchOrder::Shuffled;
        else if (v == "contiguous") order = BatchOrder::Contiguous;
        else fail(ErrorKind::Config, "batch_order must be shuffled or contiguous");
    }
    else if (key == "train_data") train_data = v;
    else if (key == "dev_data") dev_data = v;
    else if (key == "vocab") vocab = v;
    else if (key == "layers") student.num_layers = to_size(key, v);
    else if (key == "hidden_dim") student.hidden_dim = to_size(key, v);
    else if (key == "heads") student.num_heads = to_size(key, v);
    else if (key == "ffn_dim") student.ffn_dim = to_size(key, v);
    else if (key == "max_len") student.max_len = to_size(key, v);
    else if (key == "dropout") student.dropout = to_double(key, v);
    else if (key == "pooling") student.pooling = parse_pooling(v);
    else if (key == "teacher") teacher = v;
    else if (key == "init") init = v;
    else if (key == "out") out = v;
    else if (key == "metrics") metrics = v;
    else fail(ErrorKind::Config, "unknown configuration key '" + key + "'");
}

void TrainConfig::apply_user_keys(const KeyValues& values) {
    if (auto it = values.find("stage"); it != values.end()) {
        if (parse_stage(it->second) != stage) fail(ErrorKind::Config, "stage in configuration conflicts with the command");
    }
    for (const auto& [key, value] : values) {
        if (key.rfind("synthetic.", 0) == 0) continue;
        if (!key_active_in_stage(key, stage)) {
            fail(ErrorKind::Config, "key '" + key + "' has no effect in stage " + to_string(stage));
        }
        set(key, value);
    }
}

void TrainConfig::validate() const {
    if (batch_size == 0) fail(ErrorKind::Config, "batch_size must be >= 1");
    if (!(lr >= 0.0)) fail(ErrorKind::Config, "lr must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        fail(ErrorKind::Config, "Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) fail(ErrorKind::Config, "adam_eps must be > 0");
    weights.validate();
    if (stage_uses_crd(stage)) {
        if (!(bank_beta > 0.0 && bank_beta < 1.0)) fail(ErrorKind::Config, "bank_beta must lie in (0, 1)");
        if (proj_dim == 0) fail(ErrorKind::Config, "proj_dim must be >= 1");
    }
    if (stage_is_pretrain(stage) && !(mask_rate > 0.0 && mask_rate < 1.0)) {
        fail(ErrorKind::Config, "mask_rate must lie in (0, 1)");
    }
}

}  // namespace codir
