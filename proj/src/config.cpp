#include "prefixmt/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace prefixmt {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    KvMap kv;
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key at config line " + std::to_string(line_no));
        kv[section.empty() ? key : section + "." + key] = value;
    }
    return kv;
}

void apply_override(KvMap& kv, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + spec);
    kv[trim(spec.substr(0, eq))] = trim(spec.substr(eq + 1));
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " needs an integer, got: " + v);
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " needs an unsigned integer, got: " + v);
    }
}

float to_float(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const float out = std::stof(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " needs a number, got: " + v);
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + " needs a boolean, got: " + v);
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F conv) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(conv(key, item));
    }
    if (out.empty()) throw ConfigError("config key " + key + " needs a non-empty list");
    return out;
}

RunConfig materialize(KvMap kv) {
    RunConfig c = RunConfig::defaults();
    auto take = [&](const std::string& key) -> const std::string* {
        auto it = kv.find(key);
        if (it == kv.end()) return nullptr;
        return &it->second;
    };

    if (const auto* v = take("seed")) c.seed = to_u64("seed", *v);
    if (const char* env = std::getenv("PREFIXMT_SEED")) c.seed = to_u64("PREFIXMT_SEED", env);
    // the master seed feeds every block unless a block pins its own
    c.world.seed = c.seed;
    c.train.seed = c.seed;

    if (const auto* v = take("world.seed")) c.world.seed = to_u64("world.seed", *v);
    if (const auto* v = take("world.n_objects")) c.world.n_objects = to_int("world.n_objects", *v);
    if (const auto* v = take("world.n_colors")) c.world.n_colors = to_int("world.n_colors", *v);
    if (const auto* v = take("world.n_actions")) c.world.n_actions = to_int("world.n_actions", *v);
    if (const auto* v = take("world.n_dets")) c.world.n_dets = to_int("world.n_dets", *v);
    if (const auto* v = take("world.n_advs")) c.world.n_advs = to_int("world.n_advs", *v);
    if (const auto* v = take("world.n_concept_clusters"))
        c.world.n_concept_clusters = to_int("world.n_concept_clusters", *v);
    if (const auto* v = take("world.vocab_per_lang"))
        c.world.vocab_per_lang = to_int("world.vocab_per_lang", *v);
    if (const auto* v = take("world.train_records")) c.world.n_train = to_int("world.train_records", *v);
    if (const auto* v = take("world.valid_records")) c.world.n_valid = to_int("world.valid_records", *v);
    if (const auto* v = take("world.test_records")) c.world.n_test = to_int("world.test_records", *v);
    if (const auto* v = take("world.latent_dim")) c.world.latent_dim = to_int("world.latent_dim", *v);
    if (const auto* v = take("world.latent_noise")) c.world.latent_noise = to_float("world.latent_noise", *v);
    if (const auto* v = take("world.d_c")) c.world.d_c = to_int("world.d_c", *v);
    if (const auto* v = take("world.sigma_a")) c.world.sigma_a = to_float("world.sigma_a", *v);
    if (const auto* v = take("world.sigma_b")) c.world.sigma_b = to_float("world.sigma_b", *v);

    if (const auto* v = take("model.d_b")) c.model.d_b = to_int("model.d_b", *v);
    if (const auto* v = take("model.k")) c.model.k = to_int("model.k", *v);
    if (const auto* v = take("model.n_layers")) c.model.n_layers = to_int("model.n_layers", *v);
    if (const auto* v = take("model.n_heads")) c.model.n_heads = to_int("model.n_heads", *v);
    if (const auto* v = take("model.d_ff")) c.model.d_ff = to_int("model.d_ff", *v);
    if (const auto* v = take("model.max_seq_len")) c.model.max_seq_len = to_int("model.max_seq_len", *v);
    if (const auto* v = take("model.mn_variant")) c.model.mn_variant = mn_variant_from_name(*v);
    if (const auto* v = take("model.prefix_position"))
        c.model.prefix_position = prefix_position_from_name(*v);
    if (const auto* v = take("model.dropout")) c.model.dropout = to_float("model.dropout", *v);

    if (const auto* v = take("train.seed")) c.train.seed = to_u64("train.seed", *v);
    if (const auto* v = take("train.stage")) c.train.stage = to_int("train.stage", *v);
    if (const auto* v = take("train.mode")) c.train.mode = train_mode_from_name(*v);
    if (const auto* v = take("train.epochs")) c.train.epochs = to_int("train.epochs", *v);
    if (const auto* v = take("train.batch_size")) c.train.batch_size = to_int("train.batch_size", *v);
    if (const auto* v = take("train.lr0")) c.train.lr0 = to_float("train.lr0", *v);
    if (const auto* v = take("train.schedule_power"))
        c.train.schedule_power = to_float("train.schedule_power", *v);
    if (const auto* v = take("train.weight_decay")) c.train.weight_decay = to_float("train.weight_decay", *v);
    if (const auto* v = take("train.beta1")) c.train.beta1 = to_float("train.beta1", *v);
    if (const auto* v = take("train.beta2")) c.train.beta2 = to_float("train.beta2", *v);
    if (const auto* v = take("train.eps")) c.train.eps = to_float("train.eps", *v);
    if (const auto* v = take("train.clip_norm")) c.train.clip_norm = to_float("train.clip_norm", *v);
    if (const auto* v = take("train.caption_lang")) c.train.caption_lang = caption_lang_from_name(*v);
    if (const auto* v = take("train.src_lang")) c.train.src_lang = to_int("train.src_lang", *v);
    if (const auto* v = take("train.tgt_lang")) c.train.tgt_lang = to_int("train.tgt_lang", *v);
    if (const auto* v = take("train.early_stop")) c.train.early_stop = to_bool("train.early_stop", *v);
    if (const auto* v = take("train.patience")) c.train.patience = to_int("train.patience", *v);
    if (const auto* v = take("train.min_delta")) c.train.min_delta = to_float("train.min_delta", *v);

    if (const auto* v = take("decode.beam_size")) c.decode.beam_size = to_int("decode.beam_size", *v);
    if (const auto* v = take("decode.max_len")) c.decode.max_len = to_int("decode.max_len", *v);
    if (const auto* v = take("decode.length_penalty"))
        c.decode.length_penalty = to_float("decode.length_penalty", *v);

    if (const auto* v = take("paths.data")) c.data_path = *v;
    if (const auto* v = take("paths.checkpoint")) c.checkpoint_path = *v;
    if (const auto* v = take("paths.report")) c.report_path = *v;

    if (const auto* v = take("experiment.kind")) c.experiment_kind = *v;
    if (const auto* v = take("experiment.p_grid")) c.p_grid = to_list<double>("experiment.p_grid", *v, to_float);
    if (const auto* v = take("experiment.k_grid")) c.k_grid = to_list<int>("experiment.k_grid", *v, to_int);
    if (const auto* v = take("experiment.seeds")) c.sweep_seeds = to_int("experiment.seeds", *v);

    // validation decoding shares the decode block
    c.train.val_decode = c.decode;
    // derived quantities
    c.model.vocab_size = Vocabulary::NUM_SPECIALS + 2 * c.world.vocab_per_lang;
    c.model.d_c = c.world.d_c;
    c.world.validate();
    c.model.validate();
    c.decode.validate();
    return c;
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.model.vocab_size = Vocabulary::NUM_SPECIALS + 2 * c.world.vocab_per_lang;
    c.model.d_c = c.world.d_c;
    return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    KvMap kv = parse_kv_file(path);
    for (const auto& o : overrides) apply_override(kv, o);
    return materialize(std::move(kv));
}

RunConfig RunConfig::from_overrides(const std::vector<std::string>& overrides) {
    KvMap kv;
    for (const auto& o : overrides) apply_override(kv, o);
    return materialize(std::move(kv));
}

std::string RunConfig::render() const {
    std::ostringstream os;
    os << "seed = " << seed << "\n\n";
    os << "[world]\n";
    os << "seed = " << world.seed << "\n";
    os << "n_objects = " << world.n_objects << "\n";
    os << "n_colors = " << world.n_colors << "\n";
    os << "n_actions = " << world.n_actions << "\n";
    os << "n_dets = " << world.n_dets << "\n";
    os << "n_advs = " << world.n_advs << "\n";
    os << "n_concept_clusters = " << world.n_concept_clusters << "\n";
    os << "vocab_per_lang = " << world.vocab_per_lang << "\n";
    os << "train_records = " << world.n_train << "\n";
    os << "valid_records = " << world.n_valid << "\n";
    os << "test_records = " << world.n_test << "\n";
    os << "latent_dim = " << world.latent_dim << "\n";
    os << "latent_noise = " << world.latent_noise << "\n";
    os << "d_c = " << world.d_c << "\n";
    os << "sigma_a = " << world.sigma_a << "\n";
    os << "sigma_b = " << world.sigma_b << "\n\n";
    os << "[model]\n";
    os << "d_b = " << model.d_b << "\n";
    os << "k = " << model.k << "\n";
    os << "n_layers = " << model.n_layers << "\n";
    os << "n_heads = " << model.n_heads << "\n";
    os << "d_ff = " << model.d_ff << "\n";
    os << "max_seq_len = " << model.max_seq_len << "\n";
    os << "mn_variant = " << mn_variant_name(model.mn_variant) << "\n";
    os << "prefix_position = " << prefix_position_name(model.prefix_position) << "\n";
    os << "dropout = " << model.dropout << "\n\n";
    os << "[train]\n";
    os << "seed = " << train.seed << "\n";
    os << "stage = " << train.stage << "\n";
    os << "mode = " << train_mode_name(train.mode) << "\n";
    os << "epochs = " << train.epochs << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "lr0 = " << train.lr0 << "\n";
    os << "schedule_power = " << train.schedule_power << "\n";
    os << "weight_decay = " << train.weight_decay << "\n";
    os << "beta1 = " << train.beta1 << "\n";
    os << "beta2 = " << train.beta2 << "\n";
    os << "eps = " << train.eps << "\n";
    os << "clip_norm = " << train.clip_norm << "\n";
    os << "caption_lang = " << caption_lang_name(train.caption_lang) << "\n";
    os << "src_lang = " << train.src_lang << "\n";
    os << "tgt_lang = " << train.tgt_lang << "\n";
    os << "early_stop = " << (train.early_stop ? "true" : "false") << "\n";
    os << "patience = " << train.patience << "\n";
    os << "min_delta = " << train.min_delta << "\n\n";
    os << "[decode]\n";
    os << "beam_size = " << decode.beam_size << "\n";
    os << "max_len = " << decode.max_len << "\n";
    os << "length_penalty = " << decode.length_penalty << "\n\n";
    os << "[paths]\n";
    os << "data = " << data_path << "\n";
    os << "checkpoint = " << checkpoint_path << "\n";
    os << "report = " << report_path << "\n\n";
    os << "[experiment]\n";
    os << "kind = " << experiment_kind << "\n";
    os << "p_grid = ";
    for (size_t i = 0; i < p_grid.size(); ++i) os << (i ? "," : "") << p_grid[i];
    os << "\n";
    os << "k_grid = ";
    for (size_t i = 0; i < k_grid.size(); ++i) os << (i ? "," : "") << k_grid[i];
    os << "\n";
    os << "seeds = " << sweep_seeds << "\n";
    return os.str();
}

}  // namespace prefixmt
