#include <cstring>
#include <filesystem>
#include <fstream>

#include "prefixmt/train.hpp"

namespace prefixmt {

namespace {

// little-endian fixed-order binary stream
struct Writer {
    std::string buf;

    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void i32(int32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void floats(const std::vector<float>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(float));
    }
    void tensor(const Tensor& t) {
        u32(static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) i32(t.dim(i));
        u8(t.requires_grad() ? 1 : 0);
        raw(t.values().data(), t.size() * sizeof(float));
    }
};

struct Reader {
    const std::string& buf;
    size_t off = 0;

    void raw(void* p, size_t n) {
        if (off + n > buf.size()) throw CheckpointError("checkpoint truncated");
        std::memcpy(p, buf.data() + off, n);
        off += n;
    }
    uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    int32_t i32() { int32_t v; raw(&v, 4); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    int64_t i64() { int64_t v; raw(&v, 8); return v; }
    float f32() { float v; raw(&v, 4); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    std::string str() {
        const uint32_t n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<float> floats() {
        const uint64_t n = u64();
        std::vector<float> v(n);
        raw(v.data(), n * sizeof(float));
        return v;
    }
    Tensor tensor() {
        const uint32_t nd = u32();
        std::vector<int> shape(nd);
        for (uint32_t i = 0; i < nd; ++i) shape[i] = i32();
        const bool rg = u8() != 0;
        size_t n = 1;
        for (int d : shape) n *= static_cast<size_t>(d);
        std::vector<float> vals(n);
        raw(vals.data(), n * sizeof(float));
        return Tensor::from(std::move(shape), std::move(vals), rg);
    }
};

void write_model_cfg(Writer& w, const ModelConfig& c) {
    w.i32(c.vocab_size);
    w.i32(c.d_b);
    w.i32(c.d_c);
    w.i32(c.k);
    w.i32(c.n_layers);
    w.i32(c.n_heads);
    w.i32(c.d_ff);
    w.i32(c.max_seq_len);
    w.u8(static_cast<uint8_t>(c.mn_variant));
    w.u8(static_cast<uint8_t>(c.prefix_position));
    w.f32(c.dropout);
}

ModelConfig read_model_cfg(Reader& r) {
    ModelConfig c;
    c.vocab_size = r.i32();
    c.d_b = r.i32();
    c.d_c = r.i32();
    c.k = r.i32();
    c.n_layers = r.i32();
    c.n_heads = r.i32();
    c.d_ff = r.i32();
    c.max_seq_len = r.i32();
    c.mn_variant = static_cast<MnVariant>(r.u8());
    c.prefix_position = static_cast<PrefixPosition>(r.u8());
    c.dropout = r.f32();
    return c;
}

void write_train_cfg(Writer& w, const TrainConfig& c) {
    w.i32(c.stage);
    w.u8(static_cast<uint8_t>(c.mode));
    w.i32(c.epochs);
    w.i32(c.batch_size);
    w.f32(c.lr0);
    w.f32(c.schedule_power);
    w.f32(c.weight_decay);
    w.f32(c.beta1);
    w.f32(c.beta2);
    w.f32(c.eps);
    w.f32(c.clip_norm);
    w.u64(c.seed);
    w.u8(static_cast<uint8_t>(c.caption_lang));
    w.i32(c.src_lang);
    w.i32(c.tgt_lang);
    w.u8(c.early_stop ? 1 : 0);
    w.i32(c.patience);
    w.f32(c.min_delta);
    w.i32(c.val_decode.beam_size);
    w.i32(c.val_decode.max_len);
    w.f32(c.val_decode.length_penalty);
}

TrainConfig read_train_cfg(Reader& r) {
    TrainConfig c;
    c.stage = r.i32();
    c.mode = static_cast<TrainMode>(r.u8());
    c.epochs = r.i32();
    c.batch_size = r.i32();
    c.lr0 = r.f32();
    c.schedule_power = r.f32();
    c.weight_decay = r.f32();
    c.beta1 = r.f32();
    c.beta2 = r.f32();
    c.eps = r.f32();
    c.clip_norm = r.f32();
    c.seed = r.u64();
    c.caption_lang = static_cast<CaptionLang>(r.u8());
    c.src_lang = r.i32();
    c.tgt_lang = r.i32();
    c.early_stop = r.u8() != 0;
    c.patience = r.i32();
    c.min_delta = r.f32();
    c.val_decode.beam_size = r.i32();
    c.val_decode.max_len = r.i32();
    c.val_decode.length_penalty = r.f32();
    return c;
}

}  // namespace

uint64_t Checkpoint::param_group_hash(char g) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& p : params) {
        if (p.group != g) continue;
        h = fnv1a64(p.name.data(), p.name.size(), h);
        h = tensor_hash(p.tensor, h);
    }
    return h;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    Writer w;
    w.raw(Checkpoint::kMagic, 7);
    w.u8(Checkpoint::kVersion);

    // config section
    write_model_cfg(w, c.model_cfg);
    write_train_cfg(w, c.train_cfg);
    w.str(c.config_echo);
    w.i32(c.stage);
    w.u8(static_cast<uint8_t>(c.mode));
    w.i32(c.resolved_caption_lang);
    w.i64(c.epochs_done);
    w.i64(c.step);
    w.i64(c.total_steps);
    w.f64(c.best_metric);
    w.i64(c.best_epoch);
    w.u8(c.done);

    // frozen oracle section
    w.u64(c.oracle_seed);
    w.i32(c.d_c);
    w.i32(c.latent_dim);
    w.i32(c.words_per_lang);
    w.f32(c.sigma_a);
    w.f32(c.sigma_b);
    w.tensor(c.oracle_image_map);
    w.tensor(c.oracle_table_a);
    w.tensor(c.oracle_table_b);
    w.u64(c.oracle_image_hash);
    w.u64(c.oracle_text_hash);

    // parameter groups
    w.u32(static_cast<uint32_t>(c.params.size()));
    for (const auto& p : c.params) {
        w.str(p.name);
        w.u8(static_cast<uint8_t>(p.group));
        w.tensor(p.tensor);
    }
    w.u32(static_cast<uint32_t>(c.best_params.size()));
    for (const auto& p : c.best_params) {
        w.str(p.name);
        w.u8(static_cast<uint8_t>(p.group));
        w.tensor(p.tensor);
    }

    // optimizer
    w.u32(static_cast<uint32_t>(c.opt.size()));
    for (const auto& o : c.opt) {
        w.str(o.name);
        w.i64(o.t);
        w.floats(o.m);
        w.floats(o.v);
    }
    w.i64(c.opt_invocations);

    // rng
    for (uint64_t s : c.rng_state) w.u64(s);

    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    os.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!os) throw CheckpointError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), Checkpoint::kMagic, 7) != 0)
        throw CheckpointError("bad checkpoint magic (expected PFXMT01): " + path);
    Reader r{buf, 7};
    const uint8_t version = r.u8();
    if (version != Checkpoint::kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (expected " + std::to_string(Checkpoint::kVersion) + ")");

    Checkpoint c;
    c.model_cfg = read_model_cfg(r);
    c.train_cfg = read_train_cfg(r);
    c.config_echo = r.str();
    c.stage = r.i32();
    c.mode = static_cast<TrainMode>(r.u8());
    c.resolved_caption_lang = r.i32();
    c.epochs_done = r.i64();
    c.step = r.i64();
    c.total_steps = r.i64();
    c.best_metric = r.f64();
    c.best_epoch = r.i64();
    c.done = r.u8();

    c.oracle_seed = r.u64();
    c.d_c = r.i32();
    c.latent_dim = r.i32();
    c.words_per_lang = r.i32();
    c.sigma_a = r.f32();
    c.sigma_b = r.f32();
    c.oracle_image_map = r.tensor();
    c.oracle_table_a = r.tensor();
    c.oracle_table_b = r.tensor();
    c.oracle_image_hash = r.u64();
    c.oracle_text_hash = r.u64();

    const uint32_t np = r.u32();
    for (uint32_t i = 0; i < np; ++i) {
        Checkpoint::ParamEntry p;
        p.name = r.str();
        p.group = static_cast<char>(r.u8());
        p.tensor = r.tensor();
        c.params.push_back(std::move(p));
    }
    const uint32_t nb = r.u32();
    for (uint32_t i = 0; i < nb; ++i) {
        Checkpoint::ParamEntry p;
        p.name = r.str();
        p.group = static_cast<char>(r.u8());
        p.tensor = r.tensor();
        c.best_params.push_back(std::move(p));
    }
    const uint32_t no = r.u32();
    for (uint32_t i = 0; i < no; ++i) {
        Checkpoint::OptEntry o;
        o.name = r.str();
        o.t = r.i64();
        o.m = r.floats();
        o.v = r.floats();
        c.opt.push_back(std::move(o));
    }
    c.opt_invocations = r.i64();
    for (auto& s : c.rng_state) s = r.u64();

    // integrity: the stored hashes must match the stored oracle tensors
    Oracle check = oracle_from_checkpoint(c);
    if (check.image_hash() != c.oracle_image_hash || check.text_hash() != c.oracle_text_hash)
        throw CheckpointError("oracle content hash mismatch in checkpoint: " + path);
    return c;
}

Oracle oracle_from_checkpoint(const Checkpoint& c) {
    return Oracle::restore(c.oracle_seed, c.d_c, c.latent_dim, c.words_per_lang, c.sigma_a,
                           c.sigma_b, c.oracle_image_map, c.oracle_table_a, c.oracle_table_b);
}

SeqModel model_from_checkpoint(const Checkpoint& c, bool use_best_params) {
    SeqModel m = SeqModel::init(c.model_cfg, 0);
    const auto& source = use_best_params && !c.best_params.empty() ? c.best_params : c.params;
    auto targets = m.all_parameters();
    if (targets.size() != source.size())
        throw CheckpointError("checkpoint parameter count does not match the model config");
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].name != source[i].name)
            throw CheckpointError("checkpoint parameter order mismatch at " + source[i].name);
        if (targets[i].tensor.shape() != source[i].tensor.shape())
            throw CheckpointError("checkpoint parameter shape mismatch at " + source[i].name);
        auto dst = targets[i].tensor.values_mut();
        auto src = source[i].tensor.values();
        std::memcpy(dst.data(), src.data(), dst.size() * sizeof(float));
    }
    return m;
}

void verify_oracle_compatible(const Checkpoint& c, const Oracle& world_oracle) {
    if (c.oracle_image_hash != world_oracle.image_hash())
        throw CheckpointError("oracle image-side hash mismatch: checkpoint was built for a different oracle");
    if (c.mode != TrainMode::FinetuneOracleText &&
        c.oracle_text_hash != world_oracle.text_hash())
        throw CheckpointError("oracle text-side hash mismatch: checkpoint was built for a different oracle");
}

}  // namespace prefixmt
