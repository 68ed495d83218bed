#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "prefixmt/experiments.hpp"
#include "prefixmt/train.hpp"
#include "testutil.hpp"

using namespace prefixmt;

namespace {

WorldConfig tiny_world(uint64_t seed = 21) {
    WorldConfig w;
    w.seed = seed;
    w.n_train = 120;
    w.n_valid = 24;
    w.n_test = 24;
    w.n_concept_clusters = 60;
    return w;
}

ModelConfig tiny_model(const WorldConfig& w, int k = 4) {
    ModelConfig m;
    m.vocab_size = Vocabulary::NUM_SPECIALS + 2 * w.vocab_per_lang;
    m.d_b = 32;
    m.d_c = w.d_c;
    m.k = k;
    m.n_layers = 1;
    m.n_heads = 2;
    m.d_ff = 64;
    m.max_seq_len = 16;
    return m;
}

TrainConfig fast_train(int stage, TrainMode mode = TrainMode::Standard, int epochs = 2) {
    TrainConfig t;
    t.stage = stage;
    t.mode = mode;
    t.epochs = epochs;
    t.batch_size = 16;
    t.lr0 = 1e-3f;
    t.seed = 5;
    t.early_stop = false;
    t.val_decode.beam_size = 2;
    return t;
}

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("stage 1 freezes the encoder and the oracle, trains the rest") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    const uint64_t he = model.group_hash('e');
    const uint64_t hm = model.group_hash('m');
    const uint64_t hd = model.group_hash('d');
    const uint64_t ho = oracle.full_hash();

    TrainOutput out = train_stage(corpus, model, oracle, fast_train(1));
    CHECK(model.group_hash('e') == he);
    CHECK(oracle.full_hash() == ho);
    CHECK(model.group_hash('m') != hm);
    CHECK(model.group_hash('d') != hd);
    CHECK(out.checkpoint.stage == 1);
    CHECK(out.checkpoint.mode == TrainMode::Standard);
    CHECK(out.checkpoint.resolved_caption_lang == 0);  // sigma_a < sigma_b
    CHECK(out.checkpoint.done == 1);
}

TEST_CASE("stage 1 caption loss strictly decreases over the first three epochs") {
    WorldConfig w = tiny_world(31);
    w.n_train = 240;
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w, 6), 7);
    TrainOutput out = train_stage(corpus, model, oracle, fast_train(1, TrainMode::Standard, 3));
    REQUIRE(out.log.size() == 3);
    CHECK(out.log[0].train_loss > out.log[1].train_loss);
    CHECK(out.log[1].train_loss > out.log[2].train_loss);
}

TEST_CASE("stage 2 standard keeps the oracle frozen and never encodes images") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    const uint64_t ho = oracle.full_hash();
    oracle.reset_counters();
    train_stage(corpus, model, oracle, fast_train(2));
    CHECK(oracle.full_hash() == ho);
    CHECK(oracle.image_calls() == 0);  // call-audit: text prefixes only
    CHECK(oracle.text_calls() > 0);
}

TEST_CASE("reg mode consumes image latents at train time") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    oracle.reset_counters();
    train_stage(corpus, model, oracle, fast_train(2, TrainMode::Reg));
    CHECK(oracle.image_calls() > 0);
}

TEST_CASE("finetune-oracle-text changes only the text side") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    const uint64_t img = oracle.image_hash();
    const uint64_t txt = oracle.text_hash();
    TrainOutput out = train_stage(corpus, model, oracle, fast_train(2, TrainMode::FinetuneOracleText));
    CHECK(oracle.image_hash() == img);
    CHECK(oracle.text_hash() != txt);
    CHECK_FALSE(oracle.text_table(0).requires_grad());  // re-frozen after the run
    CHECK(out.checkpoint.oracle_image_hash == img);
}

TEST_CASE("single stage steps twice per batch with per-substep freezing") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    TrainConfig cfg = fast_train(1, TrainMode::SingleStage, 2);
    TrainOutput out = train_stage(corpus, model, oracle, cfg);
    const int64_t batches = (120 + cfg.batch_size - 1) / cfg.batch_size;
    CHECK(out.checkpoint.step == 2 * batches * cfg.epochs);
    // encoder parameters were stepped only by the translate substep
    int64_t t_enc = -1, t_dec = -1;
    for (const auto& o : out.checkpoint.opt) {
        if (o.name == "tok_emb") t_enc = o.t;
        if (o.name == "pos_dec") t_dec = o.t;
    }
    REQUIRE(t_enc >= 0);
    REQUIRE(t_dec >= 0);
    CHECK(t_dec == 2 * t_enc);
    CHECK(out.checkpoint.done == 1);
}

TEST_CASE("multilingual captioning trains to completion") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    TrainOutput out =
        train_stage(corpus, model, oracle, fast_train(1, TrainMode::MultilingualCaption));
    CHECK(out.checkpoint.done == 1);
    CHECK(out.checkpoint.resolved_caption_lang == -2);
}

TEST_CASE("text-only baseline needs k=0 and trains without the oracle") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel bad = SeqModel::init(tiny_model(w, 4), 3);
    CHECK_THROWS_AS(
        train_stage(corpus, bad, oracle, fast_train(2, TrainMode::TextOnlyBaseline)),
        std::invalid_argument);

    SeqModel model = SeqModel::init(tiny_model(w, 0), 3);
    oracle.reset_counters();
    TrainOutput out = train_stage(corpus, model, oracle, fast_train(2, TrainMode::TextOnlyBaseline));
    CHECK(out.checkpoint.done == 1);
    CHECK(oracle.image_calls() == 0);
    CHECK(oracle.text_calls() == 0);
    CHECK(model.theta_m().empty());
}

TEST_CASE("invalid mode/stage combinations are rejected") {
    TrainConfig c = fast_train(1, TrainMode::Reg);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    TrainConfig c2 = fast_train(2, TrainMode::MultilingualCaption);
    CHECK_THROWS_AS(c2.validate(), std::invalid_argument);
    TrainConfig c3 = fast_train(1);
    c3.caption_lang = CaptionLang::Both;
    CHECK_THROWS_AS(c3.validate(), std::invalid_argument);
}

TEST_CASE("checkpoints round trip bit-exactly") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    TrainOutput out = train_stage(corpus, model, oracle, fast_train(1));

    const std::string p1 = "/tmp/pmt_ck1.ckpt", p2 = "/tmp/pmt_ck2.ckpt";
    save_checkpoint(out.checkpoint, p1);
    Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    CHECK(file_bytes(p1) == file_bytes(p2));

    // corrupted header carries version language in the error
    {
        std::string bytes = file_bytes(p1);
        bytes[0] = 'X';
        std::ofstream os("/tmp/pmt_bad.ckpt", std::ios::binary);
        os << bytes;
    }
    try {
        load_checkpoint("/tmp/pmt_bad.ckpt");
        FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("PFXMT01") != std::string::npos);
    }
}

TEST_CASE("oracle hash mismatch is refused on load verification") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Oracle oracle = Oracle::build(w);
    SeqModel model = SeqModel::init(tiny_model(w), 3);
    TrainOutput out = train_stage(corpus, model, oracle, fast_train(1));
    WorldConfig other = tiny_world(99);
    Oracle other_oracle = Oracle::build(other);
    CHECK_THROWS_AS(verify_oracle_compatible(out.checkpoint, other_oracle), CheckpointError);
    CHECK_NOTHROW(verify_oracle_compatible(out.checkpoint, oracle));
}

TEST_CASE("identical seeds produce bit-identical checkpoints") {
    auto run = []() {
        WorldConfig w = tiny_world();
        Corpus corpus = generate_world(w);
        Oracle oracle = Oracle::build(w);
        SeqModel model = SeqModel::init(tiny_model(w), 3);
        TrainOutput out = train_stage(corpus, model, oracle, fast_train(1));
        save_checkpoint(out.checkpoint, "/tmp/pmt_det.ckpt");
        return file_bytes("/tmp/pmt_det.ckpt");
    };
    const std::string a = run();
    const std::string b = run();
    CHECK(a == b);
}

TEST_CASE("resume from a mid-run checkpoint matches the uninterrupted run") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    TrainConfig cfg = fast_train(1, TrainMode::Standard, 4);

    // uninterrupted
    Oracle o1 = Oracle::build(w);
    SeqModel m1 = SeqModel::init(tiny_model(w), 3);
    TrainOutput full = train_stage(corpus, m1, o1, cfg);
    save_checkpoint(full.checkpoint, "/tmp/pmt_full.ckpt");

    // two epochs, pause, resume
    Oracle o2 = Oracle::build(w);
    SeqModel m2 = SeqModel::init(tiny_model(w), 3);
    TrainOutput half = train_stage(corpus, m2, o2, cfg, nullptr, 2);
    CHECK(half.checkpoint.done == 0);
    save_checkpoint(half.checkpoint, "/tmp/pmt_half.ckpt");
    Checkpoint mid = load_checkpoint("/tmp/pmt_half.ckpt");

    Oracle o3 = Oracle::build(w);
    SeqModel m3 = SeqModel::init(tiny_model(w), 3);
    TrainOutput resumed = train_stage(corpus, m3, o3, cfg, &mid);
    save_checkpoint(resumed.checkpoint, "/tmp/pmt_resumed.ckpt");

    CHECK(file_bytes("/tmp/pmt_full.ckpt") == file_bytes("/tmp/pmt_resumed.ckpt"));
}

TEST_CASE("noised corpora keep targets intact and respect the source language") {
    WorldConfig w = tiny_world();
    Corpus corpus = generate_world(w);
    Corpus noised = apply_source_noise(corpus, 0, 1.0, NoiseMode::Drop, 77);
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        CHECK(noised.records[i].caption_a.empty());
        CHECK(noised.records[i].caption_b == corpus.records[i].caption_b);
    }
    Corpus masked = mask_grounded_sources(corpus, 0);
    for (size_t i = 0; i < corpus.records.size(); ++i) {
        for (int pos : corpus.records[i].grounded)
            CHECK(masked.records[i].caption_a[static_cast<size_t>(pos)] == Vocabulary::MASK);
        CHECK(masked.records[i].caption_b == corpus.records[i].caption_b);
    }
}
