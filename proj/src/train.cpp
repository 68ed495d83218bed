#include "prefixmt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace prefixmt {

const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Standard: return "standard";
        case TrainMode::SingleStage: return "single_stage";
        case TrainMode::FinetuneOracleText: return "finetune_oracle_text";
        case TrainMode::Reg: return "reg";
        case TrainMode::MultilingualCaption: return "multilingual_caption";
        case TrainMode::TextOnlyBaseline: return "text_only";
    }
    return "?";
}

TrainMode train_mode_from_name(const std::string& name) {
    std::string s = name;
    for (char& c : s)
        if (c == '-') c = '_';
    if (s == "standard") return TrainMode::Standard;
    if (s == "single_stage") return TrainMode::SingleStage;
    if (s == "finetune_oracle_text") return TrainMode::FinetuneOracleText;
    if (s == "reg") return TrainMode::Reg;
    if (s == "multilingual_caption") return TrainMode::MultilingualCaption;
    if (s == "text_only") return TrainMode::TextOnlyBaseline;
    throw std::invalid_argument("unknown train mode: " + s);
}

const char* caption_lang_name(CaptionLang c) {
    switch (c) {
        case CaptionLang::Auto: return "auto";
        case CaptionLang::A: return "a";
        case CaptionLang::B: return "b";
        case CaptionLang::Both: return "both";
    }
    return "?";
}

CaptionLang caption_lang_from_name(const std::string& s) {
    if (s == "auto") return CaptionLang::Auto;
    if (s == "a") return CaptionLang::A;
    if (s == "b") return CaptionLang::B;
    if (s == "both") return CaptionLang::Both;
    throw std::invalid_argument("unknown caption language: " + s);
}

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs and batch_size must be >= 1");
    if (lr0 <= 0.0f) throw std::invalid_argument("lr0 must be positive");
    if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
        throw std::invalid_argument("betas must lie in [0, 1)");
    if (eps <= 0.0f) throw std::invalid_argument("eps must be positive");
    if (src_lang == tgt_lang || src_lang < 0 || src_lang > 1 || tgt_lang < 0 || tgt_lang > 1)
        throw std::invalid_argument("src/tgt languages must be distinct and in {0, 1}");
    if (mode == TrainMode::MultilingualCaption && stage != 1)
        throw std::invalid_argument("multilingual captioning is a stage-1 mode");
    if ((mode == TrainMode::Reg || mode == TrainMode::FinetuneOracleText ||
         mode == TrainMode::TextOnlyBaseline) && stage != 2)
        throw std::invalid_argument(std::string(train_mode_name(mode)) + " is a stage-2 mode");
    if (caption_lang == CaptionLang::Both && mode != TrainMode::MultilingualCaption)
        throw std::invalid_argument("caption_lang=both requires the multilingual_caption mode");
    val_decode.validate();
}

namespace {

struct StageSetup {
    TaskKind task = TaskKind::Translate;
    int caption_lang = -1;  // resolved; -2 = both languages
    bool freeze_encoder = false;
    bool oracle_text_trainable = false;
    bool caption_stage = false;   // stage-1-style loss/validation
    DecodeMode val_mode = DecodeMode::HallucinateFromText;
};

StageSetup resolve_setup(const Corpus& corpus, const SeqModel& model, Oracle& oracle,
                         const TrainConfig& cfg) {
    StageSetup s;
    const bool needs_caption = cfg.mode == TrainMode::SingleStage || cfg.stage == 1;
    if (cfg.mode == TrainMode::TextOnlyBaseline) {
        if (model.cfg.k != 0)
            throw std::invalid_argument("text_only mode trains a k=0 model");
    } else if (model.cfg.k <= 0) {
        throw std::invalid_argument("prefix modes need k >= 1");
    }
    if (needs_caption) {
        if (cfg.mode == TrainMode::MultilingualCaption || cfg.caption_lang == CaptionLang::Both) {
            s.caption_lang = -2;
        } else {
            switch (cfg.caption_lang) {
                case CaptionLang::Auto:
                    s.caption_lang =
                        oracle.select_caption_language(corpus, cfg.src_lang, cfg.tgt_lang);
                    break;
                case CaptionLang::A: s.caption_lang = 0; break;
                case CaptionLang::B: s.caption_lang = 1; break;
                case CaptionLang::Both: s.caption_lang = -2; break;
            }
        }
    }
    if (cfg.mode == TrainMode::SingleStage) {
        s.task = TaskKind::Translate;  // the caption substep is handled explicitly
        s.caption_stage = false;
        s.val_mode = DecodeMode::HallucinateFromText;
    } else if (cfg.stage == 1) {
        s.task = TaskKind::Caption;
        s.freeze_encoder = true;
        s.caption_stage = true;
    } else {
        s.task = TaskKind::Translate;
        s.oracle_text_trainable = cfg.mode == TrainMode::FinetuneOracleText;
        s.val_mode = cfg.mode == TrainMode::Reg ? DecodeMode::GroundTruthImage
                                                : DecodeMode::HallucinateFromText;
    }
    return s;
}

std::vector<int> shifted_of(const std::vector<int>& framed) {
    return {framed.begin(), framed.end() - 1};
}

std::vector<int> labels_of(const std::vector<int>& framed) {
    return {framed.begin() + 1, framed.end()};
}

struct RecordLoss {
    Tensor loss;
    int tokens = 0;
};

RecordLoss caption_loss(const SeqModel& model, const Oracle& oracle, const Corpus& corpus,
                        const Triplet& t, int lang, const ForwardCtx& ctx) {
    Tensor h = oracle.encode_image(t.latent).h;
    PrefixSequence z = map_prefix(model, h);
    Tensor memory = encode_source(model, trivial_source(), ctx);
    const std::vector<int> framed = frame_sentence(corpus.caption(t, lang), lang, corpus.vocab);
    const auto shifted = shifted_of(framed);
    const auto labels = labels_of(framed);
    Tensor logits = forward_logits(model, z, shifted, memory, ctx);
    return {sequence_loss(logits, labels, model.cfg.k), static_cast<int>(labels.size())};
}

RecordLoss translate_loss(const SeqModel& model, const Oracle& oracle, const Corpus& corpus,
                          const Triplet& t, const TrainConfig& cfg, const ForwardCtx& ctx) {
    PrefixSequence z;
    z.k = model.cfg.k;
    const auto& src = corpus.caption(t, cfg.src_lang);
    if (model.cfg.k > 0) {
        Tensor h = cfg.mode == TrainMode::Reg ? oracle.encode_image(t.latent).h
                                              : oracle.encode_text(src, cfg.src_lang).h;
        z = map_prefix(model, h);
    }
    Tensor memory = encode_source(model, frame_sentence(src, cfg.src_lang, corpus.vocab), ctx);
    const std::vector<int> framed =
        frame_sentence(corpus.caption(t, cfg.tgt_lang), cfg.tgt_lang, corpus.vocab);
    const auto shifted = shifted_of(framed);
    const auto labels = labels_of(framed);
    Tensor logits = forward_logits(model, z, shifted, memory, ctx);
    return {sequence_loss(logits, labels, model.cfg.k), static_cast<int>(labels.size())};
}

// token-weighted mean over the batch, assembled in record order
Tensor combine_losses(const std::vector<RecordLoss>& parts) {
    int total = 0;
    for (const auto& p : parts) total += p.tokens;
    Tensor out;
    for (size_t i = 0; i < parts.size(); ++i) {
        const float w = static_cast<float>(parts[i].tokens) / static_cast<float>(total);
        Tensor term = scale(parts[i].loss, w);
        out = i == 0 ? term : add(out, term);
    }
    return out;
}

void clear_all_grads(SeqModel& model, Oracle& oracle) {
    model.zero_all_grads();
    for (Tensor t : oracle.text_parameters()) t.clear_grad();
}

// teacher-forced validation pass; returns {mean loss, token accuracy}
std::pair<double, double> validate_teacher_forced(const SeqModel& model, const Oracle& oracle,
                                                  const Corpus& corpus, const TrainConfig& cfg,
                                                  const StageSetup& setup) {
    ForwardCtx ctx;  // eval mode
    double loss_sum = 0.0;
    long correct = 0, total_tokens = 0;
    int n = 0;
    for (const Triplet* t : corpus.split(Split::Valid)) {
        const int lang = setup.caption_lang == -2 ? cfg.src_lang : setup.caption_lang;
        RecordLoss rl = setup.caption_stage
                            ? caption_loss(model, oracle, corpus, *t, lang, ctx)
                            : translate_loss(model, oracle, corpus, *t, cfg, ctx);
        loss_sum += rl.loss.item();
        ++n;
        // recompute logits for accuracy on caption stages
        if (setup.caption_stage) {
            Tensor h = oracle.encode_image(t->latent).h;
            PrefixSequence z = map_prefix(model, h);
            Tensor memory = encode_source(model, trivial_source(), ctx);
            const auto framed = frame_sentence(corpus.caption(*t, lang), lang, corpus.vocab);
            const auto shifted = shifted_of(framed);
            const auto labels = labels_of(framed);
            Tensor logits = forward_logits(model, z, shifted, memory, ctx);
            const int k = model.cfg.k;
            for (size_t i = 0; i < labels.size(); ++i) {
                const float* row =
                    logits.values().data() + (static_cast<size_t>(1 + k) + i) * model.cfg.vocab_size;
                int best = 0;
                for (int j = 1; j < model.cfg.vocab_size; ++j)
                    if (row[j] > row[best]) best = j;
                correct += best == labels[i] ? 1 : 0;
                ++total_tokens;
            }
        }
    }
    const double acc = total_tokens > 0 ? static_cast<double>(correct) / total_tokens : 0.0;
    return {loss_sum / std::max(1, n), acc};
}

std::vector<Checkpoint::ParamEntry> snapshot_params(const SeqModel& model) {
    std::vector<Checkpoint::ParamEntry> out;
    auto push = [&](char g, const std::vector<NamedTensor>& nts) {
        for (const auto& nt : nts) {
            Checkpoint::ParamEntry e;
            e.name = nt.name;
            e.group = g;
            e.tensor = Tensor::from(nt.tensor.shape(),
                                    {nt.tensor.values().begin(), nt.tensor.values().end()});
            out.push_back(std::move(e));
        }
    };
    push('m', model.theta_m());
    push('e', model.theta_e());
    push('d', model.theta_d());
    return out;
}

void restore_params(SeqModel& model, const std::vector<Checkpoint::ParamEntry>& src) {
    auto targets = model.all_parameters();
    if (targets.size() != src.size())
        throw CheckpointError("parameter snapshot does not match the model");
    for (size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].name != src[i].name)
            throw CheckpointError("parameter snapshot order mismatch at " + src[i].name);
        auto dst = targets[i].tensor.values_mut();
        std::memcpy(dst.data(), src[i].tensor.values().data(), dst.size() * sizeof(float));
    }
}

bool model_cfg_equal(const ModelConfig& a, const ModelConfig& b) {
    return a.vocab_size == b.vocab_size && a.d_b == b.d_b && a.d_c == b.d_c && a.k == b.k &&
           a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.d_ff == b.d_ff &&
           a.max_seq_len == b.max_seq_len && a.mn_variant == b.mn_variant &&
           a.prefix_position == b.prefix_position && a.dropout == b.dropout;
}

}  // namespace

TrainOutput train_stage(const Corpus& corpus, SeqModel& model, Oracle& oracle,
                        const TrainConfig& cfg, const Checkpoint* resume,
                        int stop_after_epochs, const std::string& config_echo) {
    cfg.validate();
    const StageSetup setup = resolve_setup(corpus, model, oracle, cfg);
    const bool single_stage = cfg.mode == TrainMode::SingleStage;

    // FT unfreezes the text side; only the source-language table actually
    // appears in the stage-2 graph, so that is the tensor that trains
    oracle.set_text_trainable(false);
    if (setup.oracle_text_trainable) {
        Tensor src_table = oracle.text_table(cfg.src_lang);
        src_table.set_requires_grad(true);
    }
    model.set_group_trainable('m', model.cfg.k > 0);
    model.set_group_trainable('e', !setup.freeze_encoder);
    model.set_group_trainable('d', true);

    const uint64_t pre_hash_e = model.group_hash('e');
    const uint64_t pre_oracle_image = oracle.image_hash();
    const uint64_t pre_oracle_text = oracle.text_hash();

    // trainable set in a fixed order; the optimizer state aligns with it
    std::vector<NamedTensor> trainable;
    for (const auto& nt : model.theta_m()) trainable.push_back(nt);
    if (!setup.freeze_encoder || single_stage)
        for (const auto& nt : model.theta_e()) trainable.push_back(nt);
    for (const auto& nt : model.theta_d()) trainable.push_back(nt);
    if (setup.oracle_text_trainable) {
        trainable.push_back({cfg.src_lang == 0 ? "oracle.table_a" : "oracle.table_b",
                             oracle.text_table(cfg.src_lang)});
    }
    std::vector<uint8_t> mask_all(trainable.size(), 1);
    std::vector<uint8_t> mask_no_encoder(trainable.size(), 1);
    for (size_t i = 0; i < trainable.size(); ++i) {
        const std::string& n = trainable[i].name;
        const bool is_enc = n == "tok_emb" || n == "pos_enc" || n.rfind("enc.", 0) == 0;
        if (is_enc) mask_no_encoder[i] = 0;
    }

    AdamW opt(trainable, {cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay});

    const int cap_lang_for_batches = setup.caption_lang == -2 ? 0 : std::max(0, setup.caption_lang);
    const int64_t batches_per_epoch = static_cast<int64_t>(
        make_batches(corpus, Split::Train, cfg.batch_size, cfg.seed, 0, setup.task,
                     cap_lang_for_batches)
            .size());
    const int64_t steps_per_epoch = batches_per_epoch * (single_stage ? 2 : 1);
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    Rng train_rng(Rng::mix(cfg.seed, "train-rng"));
    int64_t step = 0;
    int64_t first_epoch = 0;
    double best_metric = -1.0;
    int64_t best_epoch = -1;
    std::vector<Checkpoint::ParamEntry> best_snapshot;

    if (resume) {
        if (!model_cfg_equal(resume->model_cfg, model.cfg))
            throw CheckpointError("incompatible resume: model configuration differs");
        if (resume->stage != cfg.stage || resume->mode != cfg.mode)
            throw CheckpointError("incompatible resume: stage or mode differs");
        if (resume->done) throw CheckpointError("incompatible resume: run already finished");
        verify_oracle_compatible(*resume, oracle);
        restore_params(model, resume->params);
        if (resume->opt.size() != trainable.size())
            throw CheckpointError("incompatible resume: optimizer state size differs");
        for (size_t i = 0; i < trainable.size(); ++i) {
            if (resume->opt[i].name != trainable[i].name)
                throw CheckpointError("incompatible resume: optimizer entry " +
                                      resume->opt[i].name);
            auto& st = opt.state_mut(i);
            st.t = resume->opt[i].t;
            st.m = resume->opt[i].m;
            st.v = resume->opt[i].v;
        }
        opt.set_invocations(resume->opt_invocations);
        train_rng.set_state(resume->rng_state);
        step = resume->step;
        first_epoch = resume->epochs_done;
        best_metric = resume->best_metric;
        best_epoch = resume->best_epoch;
        best_snapshot = resume->best_params;
        if (setup.oracle_text_trainable) {
            // FT resumes continue from the checkpoint's text tables
            Oracle restored = oracle_from_checkpoint(*resume);
            for (int lang = 0; lang < 2; ++lang) {
                Tensor dst_handle = oracle.text_table(lang);
                auto dst = dst_handle.values_mut();
                auto src = restored.text_table(lang).values();
                std::memcpy(dst.data(), src.data(), dst.size() * sizeof(float));
            }
        }
    }

    std::vector<TrainLogEntry> log;
    ForwardCtx train_ctx{true, &train_rng};
    int64_t epoch = first_epoch;
    bool hit_ceiling = false;

    auto run_batch_step = [&](const std::vector<RecordLoss>& parts,
                              const std::vector<uint8_t>& active) {
        Tensor batch_loss = combine_losses(parts);
        current_tape()->backward(batch_loss);
        clip_global_norm(opt.params(), cfg.clip_norm);
        const float lr = poly_decay_lr(step, total_steps, cfg.lr0, cfg.schedule_power);
        opt.step(lr, active);
        ++step;
        clear_all_grads(model, oracle);
        return static_cast<double>(batch_loss.item());
    };

    for (; epoch < cfg.epochs; ++epoch) {
        if (stop_after_epochs >= 0 && epoch - first_epoch >= stop_after_epochs) break;
        const auto batches = make_batches(corpus, Split::Train, cfg.batch_size, cfg.seed,
                                          static_cast<int>(epoch), setup.task,
                                          cap_lang_for_batches);
        double loss_sum = 0.0;
        int loss_n = 0;
        for (const Batch& batch : batches) {
            Tape tape;
            TapeScope scope(tape);
            if (single_stage) {
                // substep 1: captioning with the encoder frozen
                model.set_group_trainable('e', false);
                std::vector<RecordLoss> cap_parts;
                for (const Triplet* t : batch.records) {
                    if (setup.caption_lang == -2) {
                        cap_parts.push_back(caption_loss(model, oracle, corpus, *t, 0, train_ctx));
                        cap_parts.push_back(caption_loss(model, oracle, corpus, *t, 1, train_ctx));
                    } else {
                        cap_parts.push_back(
                            caption_loss(model, oracle, corpus, *t, setup.caption_lang, train_ctx));
                    }
                }
                loss_sum += run_batch_step(cap_parts, mask_no_encoder);
                ++loss_n;
                model.set_group_trainable('e', true);
                tape.reset();
                // substep 2: translation with everything trainable
                std::vector<RecordLoss> tr_parts;
                for (const Triplet* t : batch.records)
                    tr_parts.push_back(translate_loss(model, oracle, corpus, *t, cfg, train_ctx));
                loss_sum += run_batch_step(tr_parts, mask_all);
                ++loss_n;
            } else if (setup.task == TaskKind::Caption) {
                std::vector<RecordLoss> parts;
                for (const Triplet* t : batch.records) {
                    if (setup.caption_lang == -2) {
                        parts.push_back(caption_loss(model, oracle, corpus, *t, 0, train_ctx));
                        parts.push_back(caption_loss(model, oracle, corpus, *t, 1, train_ctx));
                    } else {
                        parts.push_back(
                            caption_loss(model, oracle, corpus, *t, setup.caption_lang, train_ctx));
                    }
                }
                loss_sum += run_batch_step(parts, mask_all);
                ++loss_n;
            } else {
                std::vector<RecordLoss> parts;
                for (const Triplet* t : batch.records)
                    parts.push_back(translate_loss(model, oracle, corpus, *t, cfg, train_ctx));
                loss_sum += run_batch_step(parts, mask_all);
                ++loss_n;
            }
        }

        TrainLogEntry entry;
        entry.stage = single_stage ? 0 : cfg.stage;
        entry.epoch = static_cast<int>(epoch) + 1;
        entry.train_loss = loss_sum / std::max(1, loss_n);
        auto [val_loss, val_acc] = validate_teacher_forced(model, oracle, corpus, cfg, setup);
        entry.val_loss = val_loss;
        if (setup.caption_stage) {
            entry.val_metric = val_acc;
        } else {
            entry.val_metric = evaluate_bleu(model, &oracle, corpus, Split::Valid, cfg.src_lang,
                                             cfg.tgt_lang, setup.val_mode, cfg.val_decode)
                                   .bleu;
        }
        log.push_back(entry);
        if (entry.val_metric > best_metric) {
            if (entry.val_metric > best_metric + cfg.min_delta) best_epoch = epoch;
            best_metric = entry.val_metric;
            best_snapshot = snapshot_params(model);
        }
        if (best_epoch < 0) best_epoch = epoch;
        const double ceiling = setup.caption_stage ? 1.0 : 100.0 - 1e-9;
        if (cfg.early_stop &&
            (entry.val_metric >= ceiling || epoch - best_epoch >= cfg.patience)) {
            hit_ceiling = true;
            ++epoch;
            break;
        }
    }

    const bool done = hit_ceiling || epoch >= cfg.epochs;

    // freezing contracts, proven by hash
    if (setup.freeze_encoder && model.group_hash('e') != pre_hash_e)
        throw TensorError("freezing contract violated: encoder parameters changed");
    if (oracle.image_hash() != pre_oracle_image)
        throw TensorError("freezing contract violated: oracle image map changed");
    if (!setup.oracle_text_trainable && oracle.text_hash() != pre_oracle_text)
        throw TensorError("freezing contract violated: oracle text tables changed");

    oracle.set_text_trainable(false);

    if (done && !best_snapshot.empty()) restore_params(model, best_snapshot);

    TrainOutput out;
    Checkpoint& c = out.checkpoint;
    c.model_cfg = model.cfg;
    c.train_cfg = cfg;
    c.config_echo = config_echo;
    c.stage = single_stage ? 0 : cfg.stage;
    c.mode = cfg.mode;
    c.resolved_caption_lang = setup.caption_lang;
    c.epochs_done = epoch;
    c.step = step;
    c.total_steps = total_steps;
    c.best_metric = best_metric;
    c.best_epoch = best_epoch;
    c.done = done ? 1 : 0;
    c.oracle_seed = oracle.seed();
    c.d_c = oracle.d_c();
    c.latent_dim = oracle.latent_dim();
    c.words_per_lang = oracle.words_per_lang();
    c.sigma_a = oracle.sigma(0);
    c.sigma_b = oracle.sigma(1);
    c.oracle_image_map = oracle.image_map();
    c.oracle_table_a = oracle.text_table(0);
    c.oracle_table_b = oracle.text_table(1);
    c.oracle_image_hash = oracle.image_hash();
    c.oracle_text_hash = oracle.text_hash();
    c.params = snapshot_params(model);
    c.best_params = best_snapshot.empty() ? snapshot_params(model) : std::move(best_snapshot);
    for (size_t i = 0; i < trainable.size(); ++i) {
        Checkpoint::OptEntry o;
        o.name = trainable[i].name;
        o.t = opt.state(i).t;
        o.m = opt.state(i).m;
        o.v = opt.state(i).v;
        c.opt.push_back(std::move(o));
    }
    c.opt_invocations = opt.invocations();
    c.rng_state = train_rng.state();
    out.log = std::move(log);
    return out;
}

TrainOutput train_standard_pipeline(const Corpus& corpus, SeqModel& model, Oracle& oracle,
                                    TrainConfig cfg, std::vector<TrainLogEntry>* full_log) {
    cfg.mode = TrainMode::Standard;
    cfg.stage = 1;
    TrainOutput s1 = train_stage(corpus, model, oracle, cfg);
    if (full_log)
        full_log->insert(full_log->end(), s1.log.begin(), s1.log.end());
    cfg.stage = 2;
    TrainOutput s2 = train_stage(corpus, model, oracle, cfg);
    if (full_log)
        full_log->insert(full_log->end(), s2.log.begin(), s2.log.end());
    return s2;
}

}  // namespace prefixmt
