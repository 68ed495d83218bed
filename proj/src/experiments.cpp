#include "prefixmt/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "prefixmt/kernels.hpp"

namespace prefixmt {

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

std::string escape_multiline(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\')
            out += "\\\\";
        else if (c == '\n')
            out += "\\n";
        else
            out += c;
    }
    return out;
}

}  // namespace

void EvalReport::add(const std::string& key, const std::string& value) {
    entries.emplace_back(key, value);
}

void EvalReport::add(const std::string& key, double value) { add(key, format_double(value)); }

void EvalReport::add(const std::string& key, int64_t value) { add(key, std::to_string(value)); }

void EvalReport::comment(const std::string& text) { entries.emplace_back("#", text); }

const std::string* EvalReport::find(const std::string& key) const {
    for (const auto& [k, v] : entries)
        if (k == key) return &v;
    return nullptr;
}

std::string EvalReport::text() const {
    std::string out;
    for (const auto& [k, v] : entries) {
        if (k == "#")
            out += "# " + v + "\n";
        else
            out += k + "=" + v + "\n";
    }
    return out;
}

void EvalReport::write(const std::string& path) const {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CorpusError("cannot open report for writing: " + path);
    os << text();
}

EvalReport EvalReport::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw CorpusError("cannot open report: " + path);
    EvalReport r;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') continue;  // comments (timing) are not data
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CorpusError("malformed report line: " + line);
        r.entries.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return r;
}

Corpus apply_source_noise(const Corpus& corpus, int src_lang, double p, NoiseMode mode,
                          uint64_t seed) {
    Corpus out = corpus;
    for (Triplet& t : out.records) {
        std::vector<int>& src = src_lang == 0 ? t.caption_a : t.caption_b;
        src = noise_tokens(src, p, Rng::mix(seed, static_cast<uint64_t>(t.id)), mode,
                           corpus.vocab);
    }
    return out;
}

Corpus mask_grounded_sources(const Corpus& corpus, int src_lang) {
    Corpus out = corpus;
    for (Triplet& t : out.records) {
        std::vector<int>& src = src_lang == 0 ? t.caption_a : t.caption_b;
        for (int pos : t.grounded) src[static_cast<size_t>(pos)] = Vocabulary::MASK;
    }
    return out;
}

namespace {

void echo_header(EvalReport& r, const char* kind, const ExperimentConfig& cfg) {
    r.comment("prefixmt report");
    r.add("report.kind", std::string(kind));
    r.add("seed", static_cast<int64_t>(cfg.seed));
    r.add("config.echo", escape_multiline(cfg.config_echo));
}

ModelConfig model_cfg_for(const ExperimentConfig& cfg, const Corpus& corpus, int k) {
    ModelConfig m = cfg.model;
    m.vocab_size = corpus.vocab.size();
    m.d_c = cfg.world.d_c;
    m.k = k;
    return m;
}

struct TrainedSystem {
    SeqModel model;
    Oracle oracle;
    double final_val_metric = 0.0;
};

// stage-1 (standard captioning) then stage-2 in the given mode
TrainedSystem train_cliptrans(const Corpus& corpus, const ExperimentConfig& cfg, int k,
                              TrainMode stage2_mode, uint64_t seed) {
    TrainedSystem sys{SeqModel::init(model_cfg_for(cfg, corpus, k), Rng::mix(seed, "model")),
                      Oracle::build(corpus.cfg)};
    TrainConfig t = cfg.train;
    t.seed = seed;
    t.mode = TrainMode::Standard;
    t.stage = 1;
    train_stage(corpus, sys.model, sys.oracle, t);
    t.mode = stage2_mode;
    t.stage = 2;
    TrainOutput out = train_stage(corpus, sys.model, sys.oracle, t);
    sys.final_val_metric = out.checkpoint.best_metric;
    return sys;
}

TrainedSystem train_baseline(const Corpus& corpus, const ExperimentConfig& cfg, uint64_t seed) {
    TrainedSystem sys{SeqModel::init(model_cfg_for(cfg, corpus, 0), Rng::mix(seed, "model")),
                      Oracle::build(corpus.cfg)};
    TrainConfig t = cfg.train;
    t.seed = seed;
    t.mode = TrainMode::TextOnlyBaseline;
    t.stage = 2;
    TrainOutput out = train_stage(corpus, sys.model, sys.oracle, t);
    sys.final_val_metric = out.checkpoint.best_metric;
    return sys;
}

}  // namespace

EvalReport run_noising_experiment(const Corpus& corpus, const std::vector<double>& p_grid,
                                  const ExperimentConfig& cfg) {
    for (double p : p_grid)
        if (p < 0.0 || p > 1.0) throw CorpusError("noise grid values must lie in [0, 1]");
    EvalReport report;
    echo_header(report, "noise", cfg);
    for (size_t i = 0; i < p_grid.size(); ++i) {
        const double p = p_grid[i];
        const uint64_t run_seed = Rng::mix(cfg.seed, Rng::mix(0xA11CE, static_cast<uint64_t>(i)));
        Corpus noised = apply_source_noise(corpus, cfg.train.src_lang, p, NoiseMode::Drop,
                                           Rng::mix(run_seed, "drop"));
        const auto t0 = std::chrono::steady_clock::now();
        // the recovery setup: image prefixes in stage-2 training and inference
        TrainedSystem clip = train_cliptrans(noised, cfg, cfg.model.k, TrainMode::Reg,
                                             Rng::mix(run_seed, "cliptrans"));
        EvalScore clip_score =
            evaluate_bleu(clip.model, &clip.oracle, noised, Split::Test, cfg.train.src_lang,
                          cfg.train.tgt_lang, DecodeMode::GroundTruthImage, cfg.decode);
        TrainedSystem base = train_baseline(noised, cfg, Rng::mix(run_seed, "baseline"));
        EvalScore base_score =
            evaluate_bleu(base.model, &base.oracle, noised, Split::Test, cfg.train.src_lang,
                          cfg.train.tgt_lang, DecodeMode::HallucinateFromText, cfg.decode);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const std::string key = "result.noise." + std::to_string(i);
        report.add(key + ".p", p);
        report.add(key + ".cliptrans.bleu", clip_score.bleu);
        report.add(key + ".baseline.bleu", base_score.bleu);
        report.comment("timing " + key + " seconds=" + format_double(secs));
    }
    report.add("summary", std::string("begin"));
    report.add("summary.kind", std::string("noise"));
    report.add("summary.conditions", static_cast<int64_t>(p_grid.size()));
    report.add("summary", std::string("end"));
    return report;
}

EvalReport run_prefix_sweep(const Corpus& corpus, const std::vector<int>& k_grid,
                            const ExperimentConfig& cfg) {
    for (int k : k_grid)
        if (k < 1) throw CorpusError("prefix grid values must be positive");
    EvalReport report;
    echo_header(report, "prefix", cfg);
    for (size_t i = 0; i < k_grid.size(); ++i) {
        const int k = k_grid[i];
        const uint64_t run_seed = Rng::mix(cfg.seed, Rng::mix(0x9EF1, static_cast<uint64_t>(i)));
        const auto t0 = std::chrono::steady_clock::now();
        TrainedSystem sys =
            train_cliptrans(corpus, cfg, k, TrainMode::Standard, Rng::mix(run_seed, "pipeline"));
        EvalScore score =
            evaluate_bleu(sys.model, &sys.oracle, corpus, Split::Test, cfg.train.src_lang,
                          cfg.train.tgt_lang, DecodeMode::HallucinateFromText, cfg.decode);
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const std::string key = "result.prefix." + std::to_string(i);
        report.add(key + ".k", static_cast<int64_t>(k));
        report.add(key + ".bleu", score.bleu);
        report.comment("timing " + key + " seconds=" + format_double(secs));
    }
    report.add("summary", std::string("begin"));
    report.add("summary.kind", std::string("prefix"));
    report.add("summary.conditions", static_cast<int64_t>(k_grid.size()));
    report.add("summary", std::string("end"));
    return report;
}

RecoveryScore score_recovery(const Corpus& corpus, Split split, int src_lang, int tgt_lang,
                             const std::vector<std::vector<int>>& hypotheses) {
    auto records = corpus.split(split);
    if (records.size() != hypotheses.size())
        throw CorpusError("score_recovery: hypothesis count mismatch");
    RecoveryScore s;
    long class_hit[3] = {0, 0, 0};
    long class_total[3] = {0, 0, 0};
    for (size_t i = 0; i < records.size(); ++i) {
        const Triplet& t = *records[i];
        const auto& tgt = corpus.caption(t, tgt_lang);
        const auto& hyp = hypotheses[i];
        for (int pos : t.grounded) {
            const int want = tgt[static_cast<size_t>(pos)];
            const int lex = corpus.vocab.lexeme_of(want);
            const int cls = corpus.cfg.attribute_class(lex);
            const bool hit = std::find(hyp.begin(), hyp.end(), want) != hyp.end();
            ++s.total;
            s.recovered += hit ? 1 : 0;
            if (cls >= 0) {
                ++class_total[cls];
                class_hit[cls] += hit ? 1 : 0;
            }
        }
    }
    s.accuracy = s.total > 0 ? static_cast<double>(s.recovered) / s.total : 0.0;
    for (int c = 0; c < 3; ++c)
        s.class_accuracy[c] =
            class_total[c] > 0 ? static_cast<double>(class_hit[c]) / class_total[c] : 0.0;
    return s;
}

namespace {

std::vector<std::vector<int>> decode_split(const SeqModel& model, const Oracle& oracle,
                                           const Corpus& corpus, Split split, int src_lang,
                                           int tgt_lang, DecodeMode mode,
                                           const DecodeConfig& dcfg) {
    auto records = corpus.split(split);
    std::vector<std::vector<int>> hyps(records.size());
#pragma omp parallel for schedule(dynamic) if (kernels::parallel_enabled())
    for (long long i = 0; i < static_cast<long long>(records.size()); ++i) {
        const Triplet& t = *records[static_cast<size_t>(i)];
        hyps[static_cast<size_t>(i)] =
            translate(model, &oracle, corpus.vocab, corpus.caption(t, src_lang), &t.latent,
                      src_lang, tgt_lang, mode, dcfg)
                .tokens;
    }
    return hyps;
}

}  // namespace

EvalReport run_masked_recovery(const Corpus& corpus, const ExperimentConfig& cfg) {
    bool any_grounded = false;
    for (const Triplet& t : corpus.records)
        if (!t.grounded.empty()) any_grounded = true;
    if (!any_grounded) throw CorpusError("run_masked_recovery: corpus lacks grounded annotations");

    EvalReport report;
    echo_header(report, "recovery", cfg);
    const int src = cfg.train.src_lang, tgt = cfg.train.tgt_lang;
    const uint64_t run_seed = Rng::mix(cfg.seed, "recovery");
    // both systems train under the same masking scenario
    Corpus train_world = apply_source_noise(corpus, src, 0.3, NoiseMode::Mask,
                                            Rng::mix(run_seed, "train-mask"));
    TrainedSystem clip =
        train_cliptrans(train_world, cfg, cfg.model.k, TrainMode::Reg, Rng::mix(run_seed, "clip"));
    TrainedSystem base = train_baseline(train_world, cfg, Rng::mix(run_seed, "base"));

    Corpus masked = mask_grounded_sources(corpus, src);
    auto clip_masked = decode_split(clip.model, clip.oracle, masked, Split::Test, src, tgt,
                                    DecodeMode::GroundTruthImage, cfg.decode);
    auto base_masked = decode_split(base.model, base.oracle, masked, Split::Test, src, tgt,
                                    DecodeMode::HallucinateFromText, cfg.decode);
    auto clip_clean = decode_split(clip.model, clip.oracle, corpus, Split::Test, src, tgt,
                                   DecodeMode::GroundTruthImage, cfg.decode);
    auto base_clean = decode_split(base.model, base.oracle, corpus, Split::Test, src, tgt,
                                   DecodeMode::HallucinateFromText, cfg.decode);

    const RecoveryScore rc = score_recovery(corpus, Split::Test, src, tgt, clip_masked);
    const RecoveryScore rb = score_recovery(corpus, Split::Test, src, tgt, base_masked);
    const RecoveryScore cc = score_recovery(corpus, Split::Test, src, tgt, clip_clean);
    const RecoveryScore cb = score_recovery(corpus, Split::Test, src, tgt, base_clean);

    const char* class_names[3] = {"object", "color", "action"};
    report.add("result.recovery.cliptrans.accuracy", rc.accuracy);
    report.add("result.recovery.baseline.accuracy", rb.accuracy);
    for (int c = 0; c < 3; ++c) {
        report.add(std::string("result.recovery.cliptrans.") + class_names[c], rc.class_accuracy[c]);
        report.add(std::string("result.recovery.baseline.") + class_names[c], rb.class_accuracy[c]);
    }
    report.add("result.control.cliptrans.accuracy", cc.accuracy);
    report.add("result.control.baseline.accuracy", cb.accuracy);
    report.add("summary", std::string("begin"));
    report.add("summary.kind", std::string("recovery"));
    report.add("summary.gap", rc.accuracy - rb.accuracy);
    report.add("summary", std::string("end"));
    return report;
}

}  // namespace prefixmt
