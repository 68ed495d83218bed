// prefixmt CLI: data generation, two-stage training, evaluation, and the
// experiment sweeps, all driven by key=value config files.

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "prefixmt/config.hpp"
#include "prefixmt/experiments.hpp"

using namespace prefixmt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInvariant = 3;

RunConfig load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    if (config_path.empty()) return RunConfig::from_overrides(overrides);
    return RunConfig::load(config_path, overrides);
}

Corpus load_corpus(const RunConfig& cfg) {
    if (!std::filesystem::exists(cfg.data_path))
        throw CorpusError("corpus file not found (run gen-data first): " + cfg.data_path);
    return read_corpus(cfg.data_path, cfg.world);
}

int cmd_gen_data(const RunConfig& cfg) {
    Corpus corpus = generate_world(cfg.world);
    write_corpus(corpus, cfg.data_path);
    Oracle oracle = Oracle::build(cfg.world);
    const double align_a = oracle.alignment_score(corpus, 0);
    const double align_b = oracle.alignment_score(corpus, 1);
    std::printf("corpus=%s\n", cfg.data_path.c_str());
    std::printf("records.train=%d records.valid=%d records.test=%d\n", cfg.world.n_train,
                cfg.world.n_valid, cfg.world.n_test);
    std::printf("vocab.size=%d\n", corpus.vocab.size());
    std::printf("alignment.lang_a=%.6f\n", align_a);
    std::printf("alignment.lang_b=%.6f\n", align_b);
    std::printf("caption_language.selected=%s\n",
                oracle.select_caption_language(corpus, 0, 1) == 0 ? "a" : "b");
    std::printf("oracle.hash=%llu\n", static_cast<unsigned long long>(oracle.full_hash()));
    return kExitOk;
}

void write_train_log(const std::string& ckpt_path, const std::vector<TrainLogEntry>& log) {
    std::ofstream os(ckpt_path + ".log", std::ios::trunc);
    for (const auto& e : log) {
        os << "stage=" << e.stage << " epoch=" << e.epoch << " train_loss=" << e.train_loss
           << " val_loss=" << e.val_loss << " val_metric=" << e.val_metric << "\n";
    }
}

int cmd_train(const RunConfig& cfg, const std::string& resume_path) {
    Corpus corpus = load_corpus(cfg);
    Oracle oracle = Oracle::build(cfg.world);

    SeqModel model = SeqModel::init(cfg.model, cfg.seed);
    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        verify_oracle_compatible(resume, oracle);
        if (resume.done) {
            // finished checkpoint: warm-start the next stage from its weights
            if (!(resume.stage == 1 && cfg.train.stage == 2))
                throw CheckpointError(
                    "checkpoint is complete; only a stage-2 run may start from a stage-1 result");
            model = model_from_checkpoint(resume, /*use_best_params=*/true);
        } else {
            model = SeqModel::init(resume.model_cfg, cfg.seed);
            resume_ptr = &resume;
        }
    } else if (cfg.train.stage == 2 && cfg.train.mode == TrainMode::Standard &&
               cfg.model.k > 0) {
        std::fprintf(stderr,
                     "note: stage-2 run without --resume trains from scratch "
                     "(the captioning-ablation setting)\n");
    }

    TrainConfig tcfg = cfg.train;
    if (tcfg.mode == TrainMode::TextOnlyBaseline && model.cfg.k != 0) {
        ModelConfig k0 = cfg.model;
        k0.k = 0;
        model = SeqModel::init(k0, cfg.seed);
    }
    TrainOutput out = train_stage(corpus, model, oracle, tcfg, resume_ptr, -1, cfg.render());
    save_checkpoint(out.checkpoint, cfg.checkpoint_path);
    write_train_log(cfg.checkpoint_path, out.log);
    for (const auto& e : out.log)
        std::printf("stage=%d epoch=%d train_loss=%.6f val_loss=%.6f val_metric=%.6f\n", e.stage,
                    e.epoch, e.train_loss, e.val_loss, e.val_metric);
    std::printf("checkpoint=%s best_metric=%.6f\n", cfg.checkpoint_path.c_str(),
                out.checkpoint.best_metric);
    return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& ckpt_path, const std::string& mode_name,
             const std::string& split_name_str) {
    Corpus corpus = load_corpus(cfg);
    Oracle world_oracle = Oracle::build(cfg.world);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    verify_oracle_compatible(ckpt, world_oracle);
    Oracle oracle = oracle_from_checkpoint(ckpt);
    SeqModel model = model_from_checkpoint(ckpt, /*use_best_params=*/true);

    const DecodeMode mode = decode_mode_from_name(mode_name);
    const Split split = split_from_name(split_name_str);
    oracle.reset_counters();
    EvalScore score = evaluate_bleu(model, &oracle, corpus, split, cfg.train.src_lang,
                                    cfg.train.tgt_lang, mode, cfg.decode);
    EvalReport report;
    report.comment("prefixmt eval report");
    report.add("report.kind", std::string("eval"));
    report.add("checkpoint", ckpt_path);
    report.add("split", std::string(split_name(split)));
    report.add("mode", std::string(decode_mode_name(mode)));
    report.add("result.bleu", score.bleu);
    report.add("result.sentences", static_cast<int64_t>(score.n_sentences));
    report.add("oracle.image_calls", oracle.image_calls());
    report.add("oracle.text_calls", oracle.text_calls());
    std::string echo = cfg.render();
    for (char& c : echo)
        if (c == '\n') c = ';';
    report.add("config.echo", echo);
    report.add("summary", std::string("begin"));
    report.add("summary.bleu", score.bleu);
    report.add("summary", std::string("end"));
    if (!cfg.report_path.empty()) report.write(cfg.report_path);
    std::fputs(report.text().c_str(), stdout);
    return kExitOk;
}

// median/min/max aggregation over per-seed reports
EvalReport aggregate_reports(const std::vector<EvalReport>& runs, const RunConfig& cfg) {
    EvalReport agg;
    agg.comment("prefixmt sweep report");
    agg.add("report.kind", std::string("sweep"));
    agg.add("experiment", cfg.experiment_kind);
    agg.add("seeds", static_cast<int64_t>(runs.size()));
    for (size_t i = 0; i < runs.size(); ++i) {
        const std::string* seed = runs[i].find("seed");
        agg.add("seed." + std::to_string(i), seed ? *seed : "?");
    }
    for (const auto& [key, value] : runs[0].entries) {
        if (key.rfind("result.", 0) != 0) continue;
        std::vector<double> vals;
        bool numeric = true;
        for (const auto& run : runs) {
            const std::string* v = run.find(key);
            if (!v) {
                numeric = false;
                break;
            }
            try {
                vals.push_back(std::stod(*v));
            } catch (const std::exception&) {
                numeric = false;
                break;
            }
        }
        if (!numeric) continue;
        std::sort(vals.begin(), vals.end());
        const double median = vals.size() % 2 == 1
                                  ? vals[vals.size() / 2]
                                  : 0.5 * (vals[vals.size() / 2 - 1] + vals[vals.size() / 2]);
        agg.add(key + ".median", median);
        agg.add(key + ".min", vals.front());
        agg.add(key + ".max", vals.back());
    }
    agg.add("summary", std::string("begin"));
    agg.add("summary.kind", cfg.experiment_kind);
    agg.add("summary.seeds", static_cast<int64_t>(runs.size()));
    agg.add("summary", std::string("end"));
    return agg;
}

int cmd_sweep(RunConfig cfg, const std::string& experiment, int n_seeds,
              bool report_overridden) {
    if (!report_overridden) {
        // default sweep reports carry a timestamp so repeated sweeps never
        // clobber each other; pass --report for a fixed path
        const std::time_t now = std::time(nullptr);
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
        cfg.report_path += "." + experiment + "-" + stamp;
    }
    Corpus corpus = load_corpus(cfg);
    ExperimentConfig ecfg;
    ecfg.world = cfg.world;
    ecfg.model = cfg.model;
    ecfg.train = cfg.train;
    ecfg.decode = cfg.decode;
    ecfg.config_echo = cfg.render();
    std::vector<EvalReport> runs;
    for (int s = 0; s < n_seeds; ++s) {
        ecfg.seed = cfg.seed + static_cast<uint64_t>(s);
        ecfg.train.seed = ecfg.seed;
        EvalReport r;
        if (experiment == "noise")
            r = run_noising_experiment(corpus, cfg.p_grid, ecfg);
        else if (experiment == "prefix")
            r = run_prefix_sweep(corpus, cfg.k_grid, ecfg);
        else if (experiment == "recovery")
            r = run_masked_recovery(corpus, ecfg);
        else
            throw ConfigError("unknown experiment name: " + experiment);
        const std::string path = cfg.report_path + ".seed" + std::to_string(s);
        r.write(path);
        std::printf("wrote %s\n", path.c_str());
        runs.push_back(std::move(r));
    }
    EvalReport agg = aggregate_reports(runs, cfg);
    agg.write(cfg.report_path);
    std::printf("wrote %s\n", cfg.report_path.c_str());
    return kExitOk;
}

int cmd_inspect(const std::string& path) {
    Checkpoint c = load_checkpoint(path);
    std::printf("magic=PFXMT01 version=%d\n", Checkpoint::kVersion);
    std::printf("stage=%d mode=%s caption_lang=%d done=%d\n", c.stage, train_mode_name(c.mode),
                c.resolved_caption_lang, c.done);
    std::printf("epochs_done=%lld step=%lld/%lld best_metric=%.6f best_epoch=%lld\n",
                static_cast<long long>(c.epochs_done), static_cast<long long>(c.step),
                static_cast<long long>(c.total_steps), c.best_metric,
                static_cast<long long>(c.best_epoch));
    std::printf("model: vocab=%d d_b=%d d_c=%d k=%d layers=%d heads=%d d_ff=%d mn=%s pos=%s\n",
                c.model_cfg.vocab_size, c.model_cfg.d_b, c.model_cfg.d_c, c.model_cfg.k,
                c.model_cfg.n_layers, c.model_cfg.n_heads, c.model_cfg.d_ff,
                mn_variant_name(c.model_cfg.mn_variant),
                prefix_position_name(c.model_cfg.prefix_position));
    std::printf("oracle: seed=%llu d_c=%d latent=%d sigma_a=%g sigma_b=%g\n",
                static_cast<unsigned long long>(c.oracle_seed), c.d_c, c.latent_dim, c.sigma_a,
                c.sigma_b);
    std::printf("oracle.image_hash=%llu oracle.text_hash=%llu\n",
                static_cast<unsigned long long>(c.oracle_image_hash),
                static_cast<unsigned long long>(c.oracle_text_hash));
    std::printf("params=%zu opt_entries=%zu opt_invocations=%lld\n", c.params.size(),
                c.opt.size(), static_cast<long long>(c.opt_invocations));
    for (char g : {'m', 'e', 'd'})
        std::printf("hash.theta_%c=%llu\n", g,
                    static_cast<unsigned long long>(c.param_group_hash(g)));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prefixmt: prefix-conditioned multimodal translation at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", overrides, "override config keys (section.key=value)");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen);
    std::string out_path;
    gen->add_option("--out", out_path, "corpus output path (overrides paths.data)");

    auto* train = app.add_subcommand("train", "run a training stage");
    add_common(train);
    int stage_flag = 0;
    std::string mode_flag, resume_path, ckpt_out;
    train->add_option("--stage", stage_flag, "training stage (1 or 2)");
    train->add_option("--mode", mode_flag,
                      "standard|single_stage|finetune_oracle_text|reg|multilingual_caption|text_only");
    train->add_option("--resume", resume_path, "checkpoint to resume or warm-start from");
    train->add_option("--out", ckpt_out, "checkpoint output path (overrides paths.checkpoint)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    std::string eval_ckpt, eval_mode = "hallucinate", eval_split = "test", report_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
    eval->add_option("--mode", eval_mode, "hallucinate|image (default: image-free hallucinate)");
    eval->add_option("--split", eval_split, "train|valid|test");
    eval->add_option("--report", report_out, "report output path (overrides paths.report)");

    auto* sweep = app.add_subcommand("sweep", "run an experiment sweep");
    add_common(sweep);
    std::string experiment;
    int sweep_seeds = -1;
    sweep->add_option("--experiment", experiment, "noise|prefix|recovery")->required();
    sweep->add_option("--seeds", sweep_seeds, "number of seeds (default from config)");
    sweep->add_option("--report", report_out, "report output path (overrides paths.report)");

    auto* inspect = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata");
    std::string inspect_path;
    inspect->add_option("path", inspect_path, "checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (inspect->parsed()) return cmd_inspect(inspect_path);

        RunConfig cfg = load_config(config_path, overrides);
        if (gen->parsed()) {
            if (!out_path.empty()) cfg.data_path = out_path;
            return cmd_gen_data(cfg);
        }
        if (train->parsed()) {
            if (stage_flag != 0) cfg.train.stage = stage_flag;
            if (!mode_flag.empty()) cfg.train.mode = train_mode_from_name(mode_flag);
            if (!ckpt_out.empty()) cfg.checkpoint_path = ckpt_out;
            cfg.train.validate();
            return cmd_train(cfg, resume_path);
        }
        if (eval->parsed()) {
            if (!report_out.empty()) cfg.report_path = report_out;
            return cmd_eval(cfg, eval_ckpt, eval_mode, eval_split);
        }
        if (sweep->parsed()) {
            if (!report_out.empty()) cfg.report_path = report_out;
            const int n = sweep_seeds > 0 ? sweep_seeds : cfg.sweep_seeds;
            return cmd_sweep(cfg, experiment, n, !report_out.empty());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitData;
    } catch (const CorpusError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const BleuError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "invariant violation: %s\n", e.what());
        return kExitInvariant;
    } catch (const TensorError& e) {
        std::fprintf(stderr, "invariant violation: %s\n", e.what());
        return kExitInvariant;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
