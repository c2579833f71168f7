#pragma once

// Command-line front end: rate reporting, tokenizer and downstream training,
// latent encode/decode, and the self-check battery. One process per command.
// Every artifact (checkpoint, CSV log, latent stream) gets a JSON sidecar
// carrying the fully resolved run configuration, so a checkpoint alone is
// enough to rebuild the model that wrote it.
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "holitok/unified.hpp"
#include "holitok/verify.hpp"

namespace holitok::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};

// worker cap; nothing in the engine is threaded yet, so this is recorded and
// clamped but effectively always 1
inline int env_threads() {
    const char* v = std::getenv("HOLITOK_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    long n = std::strtol(v, &end, 10);
    if (!end || *end != '\0' || n < 1) throw UsageError("HOLITOK_THREADS must be a positive integer");
    return static_cast<int>(n);
}

// ---------------------------------------------------------------------------
// run configuration: preset + override document + seed + output directory

struct RunConfig {
    std::string command;
    std::string preset = "toy";
    json overrides = json::object();
    uint64_t seed = 1;
    std::string out = ".";
    int threads = 1;

    json to_json() const {
        return json{{"command", command}, {"preset", preset}, {"overrides", overrides},
                    {"seed", seed},       {"out", out},       {"threads", threads}};
    }
};

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open '" + path + "' for writing");
    f << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open '" + path + "'");
    return json::parse(f);
}

inline RunConfig make_run_config(const std::string& command, const std::string& config_path,
                                 bool paper, uint64_t seed, const std::string& out) {
    RunConfig rc;
    rc.command = command;
    if (!config_path.empty()) {
        rc.overrides = read_json_file(config_path);
        if (!rc.overrides.is_object())
            fail("config file '" + config_path + "' must hold a JSON object");
        if (rc.overrides.contains("preset")) rc.preset = rc.overrides.at("preset").get<std::string>();
    }
    if (paper) rc.preset = "paper";
    if (rc.preset != "toy" && rc.preset != "paper")
        throw UsageError("preset must be 'toy' or 'paper', got '" + rc.preset + "'");
    rc.seed = seed;
    rc.out = out;
    rc.threads = env_threads();
    return rc;
}

template <typename V>
void maybe(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

inline const json& section(const RunConfig& rc, const char* key) {
    static const json empty = json::object();
    return rc.overrides.contains(key) ? rc.overrides.at(key) : empty;
}

inline CodecConfig codec_config_for(const RunConfig& rc) {
    CodecConfig c = rc.preset == "paper" ? paper_codec_config() : toy_codec_config();
    const json& j = section(rc, "codec");
    maybe(j, "sample_rate", c.sample_rate);
    maybe(j, "strides", c.strides);
    maybe(j, "kernels", c.kernels);
    maybe(j, "base_channels", c.base_channels);
    maybe(j, "d_z", c.d_z);
    maybe(j, "residual_layers", c.residual_layers);
    maybe(j, "lstm_layers", c.lstm_layers);
    maybe(j, "lstm_hidden", c.lstm_hidden);
    maybe(j, "flow_layers", c.flow_layers);
    maybe(j, "lookahead", c.lookahead);
    maybe(j, "amp_kernels", c.amp_kernels);
    c.validate();
    return c;
}

inline SupervisionConfig supervision_config_for(const RunConfig& rc, int64_t d_z) {
    SupervisionConfig c;
    c.d_z = d_z;
    const json& j = section(rc, "supervision");
    maybe(j, "width", c.width);
    maybe(j, "heads", c.heads);
    maybe(j, "enc_layers", c.enc_layers);
    maybe(j, "dec_layers", c.dec_layers);
    maybe(j, "n_symbols", c.n_symbols);
    maybe(j, "n_tasks", c.n_tasks);
    maybe(j, "max_len", c.max_len);
    return c;
}

inline CorpusConfig corpus_config_for(const RunConfig& rc, int sample_rate) {
    CorpusConfig c;
    c.sample_rate = sample_rate;
    const json& j = section(rc, "corpus");
    maybe(j, "min_seconds", c.min_seconds);
    maybe(j, "max_seconds", c.max_seconds);
    maybe(j, "segment_seconds", c.segment_seconds);
    maybe(j, "vocab", c.vocab);
    maybe(j, "n_classes", c.n_classes);
    maybe(j, "noise_amp", c.noise_amp);
    return c;
}

inline int corpus_size_for(const RunConfig& rc) {
    int n = 64;
    maybe(section(rc, "corpus"), "n", n);
    if (n < 1) fail("corpus size must be >= 1");
    return n;
}

inline StagePlan stage_plan_for(const RunConfig& rc, int stage) {
    StagePlan p = toy_stage_plan(stage, rc.seed);
    const json& j = section(rc, "stage");
    maybe(j, "steps", p.steps);
    maybe(j, "batch", p.batch);
    maybe(j, "crop_samples", p.crop_samples);
    maybe(j, "ablate_distill", p.ablate_distill);
    maybe(j, "ablate_supervise", p.ablate_supervise);
    maybe(j, "spec", p.weights.spec);
    maybe(j, "adv", p.weights.adv);
    maybe(j, "fm", p.weights.fm);
    maybe(j, "beta_low", p.weights.beta_low);
    maybe(j, "beta_high", p.weights.beta_high);
    maybe(j, "distill", p.weights.distill);
    maybe(j, "sup", p.weights.sup);
    return p;
}

inline UnifiedConfig unified_config_for(const RunConfig& rc, int64_t d_z) {
    UnifiedConfig c;
    c.d_z = d_z;
    const json& j = section(rc, "unified");
    maybe(j, "patch", c.patch);
    maybe(j, "n_text", c.n_text);
    maybe(j, "width", c.width);
    maybe(j, "heads", c.heads);
    maybe(j, "layers", c.layers);
    maybe(j, "dit_width", c.dit_width);
    maybe(j, "dit_heads", c.dit_heads);
    maybe(j, "dit_layers", c.dit_layers);
    maybe(j, "patch_enc_layers", c.patch_enc_layers);
    maybe(j, "semantic_dim", c.semantic_dim);
    maybe(j, "max_positions", c.max_positions);
    maybe(j, "max_text", c.max_text);
    maybe(j, "k_max", c.k_max);
    maybe(j, "lambda_eos", c.lambda_eos);
    maybe(j, "mean_pool_linear", c.mean_pool_linear);
    c.validate();
    return c;
}

inline UnifiedTrainConfig train_config_for(const RunConfig& rc, const std::string& tasks,
                                           const std::string& dit_init, bool freeze) {
    UnifiedTrainConfig tc;
    tc.seed = rc.seed;
    tc.tasks = tasks;
    tc.dit_init = dit_init;
    tc.freeze_semantic_encoder = freeze;
    const json& j = section(rc, "train");
    maybe(j, "steps", tc.steps);
    maybe(j, "lr0", tc.lr0);
    maybe(j, "warmup", tc.warmup);
    maybe(j, "tts_ratio", tc.tts_ratio);
    maybe(j, "fm_samples", tc.fm_samples);
    return tc;
}

// ---------------------------------------------------------------------------
// latent stream container: "HTKZ" | u32 version | u32 f_z | u32 d_z |
// u32 frames | f32 payload row-major, little-endian throughout

struct LatentFile {
    int64_t f_z = 0;
    int64_t d_z = 0;
    Tensor<float> z;
};

inline void write_latents(const std::string& path, const Tensor<float>& z, int64_t f_z) {
    if (z.rank() != 2) fail("write_latents: need a [T, d] tensor");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open '" + path + "' for writing");
    auto put_u32 = [&f](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    f.write("HTKZ", 4);
    put_u32(1);
    put_u32(static_cast<uint32_t>(f_z));
    put_u32(static_cast<uint32_t>(z.dim(1)));
    put_u32(static_cast<uint32_t>(z.dim(0)));
    f.write(reinterpret_cast<const char*>(z.values().data()),
            static_cast<std::streamsize>(z.numel() * 4));
    if (!f) fail("write failed for '" + path + "'");
}

inline LatentFile read_latents(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("cannot open latent file '" + path + "'");
    char magic[4] = {};
    f.read(magic, 4);
    uint32_t ver = 0, fz = 0, dz = 0, frames = 0;
    auto get_u32 = [&f](uint32_t& v) { f.read(reinterpret_cast<char*>(&v), 4); };
    get_u32(ver);
    get_u32(fz);
    get_u32(dz);
    get_u32(frames);
    if (!f) fail("corrupt latent header in '" + path + "': truncated");
    if (std::string(magic, 4) != "HTKZ") fail("corrupt latent header in '" + path + "': bad magic");
    if (ver != 1)
        fail("corrupt latent header in '" + path + "': unsupported version " + std::to_string(ver));
    if (dz == 0 || frames == 0) fail("corrupt latent header in '" + path + "': empty dimensions");
    std::vector<float> vals(size_t(frames) * size_t(dz));
    f.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * 4));
    if (static_cast<size_t>(f.gcount()) != vals.size() * 4)
        fail("corrupt latent payload in '" + path + "': expected " + std::to_string(vals.size()) +
             " floats, found " + std::to_string(size_t(f.gcount()) / 4));
    return LatentFile{int64_t(fz), int64_t(dz),
                      from_values<float>({int64_t(frames), int64_t(dz)}, vals)};
}

// ---------------------------------------------------------------------------
// checkpoint sidecars

inline RunConfig sidecar_run_config(const std::string& ckpt) {
    std::string side = ckpt + ".json";
    if (!fs::exists(side))
        fail("missing run config sidecar '" + side + "' next to checkpoint '" + ckpt + "'");
    json j = read_json_file(side);
    RunConfig rc;
    rc.command = j.value("command", std::string());
    rc.preset = j.value("preset", std::string("toy"));
    if (j.contains("overrides")) rc.overrides = j.at("overrides");
    rc.seed = j.value("seed", uint64_t(1));
    rc.out = j.value("out", std::string("."));
    return rc;
}

inline TokenizerSystem<float> load_tokenizer(const std::string& ckpt, RunConfig* rc_out = nullptr) {
    RunConfig rc = sidecar_run_config(ckpt);
    CodecConfig cc = codec_config_for(rc);
    SupervisionConfig sc = supervision_config_for(rc, cc.d_z);
    Rng rng(mix_seed(rc.seed, 0x70c));
    TokenizerSystem<float> sys(cc, sc, rc.seed, rng);
    sys.load(ckpt);
    if (rc_out) *rc_out = rc;
    return sys;
}

// ---------------------------------------------------------------------------
// commands

inline int cmd_report_cr(const RunConfig& rc, const std::string& out_file) {
    RateInfo ri = rate_info(codec_config_for(rc));
    json j{{"preset", rc.preset},
           {"sample_rate", ri.f_s},
           {"frame_rate", ri.f_z},
           {"d_z", ri.d_z},
           {"bits_per_value", ri.b_float},
           {"compression_ratio", ri.cr},
           {"compression_ratio_exact", std::to_string(ri.cr_num) + "/" + std::to_string(ri.cr_den)},
           {"tokens_per_second", ri.tps},
           {"run_config", rc.to_json()}};
    std::printf("%s\n", j.dump(2).c_str());
    if (!out_file.empty()) write_json_file(out_file, j);
    return 0;
}

inline int cmd_train_tokenizer(const RunConfig& rc, int stage) {
    fs::create_directories(rc.out);
    CodecConfig cc = codec_config_for(rc);
    SupervisionConfig sc = supervision_config_for(rc, cc.d_z);
    CorpusConfig corpus_cfg = corpus_config_for(rc, cc.sample_rate);
    std::vector<Utterance> data =
        synth_corpus(mix_seed(rc.seed, 0xDA7A), corpus_size_for(rc), corpus_cfg);

    Rng rng(mix_seed(rc.seed, 0x70c));
    TokenizerSystem<float> sys(cc, sc, rc.seed, rng);
    if (stage > 1) {
        std::string prev = rc.out + "/tokenizer_stage" + std::to_string(stage - 1) + ".htok";
        if (!fs::exists(prev))
            fail("stage " + std::to_string(stage - 1) + " checkpoint required: '" + prev +
                 "' not found (run train tokenizer --stage " + std::to_string(stage - 1) +
                 " first)");
        sys.load(prev);
    }

    StagePlan plan = stage_plan_for(rc, stage);
    TrainingLog log = run_stage(sys, plan, data);

    std::string tag = "tokenizer_stage" + std::to_string(stage);
    std::string ckpt = rc.out + "/" + tag + ".htok";
    sys.save(ckpt);
    write_json_file(ckpt + ".json", rc.to_json());
    log.save_csv(rc.out + "/" + tag + "_log.csv");
    write_json_file(rc.out + "/run_config.json", rc.to_json());

    int64_t last = int64_t(log.rows.size());
    std::printf("stage %d done: %lld steps, final spec=%.6g total=%.6g -> %s\n", stage,
                static_cast<long long>(last), log.mean_of("spec", last - 1, last),
                log.mean_of("total", last - 1, last), ckpt.c_str());
    return 0;
}

inline int cmd_train_downstream(const RunConfig& rc, const std::string& tasks,
                                const std::string& dit_init, bool freeze,
                                const std::string& tokenizer_path) {
    fs::create_directories(rc.out);
    std::string tok = tokenizer_path.empty() ? rc.out + "/tokenizer_stage3.htok" : tokenizer_path;
    if (!fs::exists(tok))
        fail("tokenizer checkpoint required: '" + tok +
             "' not found (run train tokenizer through --stage 3 first)");
    if (!dit_init.empty() && !fs::exists(dit_init))
        fail("dit-init checkpoint '" + dit_init + "' not found");

    RunConfig tok_rc;
    TokenizerSystem<float> tok_sys = load_tokenizer(tok, &tok_rc);

    UnifiedConfig uc = unified_config_for(rc, tok_sys.ccfg.d_z);
    if (freeze && !uc.mean_pool_linear)
        throw UsageError("--freeze-semantic-encoder requires mean_pool_linear mode "
                         "(set unified.mean_pool_linear in the config)");

    CorpusConfig corpus_cfg = corpus_config_for(rc, tok_sys.ccfg.sample_rate);
    std::vector<Utterance> data =
        synth_corpus(mix_seed(rc.seed, 0xDA7A), corpus_size_for(rc), corpus_cfg);

    Rng mrng(mix_seed(rc.seed, 0x0D17));
    UnifiedModel<float> model(uc, mrng);
    UnifiedTrainConfig tc = train_config_for(rc, tasks, dit_init, freeze);
    TrainingLog log = train_unified(model, tok_sys.codec, data, tc);

    std::string ckpt = rc.out + "/downstream.htok";
    model.save(ckpt);
    json side = rc.to_json();
    side["tokenizer_checkpoint"] = tok;
    write_json_file(ckpt + ".json", side);
    log.save_csv(rc.out + "/downstream_log.csv");
    write_json_file(rc.out + "/run_config.json", side);

    int64_t last = int64_t(log.rows.size());
    std::printf("downstream done: %lld steps, tasks=%s, final total=%.6g -> %s\n",
                static_cast<long long>(last), tasks.c_str(),
                log.mean_of("total", last - 1, last), ckpt.c_str());
    return 0;
}

inline int cmd_codec_encode(const std::string& in, const std::string& out,
                            const std::string& ckpt, int rate) {
    TokenizerSystem<float> sys = load_tokenizer(ckpt);
    if (rate != 0 && rate != sys.ccfg.sample_rate)
        fail("sample rate mismatch: model expects " + std::to_string(sys.ccfg.sample_rate) +
             " Hz, input is " + std::to_string(rate) + " Hz");
    std::vector<float> wave = read_pcm(in);
    if (wave.empty()) fail("PCM file '" + in + "' is empty");

    NoGradGuard ng;
    Tensor<float> z = sys.codec.encode(from_values<float>({int64_t(wave.size())}, wave));
    // from the second stage on, the canonical token stream is the posterior
    // mean; before that the bottleneck is untrained and raw features are used
    if (sys.stage_completed >= 2) z = sys.codec.posterior.forward(z).first;
    write_latents(out, z, sys.ccfg.frame_rate());
    std::printf("encoded %zu samples -> %lld frames x %lld dims (f_z=%lld) -> %s\n", wave.size(),
                static_cast<long long>(z.dim(0)), static_cast<long long>(z.dim(1)),
                static_cast<long long>(sys.ccfg.frame_rate()), out.c_str());
    return 0;
}

inline int cmd_codec_decode(const std::string& in, const std::string& out,
                            const std::string& ckpt) {
    TokenizerSystem<float> sys = load_tokenizer(ckpt);
    LatentFile lf = read_latents(in);
    if (lf.f_z != sys.ccfg.frame_rate() || lf.d_z != sys.ccfg.d_z)
        fail("latent stream mismatch: model expects f_z=" + std::to_string(sys.ccfg.frame_rate()) +
             " d_z=" + std::to_string(sys.ccfg.d_z) + ", file has f_z=" + std::to_string(lf.f_z) +
             " d_z=" + std::to_string(lf.d_z));

    NoGradGuard ng;
    Tensor<float> wave = sys.codec.decode(lf.z);
    write_pcm(out, wave.values());
    std::printf("decoded %lld frames -> %lld samples -> %s\n", static_cast<long long>(lf.z.dim(0)),
                static_cast<long long>(wave.dim(0)), out.c_str());
    return 0;
}

inline int cmd_verify(const std::string& group, bool paper, uint64_t seed,
                      const std::string& out_file) {
    VerifyReport rep = run_verify(group, paper, seed);
    json checks = json::array();
    for (const auto& c : rep.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    json j{{"preset", rep.preset}, {"group", group}, {"seed", seed},
           {"all_pass", rep.all_pass()}, {"checks", checks}};
    std::printf("%s\n", j.dump(2).c_str());
    if (!out_file.empty()) write_json_file(out_file, j);
    return rep.all_pass() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// argument wiring

inline int run(int argc, char** argv) {
    CLI::App app{"continuous speech tokenizer toolkit"};
    app.require_subcommand(1);

    std::string config_path, out = ".", out_file;
    bool paper = false;
    uint64_t seed = 1;

    auto add_common = [&](CLI::App* c, bool with_preset = true) {
        c->add_option("--config", config_path, "JSON config with overrides");
        c->add_option("--seed", seed, "master seed");
        if (with_preset) c->add_flag("--paper-preset", paper, "use the full-scale preset");
    };

    auto* rep = app.add_subcommand("report-cr", "print rate and compression figures");
    add_common(rep);
    rep->add_option("--out", out_file, "also write the JSON report here");

    auto* train = app.add_subcommand("train", "train a model");
    train->require_subcommand(1);
    int stage = 1;
    auto* ttok = train->add_subcommand("tokenizer", "progressive codec training");
    ttok->add_option("--stage", stage, "training stage")->required()->check(CLI::Range(1, 3));
    add_common(ttok);
    ttok->add_option("--out", out, "run directory")->required();

    std::string tasks = "unified", dit_init, tokenizer_path;
    bool freeze = false;
    auto* tdown = train->add_subcommand("downstream", "generation/understanding model");
    tdown->add_option("--tasks", tasks, "tts | asr | unified")
        ->check(CLI::IsMember({"tts", "asr", "unified"}));
    tdown->add_option("--dit-init", dit_init, "checkpoint to seed the velocity head from");
    tdown->add_flag("--freeze-semantic-encoder", freeze,
                    "keep the adopted semantic encoder fixed");
    tdown->add_option("--tokenizer", tokenizer_path, "tokenizer checkpoint (default: <out>/tokenizer_stage3.htok)");
    add_common(tdown);
    tdown->add_option("--out", out, "run directory")->required();

    auto* codec = app.add_subcommand("codec", "latent encode/decode");
    codec->require_subcommand(1);
    std::string in_file, out_path, ckpt;
    int rate = 0;
    auto* enc = codec->add_subcommand("encode", "PCM f32 -> latent stream");
    enc->add_option("--in", in_file, "input PCM f32 file")->required();
    enc->add_option("--out", out_path, "output latent file")->required();
    enc->add_option("--ckpt", ckpt, "tokenizer checkpoint")->required();
    enc->add_option("--rate", rate, "declared input sample rate (checked against the model)");
    auto* dec = codec->add_subcommand("decode", "latent stream -> PCM f32");
    dec->add_option("--in", in_file, "input latent file")->required();
    dec->add_option("--out", out_path, "output PCM f32 file")->required();
    dec->add_option("--ckpt", ckpt, "tokenizer checkpoint")->required();

    std::string group;
    auto* verify = app.add_subcommand("verify", "run the self-check battery");
    verify->add_option("group", group, "gradients | causality | kl | bound | all")
        ->required()
        ->check(CLI::IsMember({"gradients", "causality", "kl", "bound", "all"}));
    add_common(verify);
    verify->add_option("--out", out_file, "also write the JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (rep->parsed())
            return cmd_report_cr(make_run_config("report-cr", config_path, paper, seed, "."),
                                 out_file);
        if (ttok->parsed())
            return cmd_train_tokenizer(
                make_run_config("train tokenizer", config_path, paper, seed, out), stage);
        if (tdown->parsed())
            return cmd_train_downstream(
                make_run_config("train downstream", config_path, paper, seed, out), tasks,
                dit_init, freeze, tokenizer_path);
        if (enc->parsed()) return cmd_codec_encode(in_file, out_path, ckpt, rate);
        if (dec->parsed()) return cmd_codec_decode(in_file, out_path, ckpt);
        if (verify->parsed()) return cmd_verify(group, paper, seed, out_file);
        throw UsageError("no command given");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace holitok::cli
