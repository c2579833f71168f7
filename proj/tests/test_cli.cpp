#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "holitok/cli.hpp"

using namespace holitok;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "holitok");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return cli::run(int(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("holitok_cli_" + std::to_string(Rng(uint64_t(
                   std::chrono::steady_clock::now().time_since_epoch().count())).uniform_int(1 << 30)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(bool(f));
    return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("rate arithmetic is exact for both presets") {
    cli::RunConfig toy_rc;
    RateInfo paper = rate_info(paper_codec_config());
    CHECK(paper.f_s == 48000);
    CHECK(paper.f_z == 25);
    CHECK(paper.d_z == 128);
    CHECK(paper.b_float == 32);
    CHECK(paper.cr_num == 15);
    CHECK(paper.cr_den == 2);
    CHECK(paper.cr == 7.5);  // exact in binary
    CHECK(paper.tps == 25);

    RateInfo toy = rate_info(toy_codec_config());
    CHECK(toy.f_s == 8000);
    CHECK(toy.f_z == 125);
    CHECK(toy.cr_num == 13);
    CHECK(toy.cr_den == 4);
    CHECK(toy.cr == 3.25);
    CHECK(toy.tps == 125);

    // doubling the latent width halves the ratio exactly
    CodecConfig wide = toy_codec_config();
    wide.d_z *= 2;
    RateInfo half = rate_info(wide);
    CHECK(half.cr == toy.cr / 2.0);
    CHECK(half.cr_num == 13);
    CHECK(half.cr_den == 8);

    CHECK(ceil_log2(1) == 0);
    CHECK(ceil_log2(2) == 1);
    CHECK(ceil_log2(3) == 2);
    CHECK(ceil_log2(8000) == 13);
    CHECK(ceil_log2(48000) == 16);
    CHECK_THROWS_WITH_AS(ceil_log2(0), "ceil_log2: need a positive value", std::runtime_error);
}

TEST_CASE("latent stream container round trips and rejects corruption") {
    TempDir tmp;
    Rng rng(11);
    Tensor<float> z = rand_uniform<float>({7, 3}, rng, -1.0f, 1.0f);
    std::string path = tmp.file("a.htz");
    cli::write_latents(path, z, 125);

    cli::LatentFile lf = cli::read_latents(path);
    CHECK(lf.f_z == 125);
    CHECK(lf.d_z == 3);
    REQUIRE(lf.z.dim(0) == 7);
    REQUIRE(lf.z.dim(1) == 3);
    for (size_t i = 0; i < z.values().size(); ++i) CHECK(lf.z.values()[i] == z.values()[i]);

    auto corrupt = [&](int offset, char byte, const std::string& out) {
        std::string bytes = read_file(path);
        bytes[size_t(offset)] = byte;
        std::ofstream f(out, std::ios::binary | std::ios::trunc);
        f << bytes;
    };
    std::string bad = tmp.file("bad.htz");
    corrupt(0, 'X', bad);
    CHECK_THROWS_WITH_AS(cli::read_latents(bad),
                         ("corrupt latent header in '" + bad + "': bad magic").c_str(),
                         std::runtime_error);
    corrupt(4, 9, bad);
    CHECK_THROWS_WITH_AS(cli::read_latents(bad),
                         ("corrupt latent header in '" + bad + "': unsupported version 9").c_str(),
                         std::runtime_error);

    std::string shorty = tmp.file("short.htz");
    {
        std::ofstream f(shorty, std::ios::binary);
        f << "HTKZ\1\0";
    }
    CHECK_THROWS_WITH_AS(cli::read_latents(shorty),
                         ("corrupt latent header in '" + shorty + "': truncated").c_str(),
                         std::runtime_error);

    std::string clipped = tmp.file("clipped.htz");
    {
        std::string bytes = read_file(path);
        std::ofstream f(clipped, std::ios::binary);
        f << bytes.substr(0, bytes.size() - 6);
    }
    CHECK_THROWS_WITH_AS(cli::read_latents(clipped),
                         ("corrupt latent payload in '" + clipped +
                          "': expected 21 floats, found 19").c_str(),
                         std::runtime_error);
}

TEST_CASE("run config resolution: presets, overrides, and validation") {
    TempDir tmp;
    std::string cfg = tmp.file("cfg.json");
    {
        std::ofstream f(cfg);
        f << R"({"preset": "toy", "codec": {"d_z": 16, "base_channels": 2},
                 "stage": {"steps": 7, "beta_high": 3.5}, "corpus": {"n": 5},
                 "unified": {"width": 32, "heads": 2}, "train": {"steps": 9, "lr0": 0.01}})";
    }
    cli::RunConfig rc = cli::make_run_config("t", cfg, false, 4, tmp.file("out"));
    CHECK(rc.preset == "toy");
    CHECK(rc.seed == 4);

    CodecConfig cc = cli::codec_config_for(rc);
    CHECK(cc.d_z == 16);
    CHECK(cc.base_channels == 2);
    CHECK(cc.sample_rate == 8000);

    StagePlan plan = cli::stage_plan_for(rc, 3);
    CHECK(plan.steps == 7);
    CHECK(plan.weights.beta_high == 3.5);
    CHECK(plan.seed == 4);

    CHECK(cli::corpus_size_for(rc) == 5);

    UnifiedConfig uc = cli::unified_config_for(rc, cc.d_z);
    CHECK(uc.d_z == 16);
    CHECK(uc.width == 32);

    UnifiedTrainConfig tc = cli::train_config_for(rc, "asr", "", false);
    CHECK(tc.steps == 9);
    CHECK(tc.lr0 == 0.01);
    CHECK(tc.tasks == "asr");

    // the paper flag wins over the config preset
    cli::RunConfig prc = cli::make_run_config("t", cfg, true, 4, ".");
    CHECK(prc.preset == "paper");
    CHECK(cli::codec_config_for(prc).sample_rate == 48000);
    CHECK(cli::codec_config_for(prc).d_z == 16);  // codec overrides still apply

    std::string badcfg = tmp.file("bad.json");
    {
        std::ofstream f(badcfg);
        f << R"({"preset": "giant"})";
    }
    CHECK_THROWS_AS(cli::make_run_config("t", badcfg, false, 1, "."), cli::UsageError);
}

TEST_CASE("cli end to end: training, artifacts, determinism, codec round trip") {
    TempDir tmp;
    std::string cfg = tmp.file("cfg.json");
    {
        std::ofstream f(cfg);
        f << R"({"corpus": {"n": 3, "min_seconds": 0.2, "max_seconds": 0.25},
                 "stage": {"steps": 3, "batch": 2, "crop_samples": 2048}})";
    }
    std::string out = tmp.file("run");

    // prerequisite gate fires before any training
    CHECK(run_cli({"train", "tokenizer", "--stage", "2", "--config", cfg, "--seed", "5",
                   "--out", out}) == 1);

    CHECK(run_cli({"train", "tokenizer", "--stage", "1", "--config", cfg, "--seed", "5",
                   "--out", out}) == 0);
    CHECK(fs::exists(out + "/tokenizer_stage1.htok"));
    CHECK(fs::exists(out + "/tokenizer_stage1.htok.json"));
    CHECK(fs::exists(out + "/tokenizer_stage1_log.csv"));
    CHECK(fs::exists(out + "/run_config.json"));

    // identical seed and config reproduce the log byte for byte
    std::string out2 = tmp.file("run_again");
    CHECK(run_cli({"train", "tokenizer", "--stage", "1", "--config", cfg, "--seed", "5",
                   "--out", out2}) == 0);
    CHECK(read_file(out + "/tokenizer_stage1_log.csv") ==
          read_file(out2 + "/tokenizer_stage1_log.csv"));
    std::string other = tmp.file("run_other");
    CHECK(run_cli({"train", "tokenizer", "--stage", "1", "--config", cfg, "--seed", "6",
                   "--out", other}) == 0);
    CHECK(read_file(out + "/tokenizer_stage1_log.csv") !=
          read_file(other + "/tokenizer_stage1_log.csv"));

    CHECK(run_cli({"train", "tokenizer", "--stage", "2", "--config", cfg, "--seed", "5",
                   "--out", out}) == 0);
    CHECK(run_cli({"train", "tokenizer", "--stage", "3", "--config", cfg, "--seed", "5",
                   "--out", out}) == 0);

    // downstream over the frozen stage-3 tokenizer
    std::string dcfg = tmp.file("dcfg.json");
    {
        std::ofstream f(dcfg);
        f << R"({"corpus": {"n": 2, "min_seconds": 0.2, "max_seconds": 0.25},
                 "unified": {"width": 32, "heads": 2, "layers": 1, "dit_width": 32,
                             "dit_heads": 2, "dit_layers": 1, "patch_enc_layers": 1},
                 "train": {"steps": 4, "warmup": 2}})";
    }
    CHECK(run_cli({"train", "downstream", "--tasks", "unified", "--config", dcfg, "--seed", "5",
                   "--out", out}) == 0);
    CHECK(fs::exists(out + "/downstream.htok"));
    CHECK(fs::exists(out + "/downstream_log.csv"));

    // flag combo guard is a usage error
    CHECK(run_cli({"train", "downstream", "--tasks", "asr", "--freeze-semantic-encoder",
                   "--config", dcfg, "--seed", "5", "--out", out}) == 2);

    // encode/decode round trip: length and header fields
    std::string pcm = tmp.file("tone.pcm");
    {
        std::vector<float> wave(1600);
        for (size_t i = 0; i < wave.size(); ++i)
            wave[i] = 0.4f * std::sin(0.07f * float(i));
        write_pcm(pcm, wave);
    }
    std::string htz = tmp.file("tone.htz");
    std::string back = tmp.file("tone_rt.pcm");
    std::string ckpt = out + "/tokenizer_stage3.htok";
    CHECK(run_cli({"codec", "encode", "--in", pcm, "--out", htz, "--ckpt", ckpt,
                   "--rate", "8000"}) == 0);
    cli::LatentFile lf = cli::read_latents(htz);
    CHECK(lf.f_z == 125);
    CHECK(lf.d_z == 8);
    CHECK(lf.z.dim(0) == 25);  // ceil(1600 / 64)
    CHECK(run_cli({"codec", "decode", "--in", htz, "--out", back, "--ckpt", ckpt}) == 0);
    CHECK(read_pcm(back).size() == 1600);  // 25 frames * 64 hop

    CHECK(run_cli({"codec", "encode", "--in", pcm, "--out", htz, "--ckpt", ckpt,
                   "--rate", "44100"}) == 1);

    // wrong-geometry latent against this model
    Rng rng(3);
    cli::write_latents(tmp.file("alien.htz"), rand_uniform<float>({4, 2}, rng, -1.0f, 1.0f), 25);
    CHECK(run_cli({"codec", "decode", "--in", tmp.file("alien.htz"), "--out", back, "--ckpt",
                   ckpt}) == 1);

    // checkpoint without its sidecar cannot be interpreted
    fs::copy_file(ckpt, tmp.file("orphan.htok"));
    CHECK(run_cli({"codec", "encode", "--in", pcm, "--out", htz, "--ckpt",
                   tmp.file("orphan.htok"), "--rate", "8000"}) == 1);
}

TEST_CASE("cli verify: json report, exit codes, usage errors") {
    TempDir tmp;
    std::string rep = tmp.file("report.json");
    CHECK(run_cli({"verify", "kl", "--seed", "3", "--out", rep}) == 0);
    nlohmann::json j = nlohmann::json::parse(read_file(rep));
    CHECK(j.at("group") == "kl");
    CHECK(j.at("preset") == "toy");
    CHECK(j.at("all_pass") == true);
    REQUIRE(j.at("checks").size() == 2);
    for (const auto& c : j.at("checks")) {
        CHECK(c.at("pass") == true);
        CHECK(c.at("detail").get<std::string>().size() > 0);
    }

    CHECK(run_cli({"verify", "bound", "--seed", "4"}) == 0);
    CHECK(run_cli({"verify", "nonsense"}) == 2);
    CHECK(run_cli({}) == 2);
    CHECK(run_cli({"report-cr", "--paper-preset", "--out", rep}) == 0);
    nlohmann::json r = nlohmann::json::parse(read_file(rep));
    CHECK(r.at("compression_ratio") == 7.5);
    CHECK(r.at("compression_ratio_exact") == "15/2");
    CHECK(r.at("tokens_per_second") == 25);
}
