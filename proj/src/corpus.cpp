#include "holitok/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "holitok/rng.hpp"
#include "holitok/tensor.hpp"  // fail()
#include "json.hpp"

namespace holitok {

namespace {
constexpr double kPi = 3.14159265358979323846;
// harmonic amplitudes for partials 1x, 2x, 3x
constexpr double kAmps[3] = {0.5, 0.25, 0.08};
}  // namespace

double symbol_freq(int k) {
    return 220.0 * std::pow(2.0, k / 12.0);
}

std::vector<Utterance> synth_corpus(uint64_t seed, int n, const CorpusConfig& cfg) {
    if (n <= 0) fail("synth_corpus: n must be positive");
    int seg_len = static_cast<int>(std::lround(cfg.segment_seconds * cfg.sample_rate));
    std::vector<Utterance> corpus;
    corpus.reserve(n);
    for (int u = 0; u < n; ++u) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(u)));
        double dur = cfg.min_seconds + (cfg.max_seconds - cfg.min_seconds) * rng.uniform();
        int n_segs = std::max<int>(1, static_cast<int>(std::lround(dur / cfg.segment_seconds)));
        Utterance utt;
        utt.id = u;
        utt.sample_rate = cfg.sample_rate;
        utt.samples.resize(static_cast<size_t>(n_segs) * seg_len);
        int ramp = std::min(seg_len / 4, cfg.sample_rate / 200);  // 5 ms attack/release
        double lp = 0.0;                                          // one-pole noise shaping state
        int sum_syms = 0;
        for (int s = 0; s < n_segs; ++s) {
            int sym = static_cast<int>(rng.uniform_int(cfg.vocab));
            utt.transcript.push_back(sym);
            sum_syms += sym;
            double f0 = symbol_freq(sym);
            double phase[3] = {rng.uniform(0.0, 2.0 * kPi), rng.uniform(0.0, 2.0 * kPi),
                               rng.uniform(0.0, 2.0 * kPi)};
            for (int i = 0; i < seg_len; ++i) {
                double t = static_cast<double>(i) / cfg.sample_rate;
                double v = 0.0;
                for (int h = 0; h < 3; ++h)
                    v += kAmps[h] * std::sin(2.0 * kPi * f0 * (h + 1) * t + phase[h]);
                double env = 1.0;
                if (i < ramp) env = static_cast<double>(i) / ramp;
                if (seg_len - 1 - i < ramp) env = std::min(env, static_cast<double>(seg_len - 1 - i) / ramp);
                lp = 0.7 * lp + 0.3 * rng.normal();
                utt.samples[static_cast<size_t>(s) * seg_len + i] =
                    static_cast<float>(env * v + cfg.noise_amp * lp);
            }
        }
        utt.class_label = sum_syms % cfg.n_classes;
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

std::vector<int> detect_transcript(const std::vector<float>& samples, int sample_rate,
                                   const CorpusConfig& cfg) {
    int seg_len = static_cast<int>(std::lround(cfg.segment_seconds * sample_rate));
    int n_segs = static_cast<int>(samples.size()) / seg_len;
    std::vector<int> out;
    for (int s = 0; s < n_segs; ++s) {
        const float* seg = samples.data() + static_cast<size_t>(s) * seg_len;
        double best = -1.0;
        int best_sym = 0;
        for (int k = 0; k < cfg.vocab; ++k) {
            // Goertzel power at the candidate fundamental
            double w = 2.0 * kPi * symbol_freq(k) / sample_rate;
            double coeff = 2.0 * std::cos(w);
            double s1 = 0.0, s2 = 0.0;
            for (int i = 0; i < seg_len; ++i) {
                double s0 = seg[i] + coeff * s1 - s2;
                s2 = s1;
                s1 = s0;
            }
            double power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
            if (power > best) {
                best = power;
                best_sym = k;
            }
        }
        out.push_back(best_sym);
    }
    return out;
}

void write_pcm(const std::string& path, const std::vector<float>& samples) {
    static_assert(sizeof(float) == 4);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(float)));
    if (!f) fail("write failed for '" + path + "'");
}

std::vector<float> read_pcm(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) fail("cannot open PCM file '" + path + "'");
    auto bytes = static_cast<size_t>(f.tellg());
    if (bytes % sizeof(float) != 0)
        fail("PCM file '" + path + "' size " + std::to_string(bytes) + " is not a multiple of 4");
    f.seekg(0);
    std::vector<float> samples(bytes / sizeof(float));
    f.read(reinterpret_cast<char*>(samples.data()), static_cast<std::streamsize>(bytes));
    if (!f) fail("read failed for '" + path + "'");
    return samples;
}

void save_corpus(const std::string& dir, const std::vector<Utterance>& corpus) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = nlohmann::json::array();
    for (const Utterance& utt : corpus) {
        char name[32];
        std::snprintf(name, sizeof(name), "utt_%05lld.pcm", static_cast<long long>(utt.id));
        write_pcm(dir + "/" + name, utt.samples);
        manifest.push_back({{"id", utt.id},
                            {"file", name},
                            {"sample_rate", utt.sample_rate},
                            {"transcript", utt.transcript},
                            {"labels", {{"transcribe", utt.transcript}, {"classify", utt.class_label}}}});
    }
    std::ofstream f(dir + "/manifest.json");
    if (!f) fail("cannot write manifest in '" + dir + "'");
    f << manifest.dump(2) << "\n";
}

std::vector<Utterance> load_corpus(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) fail("cannot open manifest in '" + dir + "'");
    nlohmann::json manifest = nlohmann::json::parse(f);
    std::vector<Utterance> corpus;
    for (const auto& e : manifest) {
        Utterance utt;
        utt.id = e.at("id").get<int64_t>();
        utt.sample_rate = e.at("sample_rate").get<int>();
        utt.transcript = e.at("transcript").get<std::vector<int>>();
        utt.class_label = e.at("labels").at("classify").get<int>();
        utt.samples = read_pcm(dir + "/" + e.at("file").get<std::string>());
        corpus.push_back(std::move(utt));
    }
    return corpus;
}

}  // namespace holitok
