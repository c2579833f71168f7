#pragma once

// Synthetic labeled corpus: utterances are sequences of harmonic tone
// segments. Each segment carries one of 16 pitch symbols (f = 220·2^(k/12));
// the transcript is the symbol sequence and the classification label is a
// deterministic function of it, so task targets are exact by construction.

#include <cstdint>
#include <string>
#include <vector>

namespace holitok {

struct CorpusConfig {
    int sample_rate = 8000;
    double min_seconds = 0.4;
    double max_seconds = 0.6;
    double segment_seconds = 0.1;
    int vocab = 16;        // pitch symbols 0..vocab-1
    int n_classes = 4;     // classification label = sum(transcript) mod n_classes
    double noise_amp = 0.01;
};

struct Utterance {
    int64_t id = 0;
    int sample_rate = 8000;
    std::vector<float> samples;
    std::vector<int> transcript;
    int class_label = 0;
};

// Pitch of symbol k in Hz.
double symbol_freq(int k);

std::vector<Utterance> synth_corpus(uint64_t seed, int n, const CorpusConfig& cfg);

// Reference symbol detector: per-segment spectral peak over the candidate
// pitches (Goertzel power). Recovers transcripts exactly on clean settings.
std::vector<int> detect_transcript(const std::vector<float>& samples, int sample_rate,
                                   const CorpusConfig& cfg);

// PCM (little-endian float32) files plus a JSON manifest in `dir`.
void save_corpus(const std::string& dir, const std::vector<Utterance>& corpus);
std::vector<Utterance> load_corpus(const std::string& dir);

void write_pcm(const std::string& path, const std::vector<float>& samples);
std::vector<float> read_pcm(const std::string& path);

}  // namespace holitok
