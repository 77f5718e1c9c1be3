#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "yuedesk/rng.hpp"
#include "yuedesk/seqfmt.hpp"

namespace yuedesk::synth {

inline constexpr int kPitchHopMs = 10;
inline constexpr double kMaxPitchHz = 2000.0;

// Per-frame fundamental frequency at a 10 ms hop; 0 means unvoiced.
struct PitchTrack {
  std::vector<double> f0_hz;
};

struct SynthConfig {
  int lyric_vocab = 24;       // lyric symbol alphabet
  int melody_states = 8;      // melodic-state cycle length
  int motif_len = 8;          // per-song lyric motif period
  int accomp_palette = 8;     // distinct accompaniment codes per song
  int segments_mean = 14;
  int frames_per_segment = 75;
  double corruption_var_db = -8.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Paired tracks with symbolic lyrics. The vocal track is a deterministic,
// per-state-injective encoding of the lyric symbols; the accompaniment is an
// independent per-song process; the mixture destroys the vocal identity of a
// frame with probability q(corruption_var_db).
struct SyntheticSong {
  std::vector<int> lyrics;   // one symbol per frame
  std::vector<int> vocal;    // codebook-0 codes
  std::vector<int> accomp;
  std::vector<int> mixture;
  PitchTrack pitch;          // two pitch frames per audio frame
  std::vector<int> segment_frames;
  std::vector<seqfmt::SegmentLabel> segment_labels;
  std::string tag;
};

// Frame-corruption probability: sigmoid placed so q = 0.5 at -8 dB and
// corruption grows as the vocal/accompaniment ratio falls.
double corruption_probability(double var_db);

SyntheticSong gen_song(const SynthConfig& cfg, Rng& rng);

std::vector<double> gen_sine(double freq_hz, double duration_s, double amplitude,
                             int sample_rate);

// notes are (midi, duration_ms) pairs on the 10 ms frame grid.
PitchTrack gen_pitch_track(std::span<const std::pair<int, int>> notes);

// The oracle lyric decoder: exact on uncorrupted vocal frames by
// construction.
std::vector<int> oracle_decode_lyrics(std::span<const int> codes,
                                      const SynthConfig& cfg);

std::string lyric_word(int symbol);
std::vector<std::string> lyric_words(std::span<const int> symbols);

void write_corpus_jsonl(const std::filesystem::path& path,
                        std::span<const SyntheticSong> songs);
std::vector<SyntheticSong> read_corpus_jsonl(const std::filesystem::path& path);

void write_pitch_csv(const std::filesystem::path& path, const PitchTrack& track);
PitchTrack read_pitch_csv(const std::filesystem::path& path);

}  // namespace yuedesk::synth
