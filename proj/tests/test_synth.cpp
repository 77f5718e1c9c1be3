#include "yuedesk/synth.hpp"

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "yuedesk/error.hpp"
#include "yuedesk/metrics.hpp"
#include "yuedesk/rng.hpp"

using namespace yuedesk;
using namespace yuedesk::synth;

namespace {

double oracle_track_wer(const SyntheticSong& song, const std::vector<int>& track,
                        const SynthConfig& cfg) {
  const std::vector<int> decoded = oracle_decode_lyrics(track, cfg);
  return metrics::wer(lyric_words(song.lyrics), lyric_words(decoded)).wer;
}

}  // namespace

TEST_CASE("corruption_probability: calibration") {
  CHECK(corruption_probability(-8.0) == doctest::Approx(0.5));
  CHECK(corruption_probability(40.0) < 1e-10);
  CHECK(corruption_probability(-60.0) > 1.0 - 1e-10);
  // monotone non-increasing in VAR
  double prev = 1.0;
  for (double var = -40.0; var <= 40.0; var += 1.0) {
    const double q = corruption_probability(var);
    CHECK(q <= prev);
    prev = q;
  }
}

TEST_CASE("gen_song: determinism and track invariants") {
  SynthConfig cfg;
  cfg.frames_per_segment = 20;
  Rng r1(7), r2(7);
  const SyntheticSong a = gen_song(cfg, r1);
  const SyntheticSong b = gen_song(cfg, r2);
  CHECK(a.lyrics == b.lyrics);
  CHECK(a.vocal == b.vocal);
  CHECK(a.accomp == b.accomp);
  CHECK(a.mixture == b.mixture);
  CHECK(a.pitch.f0_hz == b.pitch.f0_hz);
  CHECK(a.tag == b.tag);

  // equal track lengths; mixture is frame-wise either the vocal or the
  // accompaniment code
  CHECK(a.vocal.size() == a.accomp.size());
  CHECK(a.vocal.size() == a.mixture.size());
  CHECK(a.vocal.size() == a.lyrics.size());
  CHECK(a.pitch.f0_hz.size() == 2 * a.vocal.size());
  for (std::size_t t = 0; t < a.mixture.size(); ++t) {
    CHECK((a.mixture[t] == a.vocal[t] || a.mixture[t] == a.accomp[t]));
  }
  for (double f0 : a.pitch.f0_hz) {
    CHECK(f0 >= 0.0);
    CHECK(f0 <= kMaxPitchHz);
  }
}

TEST_CASE("gen_song: oracle WER behaviour across the corruption channel") {
  SynthConfig clean;
  clean.corruption_var_db = 40.0;
  clean.frames_per_segment = 40;
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const SyntheticSong song = gen_song(clean, rng);
    CHECK(oracle_track_wer(song, song.vocal, clean) == 0.0);
    CHECK(oracle_track_wer(song, song.mixture, clean) == 0.0);
  }

  // At -8 dB roughly half the frames lose their vocal identity; a corrupted
  // frame still decodes correctly with probability ~1/24.
  SynthConfig worst;
  worst.corruption_var_db = -8.0;
  worst.segments_mean = 10;
  worst.frames_per_segment = 100;
  Rng mc(13);
  double wer_sum = 0.0;
  std::size_t frames = 0;
  int songs = 0;
  while (frames < 10000) {
    const SyntheticSong song = gen_song(worst, mc);
    wer_sum += oracle_track_wer(song, song.mixture, worst) *
               static_cast<double>(song.mixture.size());
    CHECK(oracle_track_wer(song, song.vocal, worst) == 0.0);
    frames += song.mixture.size();
    ++songs;
  }
  const double mixture_wer = wer_sum / static_cast<double>(frames);
  CHECK(mixture_wer == doctest::Approx(0.479).epsilon(0.08));
}

TEST_CASE("gen_song: oracle mixture WER is monotone in VAR") {
  SynthConfig cfg;
  cfg.segments_mean = 6;
  cfg.frames_per_segment = 50;
  double prev = 1.0;
  for (double var : {-20.0, -16.0, -12.0, -8.0, -4.0, 0.0, 4.0, 8.0}) {
    cfg.corruption_var_db = var;
    Rng rng(100);  // shared seed: same songs, different channel
    double wer_sum = 0.0;
    std::size_t frames = 0;
    for (int i = 0; i < 100; ++i) {
      const SyntheticSong song = gen_song(cfg, rng);
      wer_sum += oracle_track_wer(song, song.mixture, cfg) *
                 static_cast<double>(song.mixture.size());
      frames += song.mixture.size();
    }
    const double w = wer_sum / static_cast<double>(frames);
    CHECK(w <= prev);
    prev = w;
  }
}

TEST_CASE("gen_sine: closed-form energy") {
  const auto samples = gen_sine(440.0, 1.0, 1.0, 16000);
  CHECK(samples.size() == 16000);
  double energy = 0.0;
  for (double x : samples) energy += x * x;
  CHECK(energy == doctest::Approx(8000.0).epsilon(1e-9));

  const auto silent = gen_sine(440.0, 0.5, 0.0, 16000);
  for (double x : silent) CHECK(x == 0.0);

  CHECK(gen_sine(440.0, 0.25, 0.3, 16000) == gen_sine(440.0, 0.25, 0.3, 16000));

  CHECK_THROWS_AS(gen_sine(9000.0, 1.0, 1.0, 16000), Error);  // above Nyquist
  CHECK_THROWS_AS(gen_sine(0.0, 1.0, 1.0, 16000), Error);
}

TEST_CASE("gen_pitch_track: frame grid") {
  const auto a4 = gen_pitch_track(std::vector<std::pair<int, int>>{{69, 100}});
  CHECK(a4.f0_hz.size() == 10);
  for (double f0 : a4.f0_hz) CHECK(f0 == doctest::Approx(440.0));

  const auto octave =
      gen_pitch_track(std::vector<std::pair<int, int>>{{60, 50}, {72, 50}});
  CHECK(octave.f0_hz.size() == 10);
  CHECK(octave.f0_hz.back() == doctest::Approx(2.0 * octave.f0_hz.front()));

  const auto brief = gen_pitch_track(std::vector<std::pair<int, int>>{{60, 30}});
  CHECK(brief.f0_hz.size() == 3);

  CHECK_THROWS_AS(gen_pitch_track(std::vector<std::pair<int, int>>{{60, 0}}),
                  Error);
  CHECK_THROWS_AS(gen_pitch_track(std::vector<std::pair<int, int>>{{200, 100}}),
                  Error);
}

TEST_CASE("corpus jsonl and pitch csv round-trip") {
  SynthConfig cfg;
  cfg.frames_per_segment = 10;
  cfg.segments_mean = 3;
  Rng rng(21);
  std::vector<SyntheticSong> songs;
  for (int i = 0; i < 5; ++i) songs.push_back(gen_song(cfg, rng));

  const auto dir = std::filesystem::temp_directory_path();
  const auto corpus_path = dir / "yuedesk_corpus.jsonl";
  write_corpus_jsonl(corpus_path, songs);
  const auto back = read_corpus_jsonl(corpus_path);
  REQUIRE(back.size() == songs.size());
  for (std::size_t i = 0; i < songs.size(); ++i) {
    CHECK(back[i].lyrics == songs[i].lyrics);
    CHECK(back[i].vocal == songs[i].vocal);
    CHECK(back[i].mixture == songs[i].mixture);
    CHECK(back[i].segment_frames == songs[i].segment_frames);
    CHECK(back[i].pitch.f0_hz == songs[i].pitch.f0_hz);
  }

  const auto csv_path = dir / "yuedesk_pitch.csv";
  write_pitch_csv(csv_path, songs[0].pitch);
  const PitchTrack track = read_pitch_csv(csv_path);
  REQUIRE(track.f0_hz.size() == songs[0].pitch.f0_hz.size());
  for (std::size_t i = 0; i < track.f0_hz.size(); ++i) {
    CHECK(track.f0_hz[i] == doctest::Approx(songs[0].pitch.f0_hz[i]).epsilon(1e-9));
  }
  std::filesystem::remove(corpus_path);
  std::filesystem::remove(csv_path);
}

TEST_CASE("synth config validation") {
  SynthConfig bad;
  bad.lyric_vocab = 0;
  Rng rng(1);
  CHECK_THROWS_AS(gen_song(bad, rng), Error);

  SynthConfig overflow;
  overflow.lyric_vocab = 256;
  overflow.melody_states = 8;  // 2048 >= 1024
  CHECK_THROWS_AS(gen_song(overflow, rng), Error);

  SynthConfig nan_var;
  nan_var.corruption_var_db = std::nan("");
  CHECK_THROWS_AS(gen_song(nan_var, rng), Error);
}
