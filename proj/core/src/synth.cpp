#include "yuedesk/synth.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace yuedesk::synth {

using seqfmt::SegmentLabel;

namespace {

constexpr double kPi = 3.14159265358979323846;

constexpr std::array<const char*, 8> kGenreWords = {
    "synth", "pop", "folk", "jazz", "ambient", "chiptune", "ballad", "groove"};
constexpr std::array<const char*, 6> kMoodWords = {"bright",  "mellow", "driving",
                                                   "dreamy",  "raw",    "warm"};
constexpr std::array<const char*, 4> kVoiceWords = {"female vocal", "male vocal",
                                                    "airy vocal", "deep vocal"};

double midi_to_hz(double midi) { return 440.0 * std::pow(2.0, (midi - 69.0) / 12.0); }

}  // namespace

void SynthConfig::validate() const {
  if (lyric_vocab < 2 || melody_states < 1 || motif_len < 1 || accomp_palette < 1 ||
      segments_mean < 1 || frames_per_segment < 1) {
    fail(ErrorCode::config, "synth config counts must be positive");
  }
  if (!std::isfinite(corruption_var_db)) {
    fail(ErrorCode::config, "corruption_var_db must be finite");
  }
  if (lyric_vocab * melody_states >= vocab::kCodebookSize) {
    fail(ErrorCode::config,
         "lyric_vocab * melody_states must leave room in the codebook for "
         "accompaniment codes");
  }
}

double corruption_probability(double var_db) {
  return 1.0 / (1.0 + std::exp((var_db + 8.0) / 2.0));
}

SyntheticSong gen_song(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  SyntheticSong song;

  const int segments = std::max(1, rng.poisson(static_cast<double>(cfg.segments_mean)));
  song.segment_frames.assign(segments, cfg.frames_per_segment);
  song.segment_labels.resize(segments);
  for (int i = 0; i < segments; ++i) {
    if (i == 0 && segments >= 2) {
      song.segment_labels[i] = SegmentLabel::Intro;
    } else if (i == segments - 1 && segments >= 3) {
      song.segment_labels[i] = SegmentLabel::Outro;
    } else {
      const double u = rng.uniform();
      song.segment_labels[i] = u < 0.45   ? SegmentLabel::Verse
                               : u < 0.90 ? SegmentLabel::Chorus
                                          : SegmentLabel::Bridge;
    }
  }

  song.tag = std::string("[Genre] ") +
             kGenreWords[rng.uniform_below(kGenreWords.size())] + " " +
             kMoodWords[rng.uniform_below(kMoodWords.size())] + " " +
             kVoiceWords[rng.uniform_below(kVoiceWords.size())];

  // Per-song deterministic processes: a melodic-state cycle, a lyric motif,
  // and a cycling accompaniment palette. All per-frame structure is exactly
  // recoverable from context, so the only irreducible entropy in the mixture
  // view is the corruption channel itself.
  const int m0 = static_cast<int>(rng.uniform_below(cfg.melody_states));
  std::vector<int> motif(cfg.motif_len);
  for (int& s : motif) s = static_cast<int>(rng.uniform_below(cfg.lyric_vocab));
  const int a0 = static_cast<int>(rng.uniform_below(cfg.accomp_palette));
  const int palette_base = cfg.lyric_vocab * cfg.melody_states;
  std::vector<int> palette;
  palette.reserve(cfg.accomp_palette);
  while (static_cast<int>(palette.size()) < cfg.accomp_palette) {
    const int code = palette_base + static_cast<int>(rng.uniform_below(
                                        vocab::kCodebookSize - palette_base));
    if (std::find(palette.begin(), palette.end(), code) == palette.end()) {
      palette.push_back(code);
    }
  }

  const double q = corruption_probability(cfg.corruption_var_db);
  const int total_frames = segments * cfg.frames_per_segment;
  song.lyrics.reserve(total_frames);
  song.vocal.reserve(total_frames);
  song.accomp.reserve(total_frames);
  song.mixture.reserve(total_frames);
  song.pitch.f0_hz.reserve(2 * total_frames);
  for (int t = 0; t < total_frames; ++t) {
    const int sym = motif[t % cfg.motif_len];
    const int m = (m0 + t) % cfg.melody_states;
    const int voc = m * cfg.lyric_vocab + sym;
    const int acc = palette[(a0 + t) % cfg.accomp_palette];
    const bool corrupted = rng.uniform() < q;
    song.lyrics.push_back(sym);
    song.vocal.push_back(voc);
    song.accomp.push_back(acc);
    song.mixture.push_back(corrupted ? acc : voc);
    const double f0 = midi_to_hz(48.0 + 2.0 * m);
    song.pitch.f0_hz.push_back(f0);  // audio frames are 20 ms, pitch hop 10 ms
    song.pitch.f0_hz.push_back(f0);
  }
  return song;
}

std::vector<double> gen_sine(double freq_hz, double duration_s, double amplitude,
                             int sample_rate) {
  if (sample_rate <= 0) fail(ErrorCode::config, "sample_rate must be positive");
  if (!(freq_hz > 0.0) || freq_hz >= sample_rate / 2.0) {
    fail(ErrorCode::range, "frequency must lie in (0, sample_rate/2)");
  }
  if (duration_s < 0.0) fail(ErrorCode::range, "duration must be non-negative");
  const std::size_t n =
      static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  std::vector<double> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i] = amplitude * std::sin(2.0 * kPi * freq_hz *
                                      static_cast<double>(i) / sample_rate);
  }
  return samples;
}

PitchTrack gen_pitch_track(std::span<const std::pair<int, int>> notes) {
  PitchTrack track;
  for (const auto& [midi, duration_ms] : notes) {
    if (midi < 21 || midi > 108) {
      fail(ErrorCode::range, "midi note " + std::to_string(midi) +
                                 " outside [21, 108]");
    }
    if (duration_ms <= 0) {
      fail(ErrorCode::range, "note duration must be positive");
    }
    const int frames = duration_ms / kPitchHopMs;
    const double f0 = midi_to_hz(midi);
    for (int i = 0; i < frames; ++i) track.f0_hz.push_back(f0);
  }
  return track;
}

std::vector<int> oracle_decode_lyrics(std::span<const int> codes,
                                      const SynthConfig& cfg) {
  std::vector<int> symbols;
  symbols.reserve(codes.size());
  for (int code : codes) symbols.push_back(((code % cfg.lyric_vocab) + cfg.lyric_vocab) % cfg.lyric_vocab);
  return symbols;
}

std::string lyric_word(int symbol) {
  std::string word = "w";
  if (symbol < 10) word += '0';
  word += std::to_string(symbol);
  return word;
}

std::vector<std::string> lyric_words(std::span<const int> symbols) {
  std::vector<std::string> words;
  words.reserve(symbols.size());
  for (int s : symbols) words.push_back(lyric_word(s));
  return words;
}

namespace {

nlohmann::ordered_json song_to_json(const SyntheticSong& song) {
  nlohmann::ordered_json rec;
  rec["tag"] = song.tag;
  rec["lyrics"] = song.lyrics;
  rec["vocal"] = song.vocal;
  rec["accomp"] = song.accomp;
  rec["mixture"] = song.mixture;
  rec["pitch_f0"] = song.pitch.f0_hz;
  rec["segment_frames"] = song.segment_frames;
  nlohmann::ordered_json labels = nlohmann::ordered_json::array();
  for (SegmentLabel label : song.segment_labels) {
    labels.push_back(std::string(seqfmt::segment_label_text(label)));
  }
  rec["segment_labels"] = std::move(labels);
  return rec;
}

SyntheticSong song_from_json(const nlohmann::json& rec) {
  SyntheticSong song;
  song.tag = rec.value("tag", "");
  song.lyrics = rec.at("lyrics").get<std::vector<int>>();
  song.vocal = rec.at("vocal").get<std::vector<int>>();
  song.accomp = rec.at("accomp").get<std::vector<int>>();
  song.mixture = rec.at("mixture").get<std::vector<int>>();
  song.pitch.f0_hz = rec.at("pitch_f0").get<std::vector<double>>();
  song.segment_frames = rec.at("segment_frames").get<std::vector<int>>();
  for (const auto& text : rec.at("segment_labels")) {
    const auto label = seqfmt::segment_label_from_text(text.get<std::string>());
    if (!label) fail(ErrorCode::data, "corpus: unknown segment label");
    song.segment_labels.push_back(*label);
  }
  return song;
}

}  // namespace

void write_corpus_jsonl(const std::filesystem::path& path,
                        std::span<const SyntheticSong> songs) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  for (const SyntheticSong& song : songs) {
    out << song_to_json(song).dump() << '\n';
  }
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

std::vector<SyntheticSong> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open corpus " + path.string());
  std::vector<SyntheticSong> songs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) fail(ErrorCode::data, "corpus: invalid JSONL line");
    songs.push_back(song_from_json(rec));
  }
  return songs;
}

void write_pitch_csv(const std::filesystem::path& path, const PitchTrack& track) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot open " + path.string() + " for writing");
  out << "frame_index,f0_hz\n";
  char buf[64];
  for (std::size_t i = 0; i < track.f0_hz.size(); ++i) {
    const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), track.f0_hz[i]);
    out << i << ',' << std::string_view(buf, end - buf) << '\n';
  }
}

PitchTrack read_pitch_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open pitch csv " + path.string());
  PitchTrack track;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::data, "pitch csv: malformed row");
    track.f0_hz.push_back(std::stod(line.substr(comma + 1)));
  }
  return track;
}

}  // namespace yuedesk::synth
