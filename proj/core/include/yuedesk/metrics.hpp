#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "yuedesk/synth.hpp"

namespace yuedesk::metrics {

// -- word error rate ----------------------------------------------------------

struct WerReport {
  int substitutions = 0;
  int deletions = 0;
  int insertions = 0;
  int reference_length = 0;
  double wer = 0.0;
};

// Minimal-cost alignment with unit costs; ties prefer substitution over an
// insertion+deletion pair.
WerReport wer(std::span<const std::string> reference,
              std::span<const std::string> hypothesis);

double delta_wer(double wer_recon, double wer_ori);

// Whitespace-split, case-folded word list.
std::vector<std::string> tokenize_words(std::string_view text);

// -- vocal-to-accompaniment ratio ----------------------------------------------

struct VarDb {
  double value = 0.0;
};

VarDb var_db(std::span<const double> vocal, std::span<const double> accomp);

// -- vocal range ----------------------------------------------------------------

struct Note {
  int midi = 0;
  int frames = 0;
};

// Quantizes voiced frames to the nearest semitone (ties to even), merges
// consecutive equal-semitone frames into notes, and drops notes shorter than
// min_duration_ms. Unvoiced frames break notes.
std::vector<Note> note_filter(const synth::PitchTrack& pitch,
                              int min_duration_ms = 40);

struct VocalRangeReport {
  double range_semitones = 0.0;
  double min_note = 0.0;
  double max_note = 0.0;
  int notes_after_filter = 0;
  bool defined = false;  // false when no note survives the filter
};

VocalRangeReport vocal_range(const synth::PitchTrack& pitch);

// -- embedding similarity --------------------------------------------------------

struct SimilarityStats {
  double median = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t pair_count = 0;
  std::size_t slice_size = 0;
};

// All-pairs cosine similarity between two embedding sets; reports stats over
// the top ceil(pct * pairs) scores.
SimilarityStats top_percent_similarity(
    std::span<const std::vector<double>> ref_embeds,
    std::span<const std::vector<double>> gen_embeds, double pct = 0.01);

// -- correlation and order statistics ---------------------------------------------

double pearson(std::span<const double> x, std::span<const double> y);

double spearman(std::span<const double> x, std::span<const double> y);

struct DurationStats {
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  double mean = 0.0;
};

DurationStats duration_stats(std::span<const double> durations_s);

}  // namespace yuedesk::metrics
