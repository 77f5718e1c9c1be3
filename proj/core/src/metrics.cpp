#include "yuedesk/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "yuedesk/error.hpp"
#include "yuedesk/parallel.hpp"

namespace yuedesk::metrics {

WerReport wer(std::span<const std::string> reference,
              std::span<const std::string> hypothesis) {
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  if (n == 0) fail(ErrorCode::undefined_wer, "WER undefined for empty reference");

  struct Cell {
    int cost;
    int s, d, i;
  };
  std::vector<Cell> dp((n + 1) * (m + 1));
  const auto at = [&](std::size_t i, std::size_t j) -> Cell& {
    return dp[i * (m + 1) + j];
  };
  at(0, 0) = {0, 0, 0, 0};
  for (std::size_t j = 1; j <= m; ++j) {
    at(0, j) = {static_cast<int>(j), 0, 0, static_cast<int>(j)};
  }
  for (std::size_t i = 1; i <= n; ++i) {
    at(i, 0) = {static_cast<int>(i), 0, static_cast<int>(i), 0};
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const bool match = reference[i - 1] == hypothesis[j - 1];
      const Cell& diag = at(i - 1, j - 1);
      const Cell& up = at(i - 1, j);
      const Cell& left = at(i, j - 1);
      const int diag_cost = diag.cost + (match ? 0 : 1);
      const int del_cost = up.cost + 1;
      const int ins_cost = left.cost + 1;
      // Ties prefer the diagonal, so one substitution beats a deletion plus
      // an insertion of equal cost.
      if (diag_cost <= del_cost && diag_cost <= ins_cost) {
        at(i, j) = {diag_cost, diag.s + (match ? 0 : 1), diag.d, diag.i};
      } else if (del_cost <= ins_cost) {
        at(i, j) = {del_cost, up.s, up.d + 1, up.i};
      } else {
        at(i, j) = {ins_cost, left.s, left.d, left.i + 1};
      }
    }
  }
  const Cell& end = at(n, m);
  WerReport report;
  report.substitutions = end.s;
  report.deletions = end.d;
  report.insertions = end.i;
  report.reference_length = static_cast<int>(n);
  report.wer = static_cast<double>(end.s + end.d + end.i) / static_cast<double>(n);
  return report;
}

double delta_wer(double wer_recon, double wer_ori) {
  if (wer_recon < 0.0 || wer_ori < 0.0) {
    fail(ErrorCode::range, "WER values must be non-negative");
  }
  return wer_recon - wer_ori;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) {
        words.push_back(std::move(current));
        current.clear();
      }
    } else {
      current.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

VarDb var_db(std::span<const double> vocal, std::span<const double> accomp) {
  if (vocal.size() != accomp.size()) {
    fail(ErrorCode::shape, "var_db: signals differ in length");
  }
  double ev = 0.0, ea = 0.0;
  for (double v : vocal) ev += v * v;
  for (double a : accomp) ea += a * a;
  if (ea == 0.0) {
    fail(ErrorCode::zero_energy, "accompaniment has zero energy (VAR -> +inf)");
  }
  if (ev == 0.0) {
    fail(ErrorCode::zero_energy, "vocal has zero energy (VAR -> -inf)");
  }
  return {10.0 * std::log10(ev / ea)};
}

namespace {

// Nearest-semitone quantization; half-way values resolve to even MIDI
// numbers (the default FE_TONEAREST behaviour of nearbyint).
int quantize_midi(double f0) {
  const double midi = 69.0 + 12.0 * std::log2(f0 / 440.0);
  return static_cast<int>(std::nearbyint(midi));
}

}  // namespace

std::vector<Note> note_filter(const synth::PitchTrack& pitch, int min_duration_ms) {
  std::vector<Note> notes;
  Note current{0, 0};
  bool open = false;
  const auto flush = [&]() {
    if (open && current.frames * synth::kPitchHopMs >= min_duration_ms) {
      notes.push_back(current);
    }
    open = false;
    current = {0, 0};
  };
  for (double f0 : pitch.f0_hz) {
    if (f0 < 0.0 || f0 > synth::kMaxPitchHz) {
      fail(ErrorCode::range, "pitch frame outside [0, 2000] Hz");
    }
    if (f0 == 0.0) {
      flush();
      continue;
    }
    const int midi = quantize_midi(f0);
    if (open && midi == current.midi) {
      ++current.frames;
    } else {
      flush();
      current = {midi, 1};
      open = true;
    }
  }
  flush();
  return notes;
}

VocalRangeReport vocal_range(const synth::PitchTrack& pitch) {
  const std::vector<Note> notes = note_filter(pitch);
  VocalRangeReport report;
  report.notes_after_filter = static_cast<int>(notes.size());
  if (notes.empty()) return report;  // range undefined, flagged via `defined`
  int lo = notes.front().midi, hi = notes.front().midi;
  for (const Note& note : notes) {
    lo = std::min(lo, note.midi);
    hi = std::max(hi, note.midi);
  }
  report.min_note = lo;
  report.max_note = hi;
  report.range_semitones = hi - lo;
  report.defined = true;
  return report;
}

namespace {

std::vector<std::vector<double>> normalize_embeddings(
    std::span<const std::vector<double>> embeds, std::string_view which) {
  if (embeds.empty()) {
    fail(ErrorCode::data, std::string(which) + " embedding set is empty");
  }
  const std::size_t dim = embeds.front().size();
  std::vector<std::vector<double>> unit(embeds.size());
  for (std::size_t i = 0; i < embeds.size(); ++i) {
    if (embeds[i].size() != dim) {
      fail(ErrorCode::shape, "embedding dimensions differ");
    }
    double sq = 0.0;
    for (double x : embeds[i]) sq += x * x;
    if (sq == 0.0) {
      fail(ErrorCode::normalization,
           std::string(which) + " embedding " + std::to_string(i) + " is zero");
    }
    const double inv = 1.0 / std::sqrt(sq);
    unit[i].resize(dim);
    for (std::size_t k = 0; k < dim; ++k) unit[i][k] = embeds[i][k] * inv;
  }
  return unit;
}

}  // namespace

SimilarityStats top_percent_similarity(
    std::span<const std::vector<double>> ref_embeds,
    std::span<const std::vector<double>> gen_embeds, double pct) {
  if (!(pct > 0.0) || pct > 1.0) {
    fail(ErrorCode::range, "pct must lie in (0, 1]");
  }
  const auto ref = normalize_embeddings(ref_embeds, "reference");
  const auto gen = normalize_embeddings(gen_embeds, "generated");
  if (ref.front().size() != gen.front().size()) {
    fail(ErrorCode::shape, "reference/generated embedding dimensions differ");
  }
  const std::size_t pairs = ref.size() * gen.size();
  std::vector<double> scores(pairs);
  parallel_for_chunks(ref.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double* out = scores.data() + i * gen.size();
      for (std::size_t j = 0; j < gen.size(); ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < ref[i].size(); ++k) dot += ref[i][k] * gen[j][k];
        out[j] = dot;
      }
    }
  });

  const std::size_t slice =
      static_cast<std::size_t>(std::ceil(pct * static_cast<double>(pairs)));
  std::nth_element(scores.begin(), scores.begin() + (slice - 1), scores.end(),
                   std::greater<double>());
  std::sort(scores.begin(), scores.begin() + slice, std::greater<double>());

  SimilarityStats stats;
  stats.pair_count = pairs;
  stats.slice_size = slice;
  stats.max = scores[0];
  double sum = 0.0;
  for (std::size_t i = 0; i < slice; ++i) sum += scores[i];
  stats.mean = sum / static_cast<double>(slice);
  stats.median = (slice % 2 == 1)
                     ? scores[slice / 2]
                     : 0.5 * (scores[slice / 2 - 1] + scores[slice / 2]);
  return stats;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::shape, "pearson: length mismatch");
  if (x.size() < 2) fail(ErrorCode::shape, "pearson needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorCode::undefined_correlation, "pearson undefined for zero variance");
  }
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  return pearson(rx, ry);
}

DurationStats duration_stats(std::span<const double> durations_s) {
  if (durations_s.empty()) {
    fail(ErrorCode::data, "duration_stats: empty input");
  }
  std::vector<double> sorted(durations_s.begin(), durations_s.end());
  std::sort(sorted.begin(), sorted.end());
  DurationStats stats;
  stats.min = sorted.front();
  stats.max = sorted.back();
  const std::size_t n = sorted.size();
  stats.median = (n % 2 == 1) ? sorted[n / 2]
                              : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  stats.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
               static_cast<double>(n);
  return stats;
}

}  // namespace yuedesk::metrics
