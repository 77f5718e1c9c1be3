#include "yuedesk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "yuedesk/error.hpp"
#include "yuedesk/rng.hpp"
#include "yuedesk/synth.hpp"

using namespace yuedesk;
using namespace yuedesk::metrics;

namespace {

std::vector<std::string> words(std::string_view text) {
  return tokenize_words(text);
}

// Independent minimal-edit-cost oracle: plain memoized recursion, no
// backtrace, distinct from the production table walk.
int edit_cost_oracle(std::span<const std::string> ref,
                     std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> memo((n + 1) * (m + 1), -1);
  const std::function<int(std::size_t, std::size_t)> go =
      [&](std::size_t i, std::size_t j) -> int {
    if (i == n) return static_cast<int>(m - j);
    if (j == m) return static_cast<int>(n - i);
    int& slot = memo[i * (m + 1) + j];
    if (slot >= 0) return slot;
    const int sub = go(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
    const int del = go(i + 1, j) + 1;
    const int ins = go(i, j + 1) + 1;
    return slot = std::min({sub, del, ins});
  };
  return go(0, 0);
}

}  // namespace

TEST_CASE("wer: direct examples") {
  const auto r1 = wer(words("a b c"), words("a b c"));
  CHECK(r1.wer == 0.0);
  CHECK(r1.substitutions + r1.deletions + r1.insertions == 0);

  const auto r2 = wer(words("a b c d"), words("a x c"));
  CHECK(r2.substitutions == 1);
  CHECK(r2.deletions == 1);
  CHECK(r2.insertions == 0);
  CHECK(r2.wer == doctest::Approx(0.5));

  const auto r3 = wer(words("a"), words("a b c"));
  CHECK(r3.insertions == 2);
  CHECK(r3.wer == doctest::Approx(2.0));

  CHECK_THROWS_AS(wer({}, words("a")), Error);

  // Case folding and whitespace splitting live in the tokenizer.
  CHECK(words("  Hello\tWorld\n") == std::vector<std::string>{"hello", "world"});
}

TEST_CASE("wer: DP equals exhaustive alignment on all short pairs") {
  // All word lists of length <= 4 over a 3-symbol alphabet here; the
  // acceptance suite extends the sweep to length 6.
  const std::vector<std::string> alphabet = {"a", "b", "c"};
  std::vector<std::vector<std::string>> lists = {{}};
  std::vector<std::vector<std::string>> frontier = {{}};
  for (int len = 1; len <= 4; ++len) {
    std::vector<std::vector<std::string>> next;
    for (const auto& prefix : frontier) {
      for (const auto& s : alphabet) {
        auto list = prefix;
        list.push_back(s);
        next.push_back(list);
      }
    }
    lists.insert(lists.end(), next.begin(), next.end());
    frontier = std::move(next);
  }
  for (const auto& ref : lists) {
    if (ref.empty()) continue;
    for (const auto& hyp : lists) {
      const WerReport report = wer(ref, hyp);
      const int oracle = edit_cost_oracle(ref, hyp);
      REQUIRE(report.substitutions + report.deletions + report.insertions == oracle);
    }
  }
}

TEST_CASE("delta_wer") {
  CHECK(delta_wer(0.30, 0.10) == doctest::Approx(0.20));
  CHECK(delta_wer(0.42, 0.42) == 0.0);
  CHECK(delta_wer(0.1, 0.4) < 0.0);
  CHECK_THROWS_AS(delta_wer(-0.1, 0.0), Error);
}

TEST_CASE("var_db: closed-form sine fixtures") {
  const auto sine = [](double amp) {
    return synth::gen_sine(440.0, 1.0, amp, 16000);
  };
  CHECK(var_db(sine(1.0), sine(1.0)).value == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(var_db(sine(std::sqrt(10.0)), sine(1.0)).value ==
        doctest::Approx(10.0).epsilon(1e-9));
  CHECK(var_db(sine(0.5), sine(1.0)).value ==
        doctest::Approx(-6.020599913279624).epsilon(1e-9));

  // Scale invariance: adding c dB to both tracks leaves VAR unchanged.
  const double base = var_db(sine(0.7), sine(0.3)).value;
  for (double c : {0.1, 2.0, 17.5}) {
    CHECK(var_db(sine(0.7 * c), sine(0.3 * c)).value ==
          doctest::Approx(base).epsilon(1e-9));
  }

  const std::vector<double> zeros(16000, 0.0);
  CHECK_THROWS_AS(var_db(sine(1.0), zeros), Error);   // VAR -> +inf
  CHECK_THROWS_AS(var_db(zeros, sine(1.0)), Error);   // VAR -> -inf
  CHECK_THROWS_AS(var_db(sine(1.0), std::vector<double>(7, 1.0)), Error);
}

TEST_CASE("note_filter: 40 ms rule and note segmentation") {
  using synth::gen_pitch_track;
  const std::vector<std::pair<int, int>> short_note = {{69, 30}};
  CHECK(note_filter(gen_pitch_track(short_note)).empty());

  const std::vector<std::pair<int, int>> exact = {{69, 40}};
  CHECK(note_filter(gen_pitch_track(exact)).size() == 1);

  const std::vector<std::pair<int, int>> sustained = {{69, 100}};
  const auto notes = note_filter(gen_pitch_track(sustained));
  REQUIRE(notes.size() == 1);
  CHECK(notes[0].midi == 69);
  CHECK(notes[0].frames == 10);

  synth::PitchTrack gap = gen_pitch_track(sustained);
  gap.f0_hz.push_back(0.0);
  const auto resumed = gen_pitch_track(sustained);
  gap.f0_hz.insert(gap.f0_hz.end(), resumed.f0_hz.begin(), resumed.f0_hz.end());
  CHECK(note_filter(gap).size() == 2);

  synth::PitchTrack bad;
  bad.f0_hz = {2500.0};
  CHECK_THROWS_AS(note_filter(bad), Error);
}

TEST_CASE("vocal_range: octave fixture, degenerate cases, transposition") {
  using synth::gen_pitch_track;
  std::vector<std::pair<int, int>> scale;
  for (int midi = 60; midi <= 72; ++midi) scale.emplace_back(midi, 100);
  const VocalRangeReport octave = vocal_range(gen_pitch_track(scale));
  CHECK(octave.defined);
  CHECK(octave.range_semitones == 12.0);
  CHECK(octave.min_note == 60.0);
  CHECK(octave.max_note == 72.0);
  CHECK(octave.notes_after_filter == 13);

  const VocalRangeReport single =
      vocal_range(gen_pitch_track(std::vector<std::pair<int, int>>{{64, 500}}));
  CHECK(single.range_semitones == 0.0);

  synth::PitchTrack silent;
  silent.f0_hz.assign(50, 0.0);
  const VocalRangeReport none = vocal_range(silent);
  CHECK(!none.defined);
  CHECK(none.notes_after_filter == 0);

  // Transposition invariance.
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::pair<int, int>> notes;
    const int n = 1 + static_cast<int>(rng.uniform_below(8));
    for (int i = 0; i < n; ++i) {
      notes.emplace_back(40 + static_cast<int>(rng.uniform_below(30)),
                         40 + 10 * static_cast<int>(rng.uniform_below(6)));
    }
    const double base = vocal_range(gen_pitch_track(notes)).range_semitones;
    const int shift = 1 + static_cast<int>(rng.uniform_below(12));
    for (auto& [midi, ms] : notes) midi += shift;
    CHECK(vocal_range(gen_pitch_track(notes)).range_semitones == base);
  }
}

TEST_CASE("vocal_range: engineered corpus median") {
  using synth::gen_pitch_track;
  // Eleven tracks with ranges 22..32 semitones; the median must be exactly 27.
  std::vector<double> ranges;
  for (int range = 22; range <= 32; ++range) {
    const std::vector<std::pair<int, int>> notes = {{50, 200}, {50 + range, 200}};
    ranges.push_back(vocal_range(gen_pitch_track(notes)).range_semitones);
  }
  const DurationStats stats = duration_stats(ranges);
  CHECK(stats.median == 27.0);
}

TEST_CASE("top_percent_similarity: identity, orthogonal, and sort oracle") {
  std::vector<std::vector<double>> basis = {
      {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
  const SimilarityStats self = top_percent_similarity(basis, basis, 0.2);
  CHECK(self.max == doctest::Approx(1.0));
  CHECK(self.median == doctest::Approx(1.0));

  std::vector<std::vector<double>> left = {{1.0, 0.0}, {1.0, 0.0}};
  std::vector<std::vector<double>> right = {{0.0, 1.0}, {0.0, 2.0}};
  const SimilarityStats ortho = top_percent_similarity(left, right, 1.0);
  CHECK(ortho.max == doctest::Approx(0.0));
  CHECK(ortho.mean == doctest::Approx(0.0));

  // Full-sort oracle on random vectors. The oracle shares the cosine
  // arithmetic (normalize-then-dot, in index order) and differs in the
  // selection path: a full descending sort instead of a partial selection.
  Rng rng(17);
  const auto random_set = [&](int count, int dim) {
    std::vector<std::vector<double>> set(count, std::vector<double>(dim));
    for (auto& v : set) {
      for (double& x : v) x = rng.normal();
    }
    return set;
  };
  const auto unit = [](const std::vector<std::vector<double>>& set) {
    auto out = set;
    for (auto& v : out) {
      double sq = 0.0;
      for (double x : v) sq += x * x;
      const double inv = 1.0 / std::sqrt(sq);
      for (double& x : v) x *= inv;
    }
    return out;
  };
  const auto ref = random_set(40, 8);
  const auto gen = random_set(25, 8);
  const auto ref_unit = unit(ref);
  const auto gen_unit = unit(gen);
  for (double pct : {0.01, 0.1, 0.5, 1.0}) {
    const SimilarityStats stats = top_percent_similarity(ref, gen, pct);
    std::vector<double> all;
    for (const auto& r : ref_unit) {
      for (const auto& g : gen_unit) {
        double dot = 0.0;
        for (std::size_t k = 0; k < r.size(); ++k) dot += r[k] * g[k];
        all.push_back(dot);
      }
    }
    std::sort(all.begin(), all.end(), std::greater<double>());
    const std::size_t slice = static_cast<std::size_t>(
        std::ceil(pct * static_cast<double>(all.size())));
    REQUIRE(stats.slice_size == slice);
    CHECK(stats.max == all[0]);
    double sum = 0.0;
    for (std::size_t i = 0; i < slice; ++i) sum += all[i];
    CHECK(stats.mean == sum / static_cast<double>(slice));
    const double median = (slice % 2 == 1)
                              ? all[slice / 2]
                              : 0.5 * (all[slice / 2 - 1] + all[slice / 2]);
    CHECK(stats.median == median);
  }

  std::vector<std::vector<double>> with_zero = {{0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(top_percent_similarity(with_zero, basis, 0.5), Error);
  CHECK_THROWS_AS(top_percent_similarity(ref, gen, 0.0), Error);
}

TEST_CASE("pearson: affine invariants and long-double fixture") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0, 5.0};
  std::vector<double> y(5);
  for (int i = 0; i < 5; ++i) y[i] = 2.0 * x[i] + 3.0;
  CHECK(pearson(x, y) == doctest::Approx(1.0).epsilon(1e-12));
  for (int i = 0; i < 5; ++i) y[i] = -x[i];
  CHECK(pearson(x, y) == doctest::Approx(-1.0).epsilon(1e-12));

  // Fixed five-point fixture vs an independent long-double computation.
  const std::vector<double> a = {0.11, -2.5, 3.75, 0.02, 1.9};
  const std::vector<double> b = {1.2, 0.4, -0.9, 2.25, -3.1};
  long double ma = 0, mb = 0;
  for (int i = 0; i < 5; ++i) {
    ma += static_cast<long double>(a[i]);
    mb += static_cast<long double>(b[i]);
  }
  ma /= 5;
  mb /= 5;
  long double sab = 0, saa = 0, sbb = 0;
  for (int i = 0; i < 5; ++i) {
    const long double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  const double expected = static_cast<double>(sab / sqrtl(saa * sbb));
  CHECK(pearson(a, b) == doctest::Approx(expected).epsilon(1e-12));

  // Affine invariance of either argument.
  std::vector<double> scaled(5);
  for (int i = 0; i < 5; ++i) scaled[i] = 7.0 * b[i] - 11.0;
  CHECK(pearson(a, scaled) == doctest::Approx(pearson(a, b)).epsilon(1e-12));

  const std::vector<double> flat = {1.0, 1.0, 1.0};
  const std::vector<double> rising = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(pearson(flat, rising), Error);
  CHECK_THROWS_AS(pearson(std::vector<double>{1.0}, std::vector<double>{2.0}),
                  Error);
}

TEST_CASE("spearman: monotone and anti-monotone sequences") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  const std::vector<double> up = {0.1, 0.5, 0.7, 4.2};
  const std::vector<double> down = {9.0, 3.0, 2.5, 0.1};
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
}

TEST_CASE("duration_stats: order statistics") {
  const DurationStats one = duration_stats(std::vector<double>{300.0});
  CHECK(one.min == 300.0);
  CHECK(one.max == 300.0);
  CHECK(one.median == 300.0);
  CHECK(one.mean == 300.0);

  const DurationStats two = duration_stats(std::vector<double>{100.0, 200.0});
  CHECK(two.median == 150.0);

  Rng rng(7);
  std::vector<double> values(101);
  for (double& v : values) v = rng.uniform() * 400.0;
  const DurationStats stats = duration_stats(values);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  CHECK(stats.min == sorted.front());
  CHECK(stats.max == sorted.back());
  CHECK(stats.median == sorted[50]);

  CHECK_THROWS_AS(duration_stats(std::vector<double>{}), Error);
}
