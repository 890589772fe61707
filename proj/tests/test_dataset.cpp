// Copyright 2026  molex authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "dataset.hpp"
#include "error.hpp"

using molex::Dataset;
using molex::SynthSpec;
using molex::Utterance;

namespace {

namespace fs = std::filesystem;

std::string temp_base(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Hand-written artifact statistics, one per family. Each is designed around
// the published generation recipe, not around the generator code path.

// A injects a fixed channel pattern on every 4th frame: correlate the gap
// between those frames and the rest against that pattern.
double stat_buzz(const Utterance& u) {
  int t = u.features.dim(0), d = u.features.dim(1);
  double s = 0.0;
  for (int c = 0; c < d; ++c) {
    double on = 0.0, off = 0.0;
    int n_on = 0, n_off = 0;
    for (int i = 0; i < t; ++i) {
      if (i % 4 == 0) {
        on += u.features.at(i, c);
        ++n_on;
      } else {
        off += u.features.at(i, c);
        ++n_off;
      }
    }
    s += (on / n_on - off / n_off) * std::sin(0.37 * c + 0.9);
  }
  return s / d;
}

// B collapses frames toward their block mean: adjacent frames inside a block
// become unnaturally similar while pairs straddling a block edge keep their
// jump. The ratio of the two is invariant to per-utterance amplitude.
double stat_smoothness(const Utterance& u) {
  int t = u.features.dim(0), d = u.features.dim(1);
  double within = 0.0, across = 0.0;
  int n_w = 0, n_a = 0;
  for (int i = 0; i + 1 < t; ++i) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) {
      double diff = u.features.at(i + 1, c) - u.features.at(i, c);
      s += diff * diff;
    }
    if ((i + 1) % 8 == 0) {
      across += s;
      ++n_a;
    } else {
      within += s;
      ++n_w;
    }
  }
  return (within / n_w) / (across / n_a);
}

// C damps the second quarter of the channels: compare band energy against
// total energy.
double stat_band_ratio(const Utterance& u) {
  int t = u.features.dim(0), d = u.features.dim(1);
  double band = 0.0, total = 0.0;
  for (int i = 0; i < t; ++i)
    for (int c = 0; c < d; ++c) {
      double e = u.features.at(i, c) * u.features.at(i, c);
      total += e;
      if (c >= d / 4 && c < d / 2) band += e;
    }
  int band_w = d / 2 - d / 4;
  return (band / band_w) / (total / d);
}

struct ClassStats {
  double lo_spoof = 1e300, hi_spoof = -1e300;
  double lo_bona = 1e300, hi_bona = -1e300;
};

template <typename F>
ClassStats sweep(const Dataset& ds, F stat) {
  ClassStats cs;
  for (const Utterance& u : ds.utts()) {
    double v = stat(u);
    if (u.label == 0) {
      cs.lo_spoof = std::min(cs.lo_spoof, v);
      cs.hi_spoof = std::max(cs.hi_spoof, v);
    } else {
      cs.lo_bona = std::min(cs.lo_bona, v);
      cs.hi_bona = std::max(cs.hi_bona, v);
    }
  }
  return cs;
}

template <typename F>
void mean_std(const Dataset& ds, F stat, double* mean, double* sd) {
  std::vector<double> vals;
  for (const Utterance& u : ds.utts())
    if (u.label == 0) vals.push_back(stat(u));
  double m = 0.0;
  for (double v : vals) m += v;
  m /= static_cast<double>(vals.size());
  double var = 0.0;
  for (double v : vals) var += (v - m) * (v - m);
  *mean = m;
  *sd = std::sqrt(var / static_cast<double>(vals.size()));
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("generation is a pure function of the spec") {
  SynthSpec spec;
  spec.seed = 42;
  spec.per_class = 10;
  spec.frames = 24;
  spec.d_in = 12;
  Dataset a = Dataset::generate(spec);
  Dataset b = Dataset::generate(spec);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.utt(i).id == b.utt(i).id);
    CHECK(a.utt(i).label == b.utt(i).label);
    CHECK(a.utt(i).features.vec() == b.utt(i).features.vec());
  }
  CHECK(a.utt(0).label == 1);  // even index bonafide
  CHECK(a.utt(1).label == 0);
  CHECK(a.d_in() == 12);

  SynthSpec bad = spec;
  bad.domain = "Q";
  CHECK_THROWS_AS(Dataset::generate(bad), molex::ConfigError);
  bad = spec;
  bad.difficulty = 1.5;
  CHECK_THROWS_AS(Dataset::generate(bad), molex::ConfigError);
}

TEST_CASE("save, load, and save again byte-exactly") {
  SynthSpec spec;
  spec.seed = 7;
  spec.per_class = 6;
  spec.frames = 16;
  spec.d_in = 10;
  spec.domain = "B";
  Dataset ds = Dataset::generate(spec);
  std::string base1 = temp_base("molex_ds_rt1");
  std::string base2 = temp_base("molex_ds_rt2");
  ds.save(base1);
  Dataset loaded = Dataset::load(base1);
  REQUIRE(loaded.size() == ds.size());
  CHECK(loaded.d_in() == 10);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded.utt(i).id == ds.utt(i).id);
    CHECK(loaded.utt(i).label == ds.utt(i).label);
    CHECK(loaded.utt(i).domain == ds.utt(i).domain);
    CHECK(loaded.utt(i).features.vec() == ds.utt(i).features.vec());
  }
  loaded.save(base2);
  CHECK(slurp(base1 + ".mold") == slurp(base2 + ".mold"));
  CHECK(slurp(base1 + ".jsonl") == slurp(base2 + ".jsonl"));

  // manifest line count equals utterance count
  std::ifstream manifest(base1 + ".jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(manifest, line))
    if (!line.empty()) ++lines;
  CHECK(lines == static_cast<int>(ds.size()));

  for (const std::string& b : {base1, base2}) {
    fs::remove(b + ".mold");
    fs::remove(b + ".jsonl");
  }
}

TEST_CASE("corrupt files fail loudly instead of crashing") {
  SynthSpec spec;
  spec.per_class = 3;
  spec.frames = 8;
  spec.d_in = 8;
  Dataset ds = Dataset::generate(spec);
  std::string base = temp_base("molex_ds_corrupt");
  ds.save(base);

  SUBCASE("missing files") {
    CHECK_THROWS_AS(Dataset::load(temp_base("molex_ds_nowhere")), molex::IoError);
  }
  SUBCASE("bad magic") {
    std::vector<char> blob = slurp(base + ".mold");
    blob[0] = 'X';
    std::ofstream(base + ".mold", std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    CHECK_THROWS_AS(Dataset::load(base), molex::FormatError);
  }
  SUBCASE("future version") {
    std::vector<char> blob = slurp(base + ".mold");
    blob[4] = 99;
    std::ofstream(base + ".mold", std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    CHECK_THROWS_AS(Dataset::load(base), molex::VersionError);
  }
  SUBCASE("truncated blob") {
    std::vector<char> blob = slurp(base + ".mold");
    blob.resize(blob.size() / 2);
    std::ofstream(base + ".mold", std::ios::binary).write(blob.data(), static_cast<std::streamsize>(blob.size()));
    try {
      Dataset::load(base);
      FAIL("expected a format error");
    } catch (const molex::FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
  }
  SUBCASE("mangled manifest") {
    std::ofstream(base + ".jsonl", std::ios::app) << "{\"id\":\"zzz\",  half a line\n";
    CHECK_THROWS_AS(Dataset::load(base), molex::FormatError);
  }
  fs::remove(base + ".mold");
  fs::remove(base + ".jsonl");
}

TEST_CASE("difficulty zero is separable by the family detector") {
  SynthSpec spec;
  spec.seed = 11;
  spec.per_class = 40;
  spec.frames = 48;
  spec.d_in = 16;
  spec.difficulty = 0.0;

  spec.domain = "A";
  ClassStats a = sweep(Dataset::generate(spec), stat_buzz);
  CHECK(a.lo_spoof > a.hi_bona);  // buzz statistic: spoof strictly above

  spec.domain = "B";
  ClassStats b = sweep(Dataset::generate(spec), stat_smoothness);
  CHECK(b.hi_spoof < b.lo_bona);  // block mixing: spoof strictly smoother

  spec.domain = "C";
  ClassStats c = sweep(Dataset::generate(spec), stat_band_ratio);
  CHECK(c.hi_spoof < c.lo_bona);  // notch: spoof band energy strictly lower
}

TEST_CASE("difficulty one collapses the class-conditional means") {
  SynthSpec spec;
  spec.seed = 13;
  spec.per_class = 150;
  spec.frames = 60;
  spec.d_in = 16;
  spec.difficulty = 1.0;
  Dataset ds = Dataset::generate(spec);
  std::vector<double> mean_b(16, 0.0), mean_s(16, 0.0);
  std::int64_t n_b = 0, n_s = 0;
  for (const Utterance& u : ds.utts()) {
    auto& m = (u.label == 1) ? mean_b : mean_s;
    auto& n = (u.label == 1) ? n_b : n_s;
    for (int i = 0; i < 60; ++i)
      for (int c = 0; c < 16; ++c) m[static_cast<std::size_t>(c)] += u.features.at(i, c);
    n += 60;
  }
  double global = 0.0, mean_abs = 0.0;
  for (int c = 0; c < 16; ++c) {
    double diff = mean_b[static_cast<std::size_t>(c)] / n_b - mean_s[static_cast<std::size_t>(c)] / n_s;
    global += diff;
    mean_abs += std::abs(diff);
  }
  CHECK(std::abs(global / 16.0) < 0.06);
  CHECK(mean_abs / 16.0 < 0.15);
}

TEST_CASE("families carry statistically distinct artifacts") {
  SynthSpec spec;
  spec.seed = 17;
  spec.per_class = 60;
  spec.frames = 96;  // enough block edges to stabilize the smoothness ratio
  spec.d_in = 16;
  spec.difficulty = 0.5;
  spec.domain = "A";
  Dataset da = Dataset::generate(spec);
  spec.domain = "B";
  Dataset db = Dataset::generate(spec);
  spec.domain = "C";
  Dataset dc = Dataset::generate(spec);

  auto assert_separated = [](const Dataset& x, const Dataset& y, auto stat) {
    double mx, sx, my, sy;
    mean_std(x, stat, &mx, &sx);
    mean_std(y, stat, &my, &sy);
    CHECK(std::abs(mx - my) > 3.0 * std::max(sx, sy));
  };
  // each family's own statistic separates it from both others
  assert_separated(da, db, stat_buzz);
  assert_separated(da, dc, stat_buzz);
  assert_separated(db, da, stat_smoothness);
  assert_separated(db, dc, stat_smoothness);
  assert_separated(dc, da, stat_band_ratio);
  assert_separated(dc, db, stat_band_ratio);
}

TEST_CASE("concat and subset preserve content and check shapes") {
  SynthSpec spec;
  spec.per_class = 4;
  spec.frames = 10;
  spec.d_in = 8;
  spec.domain = "A";
  Dataset a = Dataset::generate(spec);
  spec.domain = "C";
  spec.seed = 2;
  Dataset c = Dataset::generate(spec);
  Dataset both = Dataset::concat(a, c);
  REQUIRE(both.size() == 16);
  CHECK(both.utt(0).id == a.utt(0).id);
  CHECK(both.utt(8).id == c.utt(0).id);

  Dataset sub = both.subset({1, 9, 3});
  REQUIRE(sub.size() == 3);
  CHECK(sub.utt(0).id == both.utt(1).id);
  CHECK(sub.utt(1).id == both.utt(9).id);

  SynthSpec wide = spec;
  wide.d_in = 12;
  Dataset w = Dataset::generate(wide);
  CHECK_THROWS_AS(Dataset::concat(a, w), molex::ShapeError);
}

}  // TEST_SUITE
