#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mrl/errors.hpp"
#include "mrl/motiondata.hpp"
#include "mrl/rng.hpp"

using namespace mrl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  auto dir = fs::temp_directory_path() / ("mrl_md_test_" + std::to_string(::getpid()) + "_" +
                                          std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

MotionSequence random_sequence(std::size_t frames, std::size_t joints, std::uint32_t fps,
                               std::uint64_t seed) {
  MotionSequence seq;
  seq.frames = frames;
  seq.joints = joints;
  seq.coord_count = 3;
  seq.fps = fps;
  seq.class_label = 2;
  seq.coords.resize(frames * joints * 3);
  Rng rng(seed);
  for (auto& v : seq.coords) v = static_cast<float>(rng.normal());
  return seq;
}

}  // namespace

TEST_CASE("sequence round trip is bit exact") {
  const auto dir = temp_dir();
  auto seq = random_sequence(10, 22, 50, 1);
  const auto path = (dir / "a.mseq").string();
  write_sequence(path, seq);
  const auto back = read_sequence(path);
  CHECK(back.frames == 10);
  CHECK(back.joints == 22);
  CHECK(back.coord_count == 3);
  CHECK(back.fps == 50);
  CHECK(back.class_label == 2);
  REQUIRE(back.coords.size() == seq.coords.size());
  for (std::size_t i = 0; i < seq.coords.size(); ++i) CHECK(back.coords[i] == seq.coords[i]);
}

TEST_CASE("sequence read rejects bad magic, bad version, truncation") {
  const auto dir = temp_dir();
  const auto good = (dir / "g.mseq").string();
  write_sequence(good, random_sequence(4, 2, 25, 3));

  {
    std::ofstream f(dir / "magic.mseq", std::ios::binary);
    f << "XXXXrest of the file";
  }
  try {
    read_sequence((dir / "magic.mseq").string());
    FAIL("expected bad-magic");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadMagic);
  }

  {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[4] = 9;
    std::ofstream out(dir / "ver.mseq", std::ios::binary);
    out << bytes;
  }
  try {
    read_sequence((dir / "ver.mseq").string());
    FAIL("expected bad-version");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BadVersion);
  }

  {
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() - 7);
    std::ofstream out(dir / "trunc.mseq", std::ios::binary);
    out << bytes;
  }
  try {
    read_sequence((dir / "trunc.mseq").string());
    FAIL("expected truncation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Truncated);
    const std::string msg = e.what();
    CHECK(msg.find("byte") != std::string::npos);  // reports offsets
  }
}

TEST_CASE("downsample keeps strided frames and composes") {
  auto seq = random_sequence(100, 3, 50, 7);
  auto half = downsample(seq, 25);
  CHECK(half.fps == 25);
  CHECK(half.frames == 50);
  for (std::size_t f = 0; f < 50; ++f)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) CHECK(half.at(f, j, k) == seq.at(2 * f, j, k));

  auto same = downsample(seq, 50);
  CHECK(same.frames == seq.frames);
  CHECK(same.coords == seq.coords);

  CHECK_THROWS_AS(downsample(seq, 24), Error);

  // 100 -> 50 -> 25 equals 100 -> 25
  auto seq100 = random_sequence(80, 2, 100, 9);
  auto via = downsample(downsample(seq100, 50), 25);
  auto direct = downsample(seq100, 25);
  CHECK(via.frames == direct.frames);
  CHECK(via.coords == direct.coords);
}

TEST_CASE("window_split counts and copies exactly") {
  auto seq = random_sequence(35, 4, 25, 11);
  auto w1 = window_split(seq, 10, 25, 1);
  REQUIRE(w1.size() == 1);
  CHECK(w1[0].start == 0);
  CHECK(w1[0].label == 2);

  auto seq34 = random_sequence(34, 4, 25, 11);
  CHECK(window_split(seq34, 10, 25, 1).empty());

  auto seq37 = random_sequence(37, 4, 25, 13);
  auto w2 = window_split(seq37, 10, 25, 2);
  REQUIRE(w2.size() == 2);
  CHECK(w2[0].start == 0);
  CHECK(w2[1].start == 2);

  // past frame t (1-based) == source frame offset + t - 1; future continues it
  for (const auto& w : w2) {
    for (std::size_t t = 0; t < 10; ++t)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 3; ++k)
          CHECK(w.past[(t * 4 + j) * 3 + k] == seq37.at(w.start + t, j, k));
    for (std::size_t l = 0; l < 25; ++l)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t k = 0; k < 3; ++k)
          CHECK(w.future[(l * 4 + j) * 3 + k] == seq37.at(w.start + 10 + l, j, k));
  }
}

TEST_CASE("ms_to_frame reproduces the 25 fps horizon table") {
  CHECK(ms_to_frame(80, 25) == 2);
  CHECK(ms_to_frame(160, 25) == 4);
  CHECK(ms_to_frame(320, 25) == 8);
  CHECK(ms_to_frame(400, 25) == 10);
  CHECK(ms_to_frame(560, 25) == 14);
  CHECK(ms_to_frame(1000, 25) == 25);

  try {
    ms_to_frame(100, 25);
    FAIL("expected alignment error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("40") != std::string::npos);  // names the period
  }

  std::size_t prev = 0;
  for (long ms = 40; ms <= 2000; ms += 40) {
    const auto f = ms_to_frame(ms, 25);
    CHECK(f > prev);
    prev = f;
  }
}

TEST_CASE("synth generation is deterministic with labeled classes") {
  auto spec = make_default_skeleton(9);
  auto a = synth_generate(spec, 4, 8, 40, 25, 123);
  auto b = synth_generate(spec, 4, 8, 40, 25, 123);
  REQUIRE(a.size() == 32);
  REQUIRE(b.size() == 32);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].class_label == static_cast<int>(i / 8));
    CHECK(a[i].coords == b[i].coords);
  }
  auto c = synth_generate(spec, 4, 8, 40, 25, 124);
  CHECK(a[0].coords != c[0].coords);
}

TEST_CASE("synth preserves bone lengths through forward kinematics") {
  auto spec = make_default_skeleton(7);
  auto seqs = synth_generate(spec, 2, 2, 20, 25, 5);
  for (const auto& seq : seqs) {
    for (std::size_t f = 0; f < seq.frames; ++f) {
      for (std::size_t j = 1; j < seq.joints; ++j) {
        const auto p = static_cast<std::size_t>(spec.parents[j]);
        double sq = 0;
        for (std::size_t k = 0; k < 3; ++k) {
          const double d = seq.at(f, j, k) - seq.at(f, p, k);
          sq += d * d;
        }
        CHECK(std::abs(std::sqrt(sq) - spec.bone_lengths[j]) < 1e-5);
      }
    }
  }
}

TEST_CASE("synth rejects degenerate skeletons") {
  SkeletonSpec empty;
  CHECK_THROWS_AS(synth_generate(empty, 1, 1, 10, 25, 0), Error);
}

TEST_CASE("csv import parses frames and flags ragged rows") {
  const auto dir = temp_dir();
  {
    std::ofstream f(dir / "ok.csv");
    f << "0,0,0\n1,0,0\n";
  }
  auto seq = csv_import((dir / "ok.csv").string(), 25, 1, 3);
  CHECK(seq.frames == 2);
  CHECK(seq.at(1, 0, 0) == 1.0f);

  {
    std::ofstream f(dir / "hdr.csv");
    f << "x,y,z\n0,0,0\n1,2,3\n";
  }
  auto seqh = csv_import((dir / "hdr.csv").string(), 25, 1, 3);
  CHECK(seqh.frames == 2);
  CHECK(seqh.at(1, 0, 2) == 3.0f);

  {
    std::ofstream f(dir / "ragged.csv");
    f << "0,0,0\n1,0\n";
  }
  try {
    csv_import((dir / "ragged.csv").string(), 25, 1, 3);
    FAIL("expected ragged-row error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  {
    std::ofstream f(dir / "alpha.csv");
    f << "0,0,0\n1,zap,0\n";
  }
  try {
    csv_import((dir / "alpha.csv").string(), 25, 1, 3);
    FAIL("expected non-numeric error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("csv import round trips through the binary container") {
  const auto dir = temp_dir();
  {
    std::ofstream f(dir / "rt.csv");
    f << "0.125,2.5,-3\n4,5.75,6\n7,8,9.0625\n";
  }
  auto seq = csv_import((dir / "rt.csv").string(), 25, 1, 3);
  write_sequence((dir / "rt.mseq").string(), seq);
  auto back = read_sequence((dir / "rt.mseq").string());
  CHECK(back.coords == seq.coords);
}

TEST_CASE("index round trip and dataset loading") {
  const auto dir = temp_dir();
  auto seqs = synth_generate(make_default_skeleton(5), 2, 2, 12, 25, 77);
  std::vector<IndexEntry> entries;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::string name = "seq" + std::to_string(i) + ".mseq";
    write_sequence((dir / name).string(), seqs[i]);
    entries.push_back({name, seqs[i].class_label});
  }
  const auto index = (dir / "index.json").string();
  write_index(index, entries);
  auto loaded_entries = read_index(index);
  REQUIRE(loaded_entries.size() == 4);
  CHECK(loaded_entries[3].label == 1);
  auto loaded = load_dataset(index);
  REQUIRE(loaded.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(loaded[i].coords == seqs[i].coords);
}

TEST_CASE("root centering subtracts the last past root position") {
  auto seq = random_sequence(6, 3, 25, 21);
  auto windows = window_split(seq, 4, 2, 1);
  REQUIRE(!windows.empty());
  auto w = windows[0];
  const float rx = w.past[(3 * 3 + 0) * 3 + 0];
  center_window_on_root(w);
  CHECK(w.past[(3 * 3 + 0) * 3 + 0] == 0.0f);
  CHECK(w.past[0] == doctest::Approx(windows[0].past[0] - rx));
}
