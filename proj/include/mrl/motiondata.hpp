#pragma once

// Motion sequences: binary/CSV I/O, downsampling, windowing, horizon mapping,
// and a deterministic forward-kinematics synthesizer for desk-scale datasets.

#include <cstdint>
#include <string>
#include <vector>

namespace mrl {

struct MotionSequence {
  std::vector<float> coords;  // frames * joints * coord_count, row-major
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t coord_count = 3;
  std::uint32_t fps = 25;
  int class_label = -1;  // -1 = unlabeled

  float& at(std::size_t f, std::size_t j, std::size_t k) {
    return coords[(f * joints + j) * coord_count + k];
  }
  float at(std::size_t f, std::size_t j, std::size_t k) const {
    return coords[(f * joints + j) * coord_count + k];
  }
};

// A contiguous (past, future) pair cut from one sequence; future starts on the
// frame immediately after the past block.
struct SampleWindow {
  std::vector<float> past;    // T * J * K
  std::vector<float> future;  // L * J * K
  std::size_t past_frames = 0;
  std::size_t future_frames = 0;
  std::size_t joints = 0;
  std::size_t coord_count = 3;
  std::size_t source_id = 0;
  std::size_t start = 0;  // offset of past frame 1 in the source
  int label = -1;
};

struct SkeletonSpec {
  std::vector<std::string> joint_names;
  std::vector<int> parents;  // -1 marks the root
  std::vector<double> bone_lengths;

  std::size_t joint_count() const { return parents.size(); }
};

// Validates that parents encode a single rooted tree; throws otherwise.
void validate_skeleton(const SkeletonSpec& spec);

// Branching test skeleton with deterministic bone lengths.
SkeletonSpec make_default_skeleton(std::size_t joints);

// MSEQ container round trip (f32 payload, little-endian header).
MotionSequence read_sequence(const std::string& path);
void write_sequence(const std::string& path, const MotionSequence& seq);

// Strided frame selection; target_fps must divide seq.fps.
MotionSequence downsample(const MotionSequence& seq, std::uint32_t target_fps);

// All (past T, future L) windows at offsets 0, stride, 2*stride, ...
std::vector<SampleWindow> window_split(const MotionSequence& seq, std::size_t past_frames,
                                       std::size_t future_frames, std::size_t stride,
                                       std::size_t source_id = 0);

// Millisecond horizon -> 1-based future frame index.
std::size_t ms_to_frame(long ms, std::uint32_t fps);

// Deterministic per-class sinusoidal joint motion over the skeleton tree.
std::vector<MotionSequence> synth_generate(const SkeletonSpec& spec, std::size_t classes,
                                           std::size_t per_class, std::size_t frames,
                                           std::uint32_t fps, std::uint64_t seed);

// One frame per row, J*K columns joint-major; optional header row.
MotionSequence csv_import(const std::string& path, std::uint32_t fps, std::size_t joints,
                          std::size_t coord_count);

// Dataset index: a JSON array of {"file": relative path, "label": int|null}.
struct IndexEntry {
  std::string file;
  int label = -1;  // -1 = null
};
void write_index(const std::string& path, const std::vector<IndexEntry>& entries);
std::vector<IndexEntry> read_index(const std::string& path);

// Reads every sequence named by an index file (paths relative to it).
std::vector<MotionSequence> load_dataset(const std::string& index_path);

// Subtracts the root-joint (joint 0) position at the last past frame from all
// coordinates of the window.
void center_window_on_root(SampleWindow& w);

}  // namespace mrl
