#include "mrl/motiondata.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mrl/errors.hpp"
#include "mrl/rng.hpp"

namespace mrl {

namespace {

constexpr char kMagic[4] = {'M', 'S', 'E', 'Q'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 1 + 4 + 4 + 4 + 8 + 4;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}
std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void validate_skeleton(const SkeletonSpec& spec) {
  const std::size_t j = spec.joint_count();
  if (j == 0) fail(ErrorKind::InvalidArgument, "skeleton has no joints");
  if (spec.bone_lengths.size() != j)
    fail(ErrorKind::InvalidArgument, "skeleton bone_lengths size mismatch");
  std::size_t roots = 0;
  for (std::size_t i = 0; i < j; ++i) {
    const int p = spec.parents[i];
    if (p == -1) {
      ++roots;
      continue;
    }
    if (p < 0 || static_cast<std::size_t>(p) >= j)
      fail(ErrorKind::InvalidArgument, "skeleton parent index out of range at joint " + std::to_string(i));
    // walk to the root; a cycle would never terminate, so bound the steps
    int cur = p;
    std::size_t steps = 0;
    while (cur != -1) {
      cur = spec.parents[static_cast<std::size_t>(cur)];
      if (++steps > j) fail(ErrorKind::InvalidArgument, "skeleton parent links contain a cycle");
    }
  }
  if (roots != 1) fail(ErrorKind::InvalidArgument, "skeleton must have exactly one root");
}

SkeletonSpec make_default_skeleton(std::size_t joints) {
  if (joints == 0) fail(ErrorKind::InvalidArgument, "skeleton has no joints");
  SkeletonSpec spec;
  spec.parents.resize(joints);
  spec.bone_lengths.resize(joints);
  spec.joint_names.resize(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    spec.parents[j] = j == 0 ? -1 : static_cast<int>((j - 1) / 2);  // binary tree
    spec.bone_lengths[j] = j == 0 ? 0.0 : 0.5 + 0.125 * static_cast<double>(mix64(j) % 5);
    spec.joint_names[j] = "joint" + std::to_string(j);
  }
  return spec;
}

MotionSequence read_sequence(const std::string& path) {
  const std::string bytes = read_file_bytes(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::BadMagic, path + ": not an MSEQ file (bad magic)");
  if (bytes.size() < kHeaderBytes)
    fail(ErrorKind::Truncated, path + ": header truncated: need " + std::to_string(kHeaderBytes) +
                                   " bytes, file has " + std::to_string(bytes.size()));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kVersion)
    fail(ErrorKind::BadVersion,
         path + ": unsupported MSEQ version " + std::to_string(int(p[4])) + " (expected 1)");
  MotionSequence seq;
  seq.fps = get_u32(p + 5);
  seq.joints = get_u32(p + 9);
  seq.coord_count = get_u32(p + 13);
  seq.frames = static_cast<std::size_t>(get_u64(p + 17));
  seq.class_label = static_cast<std::int32_t>(get_u32(p + 25));
  const std::size_t payload = seq.frames * seq.joints * seq.coord_count * 4;
  if (bytes.size() != kHeaderBytes + payload)
    fail(ErrorKind::Truncated, path + ": payload truncated: header promises " +
                                   std::to_string(kHeaderBytes + payload) + " bytes, file has " +
                                   std::to_string(bytes.size()) + " (payload starts at byte " +
                                   std::to_string(kHeaderBytes) + ")");
  seq.coords.resize(seq.frames * seq.joints * seq.coord_count);
  std::memcpy(seq.coords.data(), bytes.data() + kHeaderBytes, payload);
  return seq;
}

void write_sequence(const std::string& path, const MotionSequence& seq) {
  std::string out;
  out.reserve(kHeaderBytes + seq.coords.size() * 4);
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, seq.fps);
  put_u32(out, static_cast<std::uint32_t>(seq.joints));
  put_u32(out, static_cast<std::uint32_t>(seq.coord_count));
  put_u64(out, static_cast<std::uint64_t>(seq.frames));
  put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(seq.class_label)));
  const std::size_t before = out.size();
  out.resize(before + seq.coords.size() * 4);
  std::memcpy(out.data() + before, seq.coords.data(), seq.coords.size() * 4);
  std::ofstream of(path, std::ios::binary | std::ios::trunc);
  if (!of) fail(ErrorKind::Io, "cannot write " + path);
  of.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!of) fail(ErrorKind::Io, "write failed for " + path);
}

MotionSequence downsample(const MotionSequence& seq, std::uint32_t target_fps) {
  if (target_fps == 0 || seq.fps % target_fps != 0)
    fail(ErrorKind::InvalidArgument, "downsample: " + std::to_string(seq.fps) + " fps to " +
                                         std::to_string(target_fps) +
                                         " fps is not an integer stride");
  const std::size_t stride = seq.fps / target_fps;
  if (stride == 1) return seq;
  MotionSequence out;
  out.fps = target_fps;
  out.joints = seq.joints;
  out.coord_count = seq.coord_count;
  out.class_label = seq.class_label;
  out.frames = (seq.frames + stride - 1) / stride;  // frames 0, s, 2s, ...
  const std::size_t fsz = seq.joints * seq.coord_count;
  out.coords.resize(out.frames * fsz);
  for (std::size_t f = 0; f < out.frames; ++f)
    std::copy_n(seq.coords.begin() + static_cast<long>(f * stride * fsz), fsz,
                out.coords.begin() + static_cast<long>(f * fsz));
  return out;
}

std::vector<SampleWindow> window_split(const MotionSequence& seq, std::size_t past_frames,
                                       std::size_t future_frames, std::size_t stride,
                                       std::size_t source_id) {
  if (past_frames < 2 || future_frames < 1 || stride < 1)
    fail(ErrorKind::InvalidArgument, "window_split: need T >= 2, L >= 1, stride >= 1");
  std::vector<SampleWindow> windows;
  const std::size_t need = past_frames + future_frames;
  if (seq.frames < need) return windows;
  const std::size_t count = (seq.frames - need) / stride + 1;
  const std::size_t fsz = seq.joints * seq.coord_count;
  windows.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t offset = w * stride;
    SampleWindow sw;
    sw.past_frames = past_frames;
    sw.future_frames = future_frames;
    sw.joints = seq.joints;
    sw.coord_count = seq.coord_count;
    sw.source_id = source_id;
    sw.start = offset;
    sw.label = seq.class_label;
    sw.past.assign(seq.coords.begin() + static_cast<long>(offset * fsz),
                   seq.coords.begin() + static_cast<long>((offset + past_frames) * fsz));
    sw.future.assign(seq.coords.begin() + static_cast<long>((offset + past_frames) * fsz),
                     seq.coords.begin() + static_cast<long>((offset + need) * fsz));
    windows.push_back(std::move(sw));
  }
  return windows;
}

std::size_t ms_to_frame(long ms, std::uint32_t fps) {
  if (fps == 0 || 1000 % fps != 0)
    fail(ErrorKind::InvalidArgument, "ms_to_frame: fps must divide 1000, got " + std::to_string(fps));
  const long period = 1000 / static_cast<long>(fps);
  if (ms <= 0 || ms % period != 0)
    fail(ErrorKind::InvalidArgument,
         "ms_to_frame: horizon " + std::to_string(ms) + " ms is not a positive multiple of " +
             std::to_string(period) + " ms at " + std::to_string(fps) + " fps");
  return static_cast<std::size_t>(ms / period);
}

std::vector<MotionSequence> synth_generate(const SkeletonSpec& spec, std::size_t classes,
                                           std::size_t per_class, std::size_t frames,
                                           std::uint32_t fps, std::uint64_t seed) {
  validate_skeleton(spec);
  if (classes < 1 || per_class < 1 || frames < 2)
    fail(ErrorKind::InvalidArgument, "synth_generate: need classes >= 1, per_class >= 1, frames >= 2");
  const std::size_t J = spec.joint_count();
  const double two_pi = 6.283185307179586;

  std::vector<MotionSequence> out;
  out.reserve(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    // class signature: oscillation frequency/amplitude and drift direction
    const double freq = 0.5 + 0.45 * static_cast<double>(c);
    const double amp = 0.35 + 0.16 * static_cast<double>(c);
    const double drift_angle = two_pi * static_cast<double>(c) / static_cast<double>(classes);
    const double drift_speed = 0.25 + 0.1 * static_cast<double>(c);
    for (std::size_t s = 0; s < per_class; ++s) {
      Rng rng(derive_seed(seed, c * per_class + s));
      MotionSequence seq;
      seq.fps = fps;
      seq.joints = J;
      seq.coord_count = 3;
      seq.frames = frames;
      seq.class_label = static_cast<int>(c);
      seq.coords.resize(frames * J * 3);

      // fixed per-joint rest pose, jittered per sequence; random phases make
      // sequences within a class distinct while the spectrum stays shared
      std::vector<double> az0(J), el0(J), phase(J), phase2(J), fmul(J), ampj(J);
      for (std::size_t j = 0; j < J; ++j) {
        az0[j] = two_pi * static_cast<double>(mix64(j * 2 + 1) % 1000) / 1000.0 + rng.uniform(-0.15, 0.15);
        el0[j] = 0.8 * (static_cast<double>(mix64(j * 2 + 2) % 1000) / 1000.0 - 0.5) + rng.uniform(-0.1, 0.1);
        phase[j] = rng.uniform(0.0, two_pi);
        phase2[j] = rng.uniform(0.0, two_pi);
        fmul[j] = (j % 2 == 0) ? 1.0 : 2.0;
        ampj[j] = amp * rng.uniform(0.9, 1.1);
      }
      const double root_phase = rng.uniform(0.0, two_pi);
      const double x0 = rng.uniform(-0.5, 0.5);
      const double y0 = rng.uniform(-0.5, 0.5);
      const double z0 = rng.uniform(-0.5, 0.5);

      std::vector<double> px(J), py(J), pz(J);
      for (std::size_t f = 0; f < frames; ++f) {
        const double t = static_cast<double>(f) / static_cast<double>(fps);
        px[0] = x0 + drift_speed * t * std::cos(drift_angle) + 0.2 * std::sin(two_pi * 0.3 * t + root_phase);
        py[0] = y0 + drift_speed * t * std::sin(drift_angle);
        pz[0] = z0 + 0.15 * std::sin(two_pi * 0.25 * t + root_phase * 0.5);
        for (std::size_t j = 1; j < J; ++j) {
          const double az = az0[j] + ampj[j] * std::sin(two_pi * freq * fmul[j] * t + phase[j]);
          const double el = el0[j] + 0.6 * ampj[j] * std::sin(two_pi * freq * t + phase2[j]);
          const double len = spec.bone_lengths[j];
          const std::size_t p = static_cast<std::size_t>(spec.parents[j]);
          px[j] = px[p] + len * std::cos(el) * std::cos(az);
          py[j] = py[p] + len * std::cos(el) * std::sin(az);
          pz[j] = pz[p] + len * std::sin(el);
        }
        for (std::size_t j = 0; j < J; ++j) {
          seq.at(f, j, 0) = static_cast<float>(px[j]);
          seq.at(f, j, 1) = static_cast<float>(py[j]);
          seq.at(f, j, 2) = static_cast<float>(pz[j]);
        }
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

MotionSequence csv_import(const std::string& path, std::uint32_t fps, std::size_t joints,
                          std::size_t coord_count) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  const std::size_t want = joints * coord_count;
  MotionSequence seq;
  seq.fps = fps;
  seq.joints = joints;
  seq.coord_count = coord_count;
  std::string line;
  std::size_t lineno = 0;
  bool first_data_row = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    std::vector<float> row;
    row.reserve(cells.size());
    bool numeric = true;
    for (const auto& cell : cells) {
      const char* begin = cell.c_str();
      char* end = nullptr;
      const double v = std::strtod(begin, &end);
      // trailing whitespace allowed, other residue is not
      while (end && *end == ' ') ++end;
      if (end == begin || (end && *end != '\0')) {
        numeric = false;
        break;
      }
      row.push_back(static_cast<float>(v));
    }
    if (!numeric) {
      if (first_data_row) continue;  // optional header row
      fail(ErrorKind::Corrupt, path + ": non-numeric cell at row " + std::to_string(lineno));
    }
    if (row.size() != want)
      fail(ErrorKind::Corrupt, path + ": row " + std::to_string(lineno) + " has " +
                                   std::to_string(row.size()) + " fields, expected " +
                                   std::to_string(want));
    first_data_row = false;
    seq.coords.insert(seq.coords.end(), row.begin(), row.end());
    ++seq.frames;
  }
  if (seq.frames < 2) fail(ErrorKind::Corrupt, path + ": sequence needs at least 2 frames");
  return seq;
}

void write_index(const std::string& path, const std::vector<IndexEntry>& entries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json item;
    item["file"] = e.file;
    if (e.label >= 0)
      item["label"] = e.label;
    else
      item["label"] = nullptr;
    arr.push_back(item);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path);
  out << arr.dump(2) << "\n";
}

std::vector<IndexEntry> read_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const std::exception& e) {
    fail(ErrorKind::Corrupt, path + ": invalid JSON: " + e.what());
  }
  if (!arr.is_array()) fail(ErrorKind::Corrupt, path + ": index must be a JSON array");
  std::vector<IndexEntry> entries;
  for (const auto& item : arr) {
    IndexEntry e;
    e.file = item.at("file").get<std::string>();
    e.label = item.contains("label") && !item["label"].is_null() ? item["label"].get<int>() : -1;
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<MotionSequence> load_dataset(const std::string& index_path) {
  const auto entries = read_index(index_path);
  const auto base = std::filesystem::path(index_path).parent_path();
  std::vector<MotionSequence> seqs;
  seqs.reserve(entries.size());
  for (const auto& e : entries) {
    auto seq = read_sequence((base / e.file).string());
    if (e.label >= 0) seq.class_label = e.label;
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

void center_window_on_root(SampleWindow& w) {
  const std::size_t K = w.coord_count;
  const std::size_t root_off = (w.past_frames - 1) * w.joints * K;
  std::vector<float> root(K);
  for (std::size_t k = 0; k < K; ++k) root[k] = w.past[root_off + k];
  for (std::size_t i = 0; i < w.past.size(); ++i) w.past[i] -= root[i % K];
  for (std::size_t i = 0; i < w.future.size(); ++i) w.future[i] -= root[i % K];
}

}  // namespace mrl
