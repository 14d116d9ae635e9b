#include "mrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mrl/errors.hpp"

namespace mrl {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint8_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  std::size_t size;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > size)
      fail(ErrorKind::Truncated, path + ": checkpoint truncated reading " + what + " at byte " +
                                     std::to_string(pos) + " (need " + std::to_string(n) +
                                     ", have " + std::to_string(size - pos) + ")");
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return p[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = std::uint16_t(p[pos]) | std::uint16_t(p[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[pos + static_cast<std::size_t>(i)];
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& e : ckpt.tensors) {
    if (e.name.size() > 0xffff) fail(ErrorKind::InvalidArgument, "checkpoint: tensor name too long");
    if (e.dims.size() > 0xff) fail(ErrorKind::InvalidArgument, "checkpoint: tensor rank too large");
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.append(e.name);
    out.push_back(static_cast<char>(e.dims.size()));
    std::size_t n = 1;
    for (const auto d : e.dims) {
      put_u32(out, d);
      n *= d;
    }
    if (n != e.data.size()) fail(ErrorKind::InvalidArgument, "checkpoint: dims/data mismatch for " + e.name);
    const std::size_t at = out.size();
    out.resize(at + e.data.size() * 4);
    std::memcpy(out.data() + at, e.data.data(), e.data.size() * 4);
  }
  const std::string meta = ckpt.metadata.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.append(meta);

  std::ofstream of(path, std::ios::binary | std::ios::trunc);
  if (!of) fail(ErrorKind::Io, "cannot write " + path);
  of.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!of) fail(ErrorKind::Io, "write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::BadMagic, path + ": not an MCKP checkpoint (bad magic)");
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 4, path};
  const auto version = r.u8("version");
  if (version != kVersion)
    fail(ErrorKind::BadVersion,
         path + ": unsupported checkpoint version " + std::to_string(int(version)) + " (expected 1)");

  CheckpointData ckpt;
  const std::uint32_t count = r.u32("tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointData::Entry e;
    const auto name_len = r.u16("name length");
    e.name = r.bytes(name_len, "tensor name");
    const auto rank = r.u8("rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto dim = r.u32("dimension");
      if (dim == 0 || n > (std::size_t{1} << 32) / std::max<std::size_t>(dim, 1))
        fail(ErrorKind::Corrupt, path + ": implausible tensor dims for " + e.name);
      e.dims.push_back(dim);
      n *= dim;
    }
    r.need(n * 4, "tensor payload");
    e.data.resize(n);
    std::memcpy(e.data.data(), r.p + r.pos, n * 4);
    r.pos += n * 4;
    ckpt.tensors.push_back(std::move(e));
  }
  const auto meta_len = r.u32("metadata length");
  const std::string meta = r.bytes(meta_len, "metadata");
  if (r.pos != r.size)
    fail(ErrorKind::Corrupt, path + ": " + std::to_string(r.size - r.pos) + " trailing bytes");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const std::exception& ex) {
    fail(ErrorKind::Corrupt, path + ": metadata is not valid JSON: " + ex.what());
  }
  return ckpt;
}

CheckpointData snapshot(const Model<float>& model, const Adam<float>* opt, long step,
                        const nlohmann::json& config, std::uint64_t seed) {
  CheckpointData ckpt;
  for (const auto& p : model.params().items()) {
    CheckpointData::Entry e;
    e.name = p.name;
    for (const auto d : p.tensor.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    e.data.assign(p.tensor.value().begin(), p.tensor.value().end());
    ckpt.tensors.push_back(std::move(e));
  }
  if (opt) {
    auto dump_moments = [&](const char* prefix, const std::map<std::string, std::vector<double>>& m) {
      for (const auto& [name, buf] : m) {
        CheckpointData::Entry e;
        e.name = std::string(prefix) + name;
        e.dims.push_back(static_cast<std::uint32_t>(buf.size()));
        e.data.reserve(buf.size());
        for (const double v : buf) e.data.push_back(static_cast<float>(v));
        ckpt.tensors.push_back(std::move(e));
      }
    };
    dump_moments("opt.m.", opt->first_moments());
    dump_moments("opt.v.", opt->second_moments());
    ckpt.metadata["opt_step"] = opt->step_count();
  }
  ckpt.metadata["config"] = config;
  ckpt.metadata["step"] = step;
  ckpt.metadata["seed"] = seed;
  return ckpt;
}

void restore(Model<float>& model, Adam<float>* opt, const CheckpointData& ckpt) {
  // validate everything before touching the model
  for (const auto& p : model.params().items()) {
    const auto* e = ckpt.find(p.name);
    if (!e) fail(ErrorKind::Corrupt, "checkpoint is missing tensor " + p.name);
    bool match = e->dims.size() == p.tensor.shape().size();
    if (match)
      for (std::size_t i = 0; i < e->dims.size(); ++i)
        match = match && e->dims[i] == p.tensor.shape()[i];
    if (!match) {
      std::string want = "[", got = "[";
      for (std::size_t i = 0; i < p.tensor.shape().size(); ++i)
        want += (i ? "x" : "") + std::to_string(p.tensor.shape()[i]);
      for (std::size_t i = 0; i < e->dims.size(); ++i) got += (i ? "x" : "") + std::to_string(e->dims[i]);
      fail(ErrorKind::ShapeMismatch, "checkpoint tensor " + p.name + " has dims " + got +
                                         "], model expects " + want + "]");
    }
  }
  for (auto& p : model.params().items()) {
    const auto* e = ckpt.find(p.name);
    std::copy(e->data.begin(), e->data.end(), p.tensor.value().begin());
  }
  if (opt) {
    for (const auto& e : ckpt.tensors) {
      if (e.name.rfind("opt.m.", 0) == 0)
        opt->first_moments()[e.name.substr(6)].assign(e.data.begin(), e.data.end());
      else if (e.name.rfind("opt.v.", 0) == 0)
        opt->second_moments()[e.name.substr(6)].assign(e.data.begin(), e.data.end());
    }
    if (ckpt.metadata.contains("opt_step")) opt->set_step_count(ckpt.metadata["opt_step"].get<long>());
  }
}

}  // namespace mrl
