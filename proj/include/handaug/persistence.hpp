#pragma once

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "handaug/dataset.hpp"
#include "handaug/errors.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/networks.hpp"
#include "handaug/training.hpp"

namespace handaug {

// All three formats are little-endian with a 4-byte magic and a u32 version.
//   HPSD: u64 count, u32 resolution, per record N*N f32 depths + 63 f32 joints
//   HPSU: u64 count, per record 63 f32 joints
//   HPCK: u64 tensor count, per tensor u32 name length, name, u32 rank,
//         u64 dims, f32 data
inline constexpr std::uint32_t kFormatVersion = 1;

namespace io {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void magic(std::string_view m) { bytes(m.data(), 4); }

  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::uint64_t offset() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

  void need(std::uint64_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what, pos_);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void header(std::string_view magic) {
    const std::uint64_t start = pos_;
    if (str(4, "magic") != magic) throw FormatError("bad magic, expected " + std::string(magic), start);
    const std::uint64_t at = pos_;
    const std::uint32_t version = u32("version");
    if (version != kFormatVersion) throw FormatError("unsupported version " + std::to_string(version), at);
  }

  void finish() const {
    if (!at_end()) throw FormatError("trailing bytes after the last record", pos_);
  }

 private:
  const std::vector<std::uint8_t>& buf_;
  std::uint64_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void skeleton_out(Writer& w, const Skeleton& s) {
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k) w.f32(static_cast<float>(s[j][k]));
}

inline Skeleton skeleton_in(Reader& r) {
  r.need(kSkeletonDim * 4, "skeleton");
  Skeleton s;
  for (std::size_t j = 0; j < kNumJoints; ++j)
    for (std::size_t k = 0; k < 3; ++k) s[j][k] = static_cast<double>(r.f32("skeleton"));
  return s;
}

inline void require_valid(const Skeleton& s, std::size_t i) {
  const auto report = validate(s);
  if (!report.is_valid)
    throw InvalidArgument("record " + std::to_string(i) + " is not a valid skeleton (" +
                          report.violations.front().constraint + ")");
}

}  // namespace io

inline std::vector<std::uint8_t> encode_dataset(const PairedDataset& d) {
  io::Writer w;
  w.magic("HPSD");
  w.u32(kFormatVersion);
  w.u64(d.size());
  w.u32(d.resolution);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& rec = d.records[i];
    if (rec.depth.resolution != d.resolution || rec.depth.values.size() != std::size_t{d.resolution} * d.resolution)
      throw ContractError("record " + std::to_string(i) + " has a depth map of the wrong resolution");
    io::require_valid(rec.skeleton, i);
    for (float v : rec.depth.values) w.f32(v);
    io::skeleton_out(w, rec.skeleton);
  }
  return std::move(w.buffer());
}

inline PairedDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  r.header("HPSD");
  const std::uint64_t count = r.u64("record count");
  PairedDataset d;
  d.resolution = r.u32("resolution");
  const std::uint64_t n2 = std::uint64_t{d.resolution} * d.resolution;
  const std::uint64_t record_bytes = 4 * (n2 + kSkeletonDim);
  if (record_bytes != 0 && count > (bytes.size() - r.offset()) / record_bytes)
    throw FormatError("truncated file: " + std::to_string(count) + " records declared", r.offset());
  d.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    PairedRecord rec;
    rec.depth = DepthMap(d.resolution);
    for (auto& v : rec.depth.values) v = r.f32("depth");
    rec.skeleton = io::skeleton_in(r);
    d.records.push_back(std::move(rec));
  }
  r.finish();
  return d;
}

inline std::vector<std::uint8_t> encode_unpaired(const UnpairedSkeletonSet& u) {
  io::Writer w;
  w.magic("HPSU");
  w.u32(kFormatVersion);
  w.u64(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    io::require_valid(u.records[i], i);
    io::skeleton_out(w, u.records[i]);
  }
  return std::move(w.buffer());
}

inline UnpairedSkeletonSet decode_unpaired(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  r.header("HPSU");
  const std::uint64_t count = r.u64("record count");
  if (count > (bytes.size() - r.offset()) / (4 * kSkeletonDim))
    throw FormatError("truncated file: " + std::to_string(count) + " records declared", r.offset());
  UnpairedSkeletonSet u;
  u.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) u.records.push_back(io::skeleton_in(r));
  r.finish();
  return u;
}

// Files. Errors carry the path.
namespace detail {
template <class F>
auto with_path(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.message(), e.offset());
  }
}
}  // namespace detail

inline void save_dataset(const PairedDataset& d, const std::string& path) { io::write_file(path, encode_dataset(d)); }
inline PairedDataset load_dataset(const std::string& path) {
  return detail::with_path(path, [&] { return decode_dataset(io::read_file(path)); });
}
inline void save_unpaired(const UnpairedSkeletonSet& u, const std::string& path) {
  io::write_file(path, encode_unpaired(u));
}
inline UnpairedSkeletonSet load_unpaired(const std::string& path) {
  return detail::with_path(path, [&] { return decode_unpaired(io::read_file(path)); });
}

// ---------------------------------------------------------------------------
// Checkpoints: every parameter, its Adam moments ("/m", "/v"), one "t" per
// network, the completed epoch count and the model metadata.

using Checkpoint = TrainState<float>;

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<ad::NamedTensor<float>> tensors;
  auto scalar = [](double v) { return ad::Tensor<float>::scalar(static_cast<float>(v)); };
  tensors.push_back({"meta/resolution", scalar(static_cast<double>(ck.bundle.resolution))});
  const auto& f = ck.bundle.frame;
  tensors.push_back({"meta/frame", ad::Tensor<float>(ad::Shape{4}, std::vector<float>{static_cast<float>(f.origin.x()),
                                                                                    static_cast<float>(f.origin.y()),
                                                                                    static_cast<float>(f.origin.z()),
                                                                                    static_cast<float>(f.scale_mm)})});
  tensors.push_back({"epoch", scalar(static_cast<double>(ck.epochs_done))});
  for (Net n : kAllNets) {
    const auto& params = ck.bundle.params(n);
    const auto& st = ck.optimizers[static_cast<std::size_t>(n)];
    if (st.m.size() != params.size() || st.v.size() != params.size())
      throw ContractError(std::string(net_name(n)) + ": optimizer state does not match the parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
      tensors.push_back(params[i]);
      tensors.push_back({params[i].name + "/m", st.m[i]});
      tensors.push_back({params[i].name + "/v", st.v[i]});
    }
    tensors.push_back({std::string(net_name(n)) + "/t", scalar(static_cast<double>(st.t))});
  }

  io::Writer w;
  w.magic("HPCK");
  w.u32(kFormatVersion);
  w.u64(tensors.size());
  for (const auto& t : tensors) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.u64(d);
    for (float v : t.value.values()) w.f32(v);
  }
  return std::move(w.buffer());
}

/// Parses a checkpoint and checks it against the declared architecture. The
/// optimizer hyperparameters are not stored; they come from `config`.
inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const TrainConfig& config = {}) {
  io::Reader r(bytes);
  r.header("HPCK");
  const std::uint64_t count = r.u64("tensor count");
  std::map<std::string, ad::Tensor<float>> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint32_t len = r.u32("name length");
    std::string name = r.str(len, "tensor name");
    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank), at);
    ad::Shape shape(rank);
    std::uint64_t size = 1;
    for (auto& d : shape) {
      d = r.u64("dimension");
      if (d != 0 && size > (bytes.size() / 4) / d) throw FormatError("tensor '" + name + "' is larger than the file", at);
      size *= d;
    }
    r.need(size * 4, "tensor data");
    std::vector<float> data(size);
    for (auto& v : data) v = r.f32("tensor data");
    if (!tensors.emplace(name, ad::Tensor<float>(std::move(shape), std::move(data))).second)
      throw FormatError("duplicate tensor '" + name + "'", at);
  }
  r.finish();
  const std::uint64_t end = r.offset();

  auto take = [&](const std::string& name, const ad::Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint is missing tensor '" + name + "'", end);
    if (it->second.shape() != shape)
      throw FormatError("tensor '" + name + "' has shape " + ad::shape_string(it->second.shape()) + ", expected " +
                            ad::shape_string(shape),
                        end);
    ad::Tensor<float> t = std::move(it->second);
    tensors.erase(it);
    return t;
  };

  Checkpoint ck;
  const float res = take("meta/resolution", {1})[0];
  ck.bundle.resolution = static_cast<std::size_t>(res);
  if (static_cast<float>(ck.bundle.resolution) != res || ck.bundle.resolution == 0 || ck.bundle.resolution % 4 != 0)
    throw FormatError("bad model resolution", end);
  const auto frame = take("meta/frame", {4});
  ck.bundle.frame.origin = Vec3(frame[0], frame[1], frame[2]);
  ck.bundle.frame.scale_mm = frame[3];
  ck.epochs_done = static_cast<std::size_t>(take("epoch", {1})[0]);
  for (Net n : kAllNets) {
    auto& params = ck.bundle.params(n);
    auto& st = ck.optimizers[static_cast<std::size_t>(n)];
    st.config = config.adam(n);
    for (const auto& spec : architecture(n, ck.bundle.resolution)) {
      params.push_back({spec.name, take(spec.name, spec.shape)});
      st.m.push_back(take(spec.name + "/m", spec.shape));
      st.v.push_back(take(spec.name + "/v", spec.shape));
    }
    st.t = static_cast<std::uint64_t>(take(std::string(net_name(n)) + "/t", {1})[0]);
  }
  if (!tensors.empty()) throw FormatError("unexpected tensor '" + tensors.begin()->first + "'", end);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) { io::write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path, const TrainConfig& config = {}) {
  return detail::with_path(path, [&] { return decode_checkpoint(io::read_file(path), config); });
}

}  // namespace handaug
