#pragma once

// Binary tensor records and checkpoints.
//
// Tensor record (also the on-disk format of one dataset sample):
//   u16 name length | name bytes (UTF-8) | u8 dtype (0=f32, 1=f64) |
//   u8 rank | rank x u32 dims | little-endian payload
//
// Checkpoint:
//   "ADML" | u32 version (1) | u32 episode | u32 tensor count |
//   records... | u32 config length | config text (UTF-8)
//
// All integers are little-endian.

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <variant>

#include "adml/params.hpp"

namespace adml {

inline constexpr char kCheckpointMagic[4] = {'A', 'D', 'M', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 16;

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, std::size_t bytes) {
  char buf[8];
  for (std::size_t i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, static_cast<std::streamsize>(bytes));
}

inline std::uint64_t get_le(std::istream& is, std::size_t bytes, const char* what) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(bytes))) {
    throw FormatError(std::string("truncated while reading ") + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  return v;
}

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("truncated while reading ") + what);
  }
  return s;
}

template <std::floating_point T>
Tensor<T> read_payload(std::istream& is, Shape shape) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = std::bit_cast<T>(static_cast<Bits>(get_le(is, sizeof(T), "payload")));
  return t;
}

}  // namespace detail

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

struct RawRecord {
  std::string name;
  AnyTensor tensor;

  DType dtype() const { return tensor.index() == 0 ? DType::f32 : DType::f64; }

  template <std::floating_point T>
  const Tensor<T>& as() const {
    if (const auto* t = std::get_if<Tensor<T>>(&tensor)) return *t;
    throw FormatError("tensor '" + name + "' is stored in the other precision");
  }

  bool operator==(const RawRecord&) const = default;
};

template <std::floating_point T>
std::size_t record_bytes(std::string_view name, const Tensor<T>& t) {
  return 2 + name.size() + 1 + 1 + 4 * t.rank() + t.numel() * sizeof(T);
}

template <std::floating_point T>
void write_record(std::ostream& os, std::string_view name, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (name.size() > 0xffff) throw FormatError("tensor name longer than 65535 bytes");
  if (t.rank() > 0xff) throw FormatError("tensor rank above 255");
  detail::put_le(os, name.size(), 2);
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  detail::put_le(os, static_cast<std::uint8_t>(dtype_of<T>()), 1);
  detail::put_le(os, t.rank(), 1);
  for (auto d : t.shape()) {
    if (d > 0xffffffffu) throw FormatError("tensor extent exceeds u32");
    detail::put_le(os, d, 4);
  }
  for (T v : t.data()) detail::put_le(os, std::bit_cast<Bits>(v), sizeof(T));
}

inline RawRecord read_record(std::istream& is) {
  RawRecord r;
  const auto name_len = detail::get_le(is, 2, "name length");
  r.name = detail::get_bytes(is, name_len, "name");
  const auto dtype = detail::get_le(is, 1, "dtype");
  const auto rank = detail::get_le(is, 1, "rank");
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::get_le(is, 4, "dims");
    if (d == 0) throw FormatError("zero extent in tensor '" + r.name + "'");
  }
  if (dtype == 0) {
    r.tensor = detail::read_payload<float>(is, std::move(shape));
  } else if (dtype == 1) {
    r.tensor = detail::read_payload<double>(is, std::move(shape));
  } else {
    throw FormatError("unknown dtype byte " + std::to_string(dtype));
  }
  return r;
}

/// Write to a sibling temp file, then rename over `path`.
template <class Writer>
void write_file_atomic(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IngestionError("cannot open " + tmp.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) throw IngestionError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

template <std::floating_point T>
void write_sample_file(const std::filesystem::path& path, const Tensor<T>& t,
                       std::string_view name = "x") {
  write_file_atomic(path, [&](std::ostream& os) { write_record(os, name, t); });
}

/// One raw-tensor sample file; trailing bytes are a format error.
inline RawRecord read_sample_file(const std::filesystem::path& path) {
  std::istringstream is(read_file(path));
  auto r = read_record(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after tensor record in " + path.string());
  }
  return r;
}

struct Checkpoint {
  std::uint32_t episode = 0;
  std::vector<RawRecord> tensors;
  std::string config;

  template <std::floating_point T>
  static Checkpoint from(const ParamSet<T>& params, std::uint32_t episode, std::string config) {
    Checkpoint c{episode, {}, std::move(config)};
    for (const auto& e : params) c.tensors.push_back({e.name, e.value});
    return c;
  }

  template <std::floating_point T>
  ParamSet<T> params() const {
    std::vector<NamedTensor<T>> out;
    for (const auto& r : tensors) out.push_back({r.name, r.as<T>()});
    return ParamSet<T>(std::move(out));
  }

  bool operator==(const Checkpoint&) const = default;
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  os.write(kCheckpointMagic, 4);
  detail::put_le(os, kCheckpointVersion, 4);
  detail::put_le(os, c.episode, 4);
  detail::put_le(os, c.tensors.size(), 4);
  for (const auto& r : c.tensors) {
    std::visit([&](const auto& t) { write_record(os, r.name, t); }, r.tensor);
  }
  detail::put_le(os, c.config.size(), 4);
  os.write(c.config.data(), static_cast<std::streamsize>(c.config.size()));
}

inline Checkpoint read_checkpoint(std::istream& is) {
  const auto magic = detail::get_bytes(is, 4, "magic");
  if (magic != std::string_view(kCheckpointMagic, 4)) throw FormatError("bad checkpoint magic");
  const auto version = detail::get_le(is, 4, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.episode = static_cast<std::uint32_t>(detail::get_le(is, 4, "episode"));
  const auto count = detail::get_le(is, 4, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) c.tensors.push_back(read_record(is));
  const auto len = detail::get_le(is, 4, "config length");
  c.config = detail::get_bytes(is, len, "config");
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_file_atomic(path, [&](std::ostream& os) { write_checkpoint(os, c); });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw FormatError("cannot open checkpoint " + path.string());
  std::istringstream is(read_file(path));
  return read_checkpoint(is);
}

}  // namespace adml
