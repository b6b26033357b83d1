#include "pdeformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "pdeformer/errors.hpp"

namespace pdeformer {

namespace {

constexpr char kMagic[4] = {'P', 'D', 'E', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

// Bounded little-endian reads over the whole file image; every failure names
// the byte offset so corrupt checkpoints are diagnosable.
struct Reader {
  const std::vector<unsigned char>& bytes;
  const std::string& path;
  std::size_t off = 0;

  void need(std::size_t n, const char* what) const {
    if (off + n > bytes.size()) {
      throw IOError("'" + path + "': truncated reading " + what + " at byte " +
                    std::to_string(off) + " (need " + std::to_string(n) + " bytes, have " +
                    std::to_string(bytes.size() - off) + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  }
};

}  // namespace

void save_checkpoint(const ParamMap& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write '" + path + "'");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(out, t.extent(d));
    put_u32(out, kDtypeF32);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw IOError("short write to '" + path + "'");
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  Reader r{bytes, path};

  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IOError("'" + path + "': bad magic at byte 0 (expected \"PDEF\")");
  }
  r.off = 4;
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw IOError("'" + path + "': unsupported version " + std::to_string(version) +
                  " at byte 4");
  }
  const std::uint32_t count = r.u32("tensor count");

  ParamMap params;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t name_len = r.u32("name length");
    r.need(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.off), name_len);
    r.off += name_len;

    const std::uint32_t rank = r.u32("rank");
    if (rank > 8) {
      throw IOError("'" + path + "': implausible rank " + std::to_string(rank) + " at byte " +
                    std::to_string(r.off - 4));
    }
    Shape shape(rank);
    std::uint64_t elems = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64("extent"));
      if (shape[d] == 0 || elems > bytes.size() / shape[d]) {
        throw IOError("'" + path + "': declared extents overflow the file near byte " +
                      std::to_string(r.off - 8));
      }
      elems *= shape[d];
    }
    const std::uint32_t dtype = r.u32("dtype tag");
    if (dtype != kDtypeF32) {
      throw IOError("'" + path + "': unknown dtype tag " + std::to_string(dtype) +
                    " at byte " + std::to_string(r.off - 4));
    }
    r.need(static_cast<std::size_t>(elems) * 4, "tensor data");

    Tensor t(shape);
    for (std::uint64_t i = 0; i < elems; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(bytes[r.off + b]) << (8 * b);
      r.off += 4;
      float f;
      std::memcpy(&f, &bits, 4);
      t[static_cast<std::size_t>(i)] = f;
    }
    t.check_finite("checkpoint tensor '" + name + "'");
    if (!params.emplace(name, std::move(t)).second) {
      throw IOError("'" + path + "': duplicate tensor name '" + name + "'");
    }
  }
  if (r.off != bytes.size()) {
    throw IOError("'" + path + "': " + std::to_string(bytes.size() - r.off) +
                  " trailing bytes after byte " + std::to_string(r.off));
  }
  return params;
}

}  // namespace pdeformer
