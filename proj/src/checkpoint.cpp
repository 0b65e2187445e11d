#include "trunclab/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "trunclab/errors.hpp"

namespace trunclab {

namespace {

constexpr char kMagic[4] = {'T', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw format_error("checkpoint: truncated file");
  return v;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void get_doubles(std::istream& is, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw format_error("checkpoint: truncated file");
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::size_t n = ck.names.size();
  if (ck.params.size() != n || ck.adam_m.size() != n || ck.adam_v.size() != n)
    throw config_error("checkpoint: entry vectors disagree in length");
  for (std::size_t i = 0; i < n; ++i) {
    if (ck.params[i].size() != ck.adam_m[i].size() || ck.params[i].size() != ck.adam_v[i].size())
      throw config_error("checkpoint: moment sizes disagree for " + ck.names[i]);
    if (ck.names[i].size() > std::numeric_limits<std::uint16_t>::max())
      throw config_error("checkpoint: parameter name too long");
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw format_error("cannot write " + tmp);
    os.write(kMagic, 4);
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint64_t>(os, ck.step);
    os.write(reinterpret_cast<const char*>(ck.digest.data()),
             static_cast<std::streamsize>(ck.digest.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) {
      put_le<std::uint16_t>(os, static_cast<std::uint16_t>(ck.names[i].size()));
      os.write(ck.names[i].data(), static_cast<std::streamsize>(ck.names[i].size()));
      put_le<std::uint64_t>(os, ck.params[i].size());
      put_doubles(os, ck.params[i]);
    }
    for (std::size_t i = 0; i < n; ++i) put_doubles(os, ck.adam_m[i]);
    for (std::size_t i = 0; i < n; ++i) put_doubles(os, ck.adam_v[i]);
    put_le<std::uint64_t>(os, ck.adam_t);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.state_blob.size()));
    os.write(reinterpret_cast<const char*>(ck.state_blob.data()),
             static_cast<std::streamsize>(ck.state_blob.size()));
    if (!os) throw format_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw format_error("cannot move " + tmp + " into place");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw format_error("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw format_error(path + ": not a checkpoint (bad magic)");
  const std::uint32_t version = get_le<std::uint32_t>(is);
  if (version != kVersion)
    throw format_error(path + ": unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  ck.step = get_le<std::uint64_t>(is);
  is.read(reinterpret_cast<char*>(ck.digest.data()),
          static_cast<std::streamsize>(ck.digest.size()));
  if (!is) throw format_error("checkpoint: truncated file");
  const std::uint32_t n = get_le<std::uint32_t>(is);
  ck.names.resize(n);
  ck.params.resize(n);
  ck.adam_m.resize(n);
  ck.adam_v.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint16_t len = get_le<std::uint16_t>(is);
    ck.names[i].resize(len);
    is.read(ck.names[i].data(), len);
    if (!is) throw format_error("checkpoint: truncated file");
    const std::uint64_t count = get_le<std::uint64_t>(is);
    get_doubles(is, ck.params[i], count);
  }
  for (std::uint32_t i = 0; i < n; ++i) get_doubles(is, ck.adam_m[i], ck.params[i].size());
  for (std::uint32_t i = 0; i < n; ++i) get_doubles(is, ck.adam_v[i], ck.params[i].size());
  ck.adam_t = get_le<std::uint64_t>(is);
  const std::uint32_t blob_len = get_le<std::uint32_t>(is);
  ck.state_blob.resize(blob_len);
  if (blob_len > 0) {
    is.read(reinterpret_cast<char*>(ck.state_blob.data()), blob_len);
    if (!is) throw format_error("checkpoint: truncated file");
  }
  return ck;
}

}  // namespace trunclab
