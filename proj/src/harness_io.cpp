#include "savipp/harness/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace savipp::harness {

namespace {

constexpr char kMagic[4] = {'S', 'V', 'P', 'P'};
constexpr std::uint32_t kVersion = 1;

struct Header {
  char magic[4];
  std::uint32_t rank;
  std::uint32_t dtype;
  std::uint32_t version;
};
static_assert(sizeof(Header) == 16);

void write_payload(const std::filesystem::path& path, Dtype dtype, const Shape& shape,
                   const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  Header h{};
  std::memcpy(h.magic, kMagic, 4);
  h.rank = static_cast<std::uint32_t>(shape.size());
  h.dtype = static_cast<std::uint32_t>(dtype);
  h.version = kVersion;
  f.write(reinterpret_cast<const char*>(&h), sizeof(h));
  for (auto d : shape) {
    const std::uint32_t e = static_cast<std::uint32_t>(d);
    f.write(reinterpret_cast<const char*>(&e), sizeof(e));
  }
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw IoError("write failed for " + path.string());
}

Header read_header(std::ifstream& f, const std::filesystem::path& path, Dtype expect,
                   Shape* shape) {
  Header h{};
  f.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!f || std::memcmp(h.magic, kMagic, 4) != 0)
    throw DataError("bad magic in " + path.string());
  if (h.version != kVersion)
    throw DataError("unsupported format version in " + path.string());
  if (h.dtype != static_cast<std::uint32_t>(expect))
    throw DataError("unexpected dtype in " + path.string());
  Shape sh(h.rank);
  for (auto& d : sh) {
    std::uint32_t e = 0;
    f.read(reinterpret_cast<char*>(&e), sizeof(e));
    d = e;
  }
  if (!f) throw DataError("truncated header in " + path.string());
  if (shape) *shape = sh;
  return h;
}

template <typename T>
std::vector<T> read_payload(const std::filesystem::path& path, Dtype expect,
                            Shape* shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  Shape sh;
  read_header(f, path, expect, &sh);
  std::vector<T> data(static_cast<std::size_t>(numel(sh)));
  f.read(reinterpret_cast<char*>(data.data()),
         static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!f) throw DataError("truncated payload in " + path.string());
  if (shape) *shape = sh;
  return data;
}

}  // namespace

void write_tensor_f32(const std::filesystem::path& path, const Shape& shape,
                      const std::vector<float>& data) {
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    throw DimensionError("tensor file " + path.string() + ": data does not match " +
                         shape_str(shape));
  write_payload(path, Dtype::kF32, shape, data.data(), data.size() * sizeof(float));
}

void write_tensor_i32(const std::filesystem::path& path, const Shape& shape,
                      const std::vector<std::int32_t>& data) {
  if (numel(shape) != static_cast<std::int64_t>(data.size()))
    throw DimensionError("tensor file " + path.string() + ": data does not match " +
                         shape_str(shape));
  write_payload(path, Dtype::kI32, shape, data.data(), data.size() * sizeof(std::int32_t));
}

void write_sparse(const std::filesystem::path& path,
                  const std::vector<SparseRecord>& records) {
  static_assert(sizeof(SparseRecord) == 16);
  const Shape shape = {static_cast<std::int64_t>(records.size()), 4};
  write_payload(path, Dtype::kSparse, shape, records.data(),
                records.size() * sizeof(SparseRecord));
}

std::vector<float> read_tensor_f32(const std::filesystem::path& path, Shape* shape) {
  return read_payload<float>(path, Dtype::kF32, shape);
}

std::vector<std::int32_t> read_tensor_i32(const std::filesystem::path& path,
                                          Shape* shape) {
  return read_payload<std::int32_t>(path, Dtype::kI32, shape);
}

std::vector<SparseRecord> read_sparse(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  Shape sh;
  read_header(f, path, Dtype::kSparse, &sh);
  if (sh.size() != 2 || sh[1] != 4) throw DataError("bad sparse shape in " + path.string());
  std::vector<SparseRecord> records(static_cast<std::size_t>(sh[0]));
  f.read(reinterpret_cast<char*>(records.data()),
         static_cast<std::streamsize>(records.size() * sizeof(SparseRecord)));
  if (!f) throw DataError("truncated sparse payload in " + path.string());
  return records;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b) {
  return read_text_file(a) == read_text_file(b);
}

}  // namespace savipp::harness
