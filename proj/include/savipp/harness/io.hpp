#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "savipp/common.hpp"

namespace savipp::harness {

// Binary tensor container used by datasets and reports. Layout (little
// endian): 16-byte fixed header = magic "SVPP", u32 rank, u32 dtype code,
// u32 format version; then rank x u32 extents; then the payload.
enum class Dtype : std::uint32_t { kF32 = 0, kI32 = 1, kSparse = 2 };

struct SparseRecord {
  std::uint32_t frame = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  float dist = 0.0f;
};

void write_tensor_f32(const std::filesystem::path& path, const Shape& shape,
                      const std::vector<float>& data);
void write_tensor_i32(const std::filesystem::path& path, const Shape& shape,
                      const std::vector<std::int32_t>& data);
void write_sparse(const std::filesystem::path& path,
                  const std::vector<SparseRecord>& records);

std::vector<float> read_tensor_f32(const std::filesystem::path& path, Shape* shape);
std::vector<std::int32_t> read_tensor_i32(const std::filesystem::path& path,
                                          Shape* shape);
std::vector<SparseRecord> read_sparse(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// True when the two files hold identical bytes.
bool files_identical(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace savipp::harness
