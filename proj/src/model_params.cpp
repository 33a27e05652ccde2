#include "savipp/model/params.hpp"

namespace savipp::model {

std::vector<std::string> checkpoint_record_names(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SVCK", 4) != 0)
    throw DataError("bad checkpoint magic in " + path.string());
  std::uint64_t digest = 0;
  f.read(reinterpret_cast<char*>(&digest), 8);
  std::uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  std::vector<std::string> names;
  names.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    f.read(name.data(), len);
    std::uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    std::int64_t elems = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      std::uint32_t e = 0;
      f.read(reinterpret_cast<char*>(&e), 4);
      elems *= e;
    }
    f.seekg(static_cast<std::streamoff>(elems) * 4, std::ios::cur);
    if (!f) throw DataError("truncated checkpoint " + path.string());
    names.push_back(std::move(name));
  }
  return names;
}

}  // namespace savipp::model
