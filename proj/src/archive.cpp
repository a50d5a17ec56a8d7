#include "lfsr/archive.hpp"

#include "lfsr/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace lfsr {

namespace {

constexpr char kMagic[8] = {'L', 'F', 'S', 'R', 'A', 'R', 'C', '\0'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}

}  // namespace

void TensorArchive::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    const Shape s = t.shape();
    header["tensors"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError(p, "cannot open archive");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw ParseError(p, "not a tensor archive (bad magic)");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  if (!read_pod(is, version) || !read_pod(is, len)) throw ParseError(p, "truncated header");
  if (version != kVersion)
    throw ParseError(p, "unsupported archive version " + std::to_string(version));
  if (len > (1ull << 30)) throw ParseError(p, "implausible header length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError(p, "truncated header");

  TensorArchive ar;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    ar.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      const auto& sh = entry.at("shape");
      Shape s{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>(), sh.at(3).get<int>()};
      if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ParseError(p, "negative tensor extent");
      Tensor<double> t(s);
      if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
        throw ParseError(p, "truncated payload for tensor " + entry.at("name").get<std::string>());
      ar.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p, std::string("malformed header: ") + e.what());
  }
  return ar;
}

const Tensor<double>& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("archive has no tensor '" + name + "'");
  return it->second;
}

}  // namespace lfsr
