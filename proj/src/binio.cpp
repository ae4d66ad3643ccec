#include "npc/binio.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

namespace npc {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NotColor: return "NotColor";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TooManySymbols: return "TooManySymbols";
    case ErrorCode::CorruptStream: return "CorruptStream";
    case ErrorCode::InvalidArchitecture: return "InvalidArchitecture";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InsufficientInitialBits: return "InsufficientInitialBits";
    case ErrorCode::BinsMismatch: return "BinsMismatch";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::UnsupportedCodec: return "UnsupportedCodec";
    case ErrorCode::ZeroLength: return "ZeroLength";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
  }
  return "Unknown";
}

}  // namespace npc

namespace npc::binio {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::array<std::uint8_t, 8> digest64(std::span<const std::uint8_t> bytes) {
  const std::uint32_t first = crc32(bytes);
  std::uint8_t tail[4];
  for (int i = 0; i < 4; ++i) tail[i] = static_cast<std::uint8_t>(first >> (8 * i));
  const auto second = ::crc32(static_cast<uLong>(first), tail, 4);
  std::array<std::uint8_t, 8> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = tail[i];
    out[4 + i] = static_cast<std::uint8_t>(second >> (8 * i));
  }
  return out;
}

}  // namespace npc::binio
