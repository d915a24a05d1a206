#pragma once

// NPY v1.0 reader/writer restricted to little-endian float32, C order.

#include <bit>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vzip/error.hpp"
#include "vzip/tensor.hpp"

namespace vzip {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

struct NpyHeader {
  Shape shape;
  std::size_t data_offset = 0;
};

namespace detail {

inline constexpr unsigned char kNpyMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
inline constexpr std::size_t kNpyPreamble = 10;  // magic + version + u16 length

// Value text following `'key':` in the header dict, up to the next top-level
// comma or closing brace.
inline std::string_view dict_value(std::string_view dict, std::string_view key) {
  std::string quoted = "'" + std::string(key) + "'";
  auto pos = dict.find(quoted);
  if (pos == std::string_view::npos) {
    quoted = "\"" + std::string(key) + "\"";
    pos = dict.find(quoted);
  }
  if (pos == std::string_view::npos) throw NpyHeaderError("NPY header lacks key '" + std::string(key) + "'");
  pos = dict.find(':', pos + quoted.size());
  if (pos == std::string_view::npos) throw NpyHeaderError("NPY header: no value for '" + std::string(key) + "'");
  ++pos;
  while (pos < dict.size() && std::isspace(static_cast<unsigned char>(dict[pos]))) ++pos;
  std::size_t end = pos;
  int depth = 0;
  while (end < dict.size()) {
    const char c = dict[end];
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && (c == ',' || c == '}')) break;
    if (depth == 0 && c == ')') {
      ++end;
      break;
    }
    ++end;
  }
  auto v = dict.substr(pos, end - pos);
  while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back()))) v.remove_suffix(1);
  return v;
}

inline Shape parse_shape(std::string_view text) {
  if (text.size() < 2 || text.front() != '(' || text.back() != ')') {
    throw NpyHeaderError("NPY header: malformed shape '" + std::string(text) + "'");
  }
  Shape shape;
  std::string num;
  auto flush = [&] {
    if (num.empty()) return;
    try {
      shape.push_back(static_cast<std::size_t>(std::stoull(num)));
    } catch (const std::exception&) {
      throw NpyHeaderError("NPY header: bad shape extent '" + num + "'");
    }
    num.clear();
  };
  for (char c : text.substr(1, text.size() - 2)) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      num.push_back(c);
    } else if (c == ',') {
      flush();
    } else if (!std::isspace(static_cast<unsigned char>(c)) && c != 'L') {
      throw NpyHeaderError("NPY header: bad character in shape '" + std::string(text) + "'");
    }
  }
  flush();
  return shape;
}

}  // namespace detail

// Validates the preamble and dictionary. Requires at least the preamble and
// the full header to be present in `bytes`.
inline NpyHeader parse_npy_header(std::span<const unsigned char> bytes) {
  if (bytes.size() < 6 || !std::equal(bytes.begin(), bytes.begin() + 6, detail::kNpyMagic)) {
    throw NpyMagicError("not an NPY file: magic string mismatch");
  }
  if (bytes.size() < detail::kNpyPreamble) throw NpyTruncatedError("NPY file truncated inside the preamble");
  if (bytes[6] != 1 || bytes[7] != 0) {
    throw NpyVersionError("unsupported NPY version " + std::to_string(bytes[6]) + "." + std::to_string(bytes[7]) +
                          " (expected 1.0)");
  }
  const std::size_t header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (bytes.size() < detail::kNpyPreamble + header_len) throw NpyTruncatedError("NPY file truncated inside the header");
  const std::string_view dict(reinterpret_cast<const char*>(bytes.data()) + detail::kNpyPreamble, header_len);
  if (dict.find('{') == std::string_view::npos || dict.find('}') == std::string_view::npos) {
    throw NpyHeaderError("NPY header is not a dictionary");
  }

  std::string_view descr = detail::dict_value(dict, "descr");
  if (descr.size() >= 2 && (descr.front() == '\'' || descr.front() == '"')) descr = descr.substr(1, descr.size() - 2);
  if (descr != "<f4") throw NpyDtypeError("NPY dtype mismatch: expected '<f4', got '" + std::string(descr) + "'");

  const std::string_view order = detail::dict_value(dict, "fortran_order");
  if (order == "True") throw NpyOrderError("NPY array is in Fortran order; only C order is supported");
  if (order != "False") throw NpyHeaderError("NPY header: bad fortran_order '" + std::string(order) + "'");

  return {detail::parse_shape(detail::dict_value(dict, "shape")), detail::kNpyPreamble + header_len};
}

inline Tensor decode_npy(std::span<const unsigned char> bytes) {
  const NpyHeader header = parse_npy_header(bytes);
  const std::size_t expected = shape_numel(header.shape) * sizeof(float);
  const std::size_t payload = bytes.size() - header.data_offset;
  if (payload < expected) {
    throw NpyTruncatedError("NPY payload truncated: header shape " + shape_str(header.shape) + " needs " +
                            std::to_string(expected) + " bytes, found " + std::to_string(payload));
  }
  if (payload > expected) {
    throw NpyPayloadError("NPY payload has " + std::to_string(payload - expected) +
                          " trailing bytes beyond header shape " + shape_str(header.shape));
  }
  std::vector<float> data(shape_numel(header.shape));
  if (expected) std::memcpy(data.data(), bytes.data() + header.data_offset, expected);
  return Tensor(header.shape, std::move(data));
}

inline std::vector<unsigned char> encode_npy(const Tensor& t) {
  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_str(t.shape()) + ", }";
  const std::size_t unpadded = detail::kNpyPreamble + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');
  std::vector<unsigned char> out(detail::kNpyMagic, detail::kNpyMagic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<unsigned char>(dict.size() & 0xff));
  out.push_back(static_cast<unsigned char>(dict.size() >> 8));
  out.insert(out.end(), dict.begin(), dict.end());
  const auto* p = reinterpret_cast<const unsigned char*>(t.data().data());
  out.insert(out.end(), p, p + t.size() * sizeof(float));
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to a sibling temporary file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline Tensor read_tensor(const std::filesystem::path& path) { return decode_npy(read_file_bytes(path)); }

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_npy(t)); }

// Reads just enough of the file to return the declared shape.
inline Shape read_npy_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf(detail::kNpyPreamble);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  buf.resize(static_cast<std::size_t>(in.gcount()));
  if (buf.size() == detail::kNpyPreamble) {
    const std::size_t header_len = buf[8] | (static_cast<std::size_t>(buf[9]) << 8);
    buf.resize(detail::kNpyPreamble + header_len);
    in.read(reinterpret_cast<char*>(buf.data()) + detail::kNpyPreamble, static_cast<std::streamsize>(header_len));
    buf.resize(detail::kNpyPreamble + static_cast<std::size_t>(in.gcount()));
  }
  return parse_npy_header(buf).shape;
}

}  // namespace vzip
