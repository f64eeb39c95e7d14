#include "revisit/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "revisit/errors.hpp"

namespace revisit {

static_assert(std::endian::native == std::endian::little, "array container assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string shape_literal(at::IntArrayRef sizes) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < sizes.size(); ++i) {
    os << sizes[i];
    if (sizes.size() == 1 || i + 1 < sizes.size()) os << ",";
    if (i + 1 < sizes.size()) os << ' ';
  }
  os << ')';
  return os.str();
}

std::string extract_field(const std::string& header, const std::string& key) {
  auto pos = header.find("'" + key + "'");
  if (pos == std::string::npos) throw IoError("npy header missing field " + key);
  pos = header.find(':', pos);
  if (pos == std::string::npos) throw IoError("npy header malformed near " + key);
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  if (header[pos] == '(') {
    auto end = header.find(')', pos);
    return header.substr(pos, end - pos + 1);
  }
  auto end = header.find_first_of(",}", pos);
  return header.substr(pos, end - pos);
}

std::vector<int64_t> parse_shape(const std::string& literal) {
  std::vector<int64_t> shape;
  std::string body = literal.substr(1, literal.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto first = item.find_first_not_of(' ');
    if (first == std::string::npos) continue;
    shape.push_back(std::stoll(item.substr(first)));
  }
  return shape;
}

}  // namespace

void write_array(const std::filesystem::path& path, const torch::Tensor& array) {
  auto data = array.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_literal(data.sizes()) + ", }";
  // magic(6) + version(2) + header length(2) + header, padded to 64 bytes, newline-terminated
  const size_t preamble = 10;
  size_t total = preamble + header.size() + 1;
  size_t padded = (total + 63) / 64 * 64;
  header.append(padded - total, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
            static_cast<std::streamsize>(data.numel() * sizeof(float)));
  if (!out) throw IoError("failed writing " + path.string());
}

torch::Tensor read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, kMagic, 6) != 0) throw IoError(path.string() + " is not an npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (b[1] << 8);
  } else if (version[0] == 2 || version[0] == 3) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  } else {
    throw IoError("unsupported npy version in " + path.string());
  }
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw IoError("truncated npy header in " + path.string());

  auto descr = extract_field(header, "descr");
  if (descr.find("<f4") == std::string::npos) throw IoError(path.string() + ": only '<f4' arrays are supported");
  if (extract_field(header, "fortran_order").find("False") == std::string::npos)
    throw IoError(path.string() + ": fortran-ordered arrays are not supported");
  auto shape = parse_shape(extract_field(header, "shape"));

  auto tensor = torch::empty(shape, torch::kFloat32);
  in.read(reinterpret_cast<char*>(tensor.data_ptr<float>()),
          static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
  if (!in) throw IoError("truncated npy payload in " + path.string());
  return tensor;
}

}  // namespace revisit
