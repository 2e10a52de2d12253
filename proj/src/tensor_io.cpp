#include "grmc/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace grmc::io {

namespace {

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), bytes.size())) throw FormatError("tensor file truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename Elem>
void write_impl(std::ostream& os, const ad::Tensor& t, const char* magic) {
  os.write(magic, 4);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  for (ad::Index i = 0; i < t.size(); ++i) put_le<Elem>(os, static_cast<Elem>(t[i]));
  if (!os) throw FormatError("failed writing tensor");
}

}  // namespace

void write_grnt(std::ostream& os, const ad::Tensor& t) { write_impl<float>(os, t, "GRNT"); }
void write_grnd(std::ostream& os, const ad::Tensor& t) { write_impl<double>(os, t, "GRND"); }

ad::Tensor read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw FormatError("tensor file truncated");
  const std::string m(magic.begin(), magic.end());
  if (m != "GRNT" && m != "GRND") throw FormatError("bad tensor magic '" + m + "'");
  const auto rank = get_le<std::uint32_t>(is);
  if (rank < 1 || rank > 3) throw FormatError(fmt::format("unsupported tensor rank {}", rank));
  ad::Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<ad::Index>(get_le<std::uint32_t>(is)));
  ad::Tensor t(shape);
  for (ad::Index i = 0; i < t.size(); ++i) {
    t[i] = m == "GRNT" ? static_cast<double>(get_le<float>(is)) : get_le<double>(is);
  }
  return t;
}

void save_grnt(const std::filesystem::path& path, const ad::Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_grnt(os, t);
}

ad::Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

void save_csv(const std::filesystem::path& path, const ad::Tensor& t) {
  if (t.rank() != 2) throw ShapeError("save_csv: need a 2-D tensor, got " + ad::to_string(t.shape()));
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const auto m = t.matrix(t.dim(0), t.dim(1));
  for (ad::Index r = 0; r < m.rows(); ++r) {
    for (ad::Index c = 0; c < m.cols(); ++c) os << (c ? "," : "") << fmt::format("{}", m(r, c));
    os << '\n';
  }
}

ad::Tensor load_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::vector<double> values;
  ad::Index rows = 0, cols = -1;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string cell;
    ad::Index n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw FormatError(fmt::format("{}:{}: not a number '{}'", path.string(), rows + 1, cell));
      }
      ++n;
    }
    if (cols >= 0 && n != cols) throw FormatError(fmt::format("{}:{}: ragged row", path.string(), rows + 1));
    cols = n;
    ++rows;
  }
  if (rows == 0 || cols <= 0) throw FormatError(path.string() + ": empty CSV tensor");
  return ad::Tensor({rows, cols}, Eigen::Map<Eigen::ArrayXd>(values.data(), static_cast<ad::Index>(values.size())));
}

ad::Tensor load_any(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? load_csv(path) : load_tensor(path);
}

}  // namespace grmc::io
