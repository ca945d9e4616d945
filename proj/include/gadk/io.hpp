#pragma once

// Dataset and tensor file formats.
//
// csv-long: header `group_id[,label],f0,...,f{V-1}`, one observation per row.
// binary:   "GADK", u32 version=1, u64 M, u64 V, u64 N_m for each group,
//           u8 labels flag, M label bytes when flagged, then each group's
//           rows as little-endian f64, row-major, in group order.
// tensors:  "GADT", u32 version=1, u64 count, then per tensor
//           u32 name length, name bytes, u64 rows, u64 cols, f64 values.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gadk/core.hpp"

namespace gadk {

enum class DataFormat { CsvLong, Binary };

namespace detail {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are unsupported");

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<std::uint64_t>(d)); }

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw Error(Errc::ParseError, std::string("truncated input reading ") + what);
  }
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_exact(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_u64(is, what));
}

inline std::string format_double(double d) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), d);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw Error(Errc::ParseError,
                "line " + std::to_string(line) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::IoError, "cannot open " + path);
  return is;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::IoError, "cannot write " + path);
  return os;
}

}  // namespace detail

inline void write_csv_long(std::ostream& os, const GroupDataset& ds) {
  const auto dim = ds.dim();
  os << "group_id";
  if (ds.labels) os << ",label";
  for (std::size_t j = 0; j < dim; ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t m = 0; m < ds.groups.size(); ++m) {
    const auto& g = ds.groups[m].data;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      os << m;
      if (ds.labels) os << ',' << ((*ds.labels)[m] ? 1 : 0);
      for (Eigen::Index j = 0; j < g.cols(); ++j) os << ',' << detail::format_double(g(i, j));
      os << '\n';
    }
  }
}

inline GroupDataset read_csv_long(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(Errc::ParseError, "empty csv");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_commas(line);
  if (header.empty() || header[0] != "group_id") {
    throw Error(Errc::ParseError, "header must start with group_id");
  }
  const bool has_label = header.size() > 1 && header[1] == "label";
  const std::size_t first_feature = has_label ? 2 : 1;
  if (header.size() <= first_feature) throw Error(Errc::ParseError, "no feature columns");
  const std::size_t dim = header.size() - first_feature;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[first_feature + j] != "f" + std::to_string(j)) {
      throw Error(Errc::ParseError, "feature column " + std::to_string(j) + " must be named f" +
                                        std::to_string(j));
    }
  }

  std::unordered_map<std::string, std::size_t> index_of;
  std::vector<std::vector<double>> rows;  // flattened values per group
  std::vector<int> group_label;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size()) {
      if (cells.size() > first_feature) {
        throw Error(Errc::DimensionMismatch, "line " + std::to_string(lineno) + " has " +
                                                 std::to_string(cells.size() - first_feature) +
                                                 " features, header declares " +
                                                 std::to_string(dim));
      }
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + " has " +
                                        std::to_string(cells.size()) + " cells");
    }
    std::string id(cells[0]);
    if (id.empty()) throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": empty group_id");
    auto [it, inserted] = index_of.try_emplace(id, rows.size());
    if (inserted) {
      rows.emplace_back();
      group_label.push_back(-1);
    }
    const auto m = it->second;
    if (has_label) {
      int lab;
      if (cells[1] == "0") {
        lab = 0;
      } else if (cells[1] == "1") {
        lab = 1;
      } else {
        throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": label must be 0 or 1");
      }
      if (group_label[m] == -1) {
        group_label[m] = lab;
      } else if (group_label[m] != lab) {
        throw Error(Errc::InconsistentLabel, "group '" + id + "' has both labels 0 and 1");
      }
    }
    for (std::size_t j = 0; j < dim; ++j) {
      rows[m].push_back(detail::parse_double(cells[first_feature + j], lineno));
    }
  }

  GroupDataset ds;
  ds.groups.reserve(rows.size());
  for (auto& r : rows) ds.groups.push_back(unflatten_group(r, r.size() / dim, dim));
  if (has_label) {
    std::vector<bool> labels;
    for (int l : group_label) labels.push_back(l == 1);
    ds.labels = std::move(labels);
  }
  return ds;
}

inline void write_binary(std::ostream& os, const GroupDataset& ds) {
  os.write("GADK", 4);
  detail::put_u32(os, 1);
  detail::put_u64(os, ds.groups.size());
  detail::put_u64(os, ds.dim());
  for (const auto& g : ds.groups) detail::put_u64(os, g.n_points());
  os.put(ds.labels ? 1 : 0);
  if (ds.labels) {
    for (bool b : *ds.labels) os.put(b ? 1 : 0);
  }
  for (const auto& g : ds.groups) {
    const double* p = g.data.data();
    for (Eigen::Index k = 0; k < g.data.size(); ++k) detail::put_f64(os, p[k]);
  }
}

inline GroupDataset read_binary(std::istream& is) {
  char magic[4];
  detail::read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, "GADK", 4) != 0) throw Error(Errc::ParseError, "bad magic, expected GADK");
  const auto version = detail::get_u32(is, "version");
  if (version != 1) throw Error(Errc::ParseError, "unsupported version " + std::to_string(version));
  const auto m_count = detail::get_u64(is, "M");
  const auto dim = detail::get_u64(is, "V");
  if (dim == 0 && m_count > 0) throw Error(Errc::ParseError, "V must be positive");
  std::vector<std::uint64_t> sizes(m_count);
  for (auto& n : sizes) n = detail::get_u64(is, "N_m");
  unsigned char flag = 0;
  detail::read_exact(is, &flag, 1, "labels flag");
  if (flag > 1) throw Error(Errc::ParseError, "labels flag must be 0 or 1");
  GroupDataset ds;
  if (flag == 1) {
    std::vector<bool> labels(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
      unsigned char b = 0;
      detail::read_exact(is, &b, 1, "label");
      if (b > 1) throw Error(Errc::ParseError, "label byte must be 0 or 1");
      labels[m] = b == 1;
    }
    ds.labels = std::move(labels);
  }
  ds.groups.reserve(m_count);
  for (auto n : sizes) {
    Matrix g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    double* p = g.data();
    for (Eigen::Index k = 0; k < g.size(); ++k) p[k] = detail::get_f64(is, "values");
    ds.groups.emplace_back(std::move(g));
  }
  return ds;
}

inline GroupDataset load_groups(const std::string& path, DataFormat format) {
  auto is = detail::open_in(path);
  return format == DataFormat::CsvLong ? read_csv_long(is) : read_binary(is);
}

inline void save_groups(const std::string& path, const GroupDataset& ds, DataFormat format) {
  auto os = detail::open_out(path);
  if (format == DataFormat::CsvLong) {
    write_csv_long(os, ds);
  } else {
    write_binary(os, ds);
  }
  if (!os) throw Error(Errc::IoError, "write failed: " + path);
}

/// Picks the format from the extension: `.csv` is csv-long, anything else binary.
inline DataFormat format_for_path(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0 ? DataFormat::CsvLong
                                                                          : DataFormat::Binary;
}

// Named-tensor container, used for model checkpoints.
using TensorMap = std::map<std::string, Matrix>;

inline void write_tensors(std::ostream& os, const TensorMap& tensors) {
  os.write("GADT", 4);
  detail::put_u32(os, 1);
  detail::put_u64(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, static_cast<std::uint64_t>(t.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) detail::put_f64(os, t.data()[k]);
  }
}

inline TensorMap read_tensors(std::istream& is) {
  char magic[4];
  detail::read_exact(is, magic, 4, "magic");
  if (std::memcmp(magic, "GADT", 4) != 0) throw Error(Errc::ParseError, "bad magic, expected GADT");
  if (detail::get_u32(is, "version") != 1) throw Error(Errc::ParseError, "unsupported version");
  const auto count = detail::get_u64(is, "count");
  TensorMap out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = detail::get_u32(is, "name length");
    std::string name(len, '\0');
    detail::read_exact(is, name.data(), len, "name");
    const auto rows = detail::get_u64(is, "rows");
    const auto cols = detail::get_u64(is, "cols");
    Matrix t(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = detail::get_f64(is, "values");
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

inline void save_tensors(const std::string& path, const TensorMap& tensors) {
  auto os = detail::open_out(path);
  write_tensors(os, tensors);
  if (!os) throw Error(Errc::IoError, "write failed: " + path);
}

inline TensorMap load_tensors(const std::string& path) {
  auto is = detail::open_in(path);
  return read_tensors(is);
}

}  // namespace gadk
