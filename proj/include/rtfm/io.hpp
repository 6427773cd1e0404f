#pragma once

// File formats used by the command-line tool.
//
// Binary series: "RTFM1", then K, p_1..p_K, n as little-endian u64, then
// n * p little-endian doubles (time-major, first index fastest).
//
// CSV tables: "# schema=<name>.v<version>" on the first line, any number of
// "# ..." lines (the audit header among them), a header row, then data rows.
//
// Config files: one key=value per line; '#' starts a comment.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rtfm/error.hpp"
#include "rtfm/tensor.hpp"

namespace rtfm::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(path + ": truncated file");
  return to_little(v);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": not a number: '" + s + "'");
  }
}

}  // namespace detail

inline constexpr char kMagic[5] = {'R', 'T', 'F', 'M', '1'};

inline void write_series(const std::filesystem::path& path, const TensorSeries& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 5);
  detail::put<std::uint64_t>(os, s.order());
  for (std::size_t p : s.dims()) detail::put<std::uint64_t>(os, p);
  detail::put<std::uint64_t>(os, s.length());
  for (double v : s.data()) detail::put(os, v);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline TensorSeries read_series(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + name + "'");
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) throw IoError(name + ": bad magic, not an RTFM1 file");
  const auto k = detail::get<std::uint64_t>(is, name);
  if (k < 1 || k > 64) throw IoError(name + ": implausible tensor order " + std::to_string(k));
  Dims dims;
  std::uint64_t p = 1;
  for (std::uint64_t i = 0; i < k; ++i) {
    dims.push_back(detail::get<std::uint64_t>(is, name));
    if (dims.back() == 0) throw IoError(name + ": zero dimension");
    p *= dims.back();
  }
  const auto n = detail::get<std::uint64_t>(is, name);
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - here);
  if (remaining != n * p * sizeof(double))
    throw IoError(name + ": payload has " + std::to_string(remaining) + " bytes, header implies " +
                  std::to_string(n * p * sizeof(double)));
  is.seekg(here);
  std::vector<double> data(n * p);
  for (double& v : data) v = detail::get<double>(is, name);
  return TensorSeries(dims, n, std::move(data));
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest representation that round-trips.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  const std::string full = os.str();
  for (int prec = 6; prec < 17; ++prec) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    if (std::stod(s.str()) == v) return s.str();
  }
  return full;
}

struct Table {
  std::string schema;                 // name without version
  int version = 1;
  std::vector<std::string> comments;  // '#' lines after the schema line, without '# '
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("table '" + schema + "' has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& schema, const std::string& audit,
            const std::vector<std::string>& header)
      : path_(path.string()), os_(path) {
    if (!os_) throw IoError("cannot open '" + path_ + "' for writing");
    os_ << "# schema=" << schema << ".v1\n";
    os_ << "# audit: " << audit << "\n";
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << "\n";
    if (!os_) throw IoError("write failed for '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream os_;
};

/// Reads a schema-tagged CSV. `expected` (a schema name) is checked when
/// non-empty; only version 1 is understood.
inline Table read_table(const std::filesystem::path& path, const std::string& expected = "") {
  const std::string name = path.string();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + name + "'");
  Table t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# schema=", 0) != 0) throw IoError(name + ": missing schema line");
  const std::string tag = detail::trim(line.substr(9));
  const auto dot = tag.rfind(".v");
  if (dot == std::string::npos) throw IoError(name + ": malformed schema tag '" + tag + "'");
  t.schema = tag.substr(0, dot);
  try {
    t.version = std::stoi(tag.substr(dot + 2));
  } catch (const std::exception&) {
    throw IoError(name + ": malformed schema version in '" + tag + "'");
  }
  if (t.version != 1) throw IoError(name + ": unsupported schema version " + std::to_string(t.version));
  if (!expected.empty() && t.schema != expected)
    throw IoError(name + ": expected schema '" + expected + "', found '" + t.schema + "'");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(detail::trim(line.substr(1)));
      continue;
    }
    auto cells = detail::split(detail::trim(line), ',');
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) throw IoError(name + ": row with " + std::to_string(cells.size()) +
                                                         " cells, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw IoError(name + ": no header row");
  return t;
}

/// Plain n x p panel with a header row of variable names. A leading
/// "# schema=panel.v1" line is accepted; other '#' lines are skipped.
inline TensorSeries read_panel_csv(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + name + "'");
  std::string line;
  std::vector<std::string> header;
  std::vector<double> data;
  std::size_t rows = 0, lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string s = detail::trim(line);
    if (s.empty()) continue;
    if (s[0] == '#') {
      if (s.rfind("# schema=", 0) == 0 && detail::trim(s.substr(9)) != "panel.v1")
        throw IoError(name + ": unsupported schema '" + detail::trim(s.substr(9)) + "'");
      continue;
    }
    auto cells = detail::split(s, ',');
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size())
      throw IoError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " values");
    for (const auto& c : cells) data.push_back(detail::parse_double(c, name + ":" + std::to_string(lineno)));
    ++rows;
  }
  if (header.empty() || rows == 0) throw IoError(name + ": empty panel");
  return TensorSeries({header.size()}, rows, std::move(data));
}

/// Binary unless the extension is .csv (K = 1 panels).
inline TensorSeries read_data(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return read_panel_csv(path);
  return read_series(path);
}

// ---------------------------------------------------------------------------
// key=value configuration

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& source) {
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      const std::string s = detail::trim(hash == std::string::npos ? line : line.substr(0, hash));
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
      const std::string key = detail::trim(s.substr(0, eq)), value = detail::trim(s.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (c.values_.count(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path.string() + "'");
    return parse(is, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  void allow_only(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_)
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  std::string str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double num(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': not a number: '" + s + "'");
    }
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return parse_count(values_.at(key), key);
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
  }

  static std::uint64_t parse_count(const std::string& s, const std::string& what) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      throw ConfigError(what + ": expected a non-negative integer, got '" + s + "'");
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ConfigError(what + ": integer out of range: '" + s + "'");
    }
  }

  /// Comma-separated list of non-negative integers, e.g. "20,30,40".
  static std::vector<std::size_t> parse_list(const std::string& s, const std::string& what) {
    std::vector<std::size_t> out;
    for (const auto& part : detail::split(s, ',')) out.push_back(parse_count(part, what));
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace rtfm::io
