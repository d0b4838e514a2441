#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace classlm {

using WordId = std::uint32_t;
using FeatureId = std::uint32_t;
using ContextId = std::uint32_t;
using StateId = std::uint32_t;
using CategoryId = std::uint32_t;
using Count = std::int64_t;

struct Error : std::runtime_error {
  explicit Error(const std::string &what) : std::runtime_error(what) {}
};

/// x * ln(x) with the convention 0 * ln(0) = 0.
inline double xlogx(Count x) {
  if (x <= 0) return 0.0;
  const double d = static_cast<double>(x);
  return d * std::log(d);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split_char(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

template <typename Int> Int parse_int(std::string_view s, const char *what) {
  if (s.empty()) throw Error(std::string("malformed ") + what + ": empty field");
  std::string buf(s);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(buf, &used);
  } catch (const std::exception &) {
    throw Error(std::string("malformed ") + what + ": '" + buf + "'");
  }
  if (used != buf.size()) throw Error(std::string("malformed ") + what + ": '" + buf + "'");
  if constexpr (std::is_unsigned_v<Int>) {
    if (v < 0) throw Error(std::string("malformed ") + what + ": negative '" + buf + "'");
  }
  return static_cast<Int>(v);
}

inline double parse_double(std::string_view s, const char *what) {
  std::string buf(s);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(buf, &used);
  } catch (const std::exception &) {
    throw Error(std::string("malformed ") + what + ": '" + buf + "'");
  }
  if (used != buf.size()) throw Error(std::string("malformed ") + what + ": '" + buf + "'");
  return v;
}

/// Shortest text that reads back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> read_lines(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.emplace_back(strip_cr(line));
  return lines;
}

/// Writes to a sibling temporary and renames it into place, so a failed run never leaves a
/// partial file behind.
inline void atomic_write(const std::filesystem::path &path, const std::string &content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error("write failed for '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

/// Path as stored inside a file written to `file`: relative to that file's directory.
inline std::string path_relative_to_file(const std::filesystem::path &target,
                                         const std::filesystem::path &file) {
  auto base = std::filesystem::absolute(file).lexically_normal().parent_path();
  return std::filesystem::absolute(target).lexically_normal().lexically_relative(base).generic_string();
}

/// Inverse of path_relative_to_file.
inline std::filesystem::path resolve_from_file(std::string_view stored,
                                               const std::filesystem::path &file) {
  std::filesystem::path p{std::string(stored)};
  if (p.is_absolute()) return p;
  return (std::filesystem::absolute(file).parent_path() / p).lexically_normal();
}

} // namespace detail
} // namespace classlm
