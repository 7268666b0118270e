#pragma once

// Helpers shared by the config readers and report writers.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stdmarg/errors.hpp"

namespace stdmarg::io {

using Json = nlohmann::ordered_json;

inline Json parse_json(std::string_view text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, what + " is not valid JSON: " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidArgument, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Rejects keys outside `allowed` so misspelt options do not pass silently.
inline void require_keys(const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const Json& obj, const std::string& key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw Error(ErrorKind::InvalidConfig, where + ": '" + key + "' is missing or has the wrong type");
  }
}

template <typename T>
T get_or(const Json& obj, const std::string& key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  return get<T>(obj, key, where);
}

inline void check_schema_version(const Json& obj, int expected, const std::string& where) {
  if (!obj.contains("schema_version")) return;
  const int version = get<int>(obj, "schema_version", where);
  if (version != expected) {
    throw Error(ErrorKind::InvalidConfig, where + ": schema_version " + std::to_string(version) +
                                              " is not supported (expected " + std::to_string(expected) + ")");
  }
}

/// Shortest decimal form that reads back to the same double.
inline std::string exact(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Left-aligns the first column and right-aligns the rest.
inline std::string align(const std::vector<std::vector<std::string>>& rows, std::size_t left_columns = 1) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    if (width.size() < r.size()) width.resize(r.size(), 0);
    for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], r[j].size());
  }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j > 0) line += "  ";
      const std::string pad(width[j] - r[j].size(), ' ');
      line += j < left_columns ? r[j] + pad : pad + r[j];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace stdmarg::io
