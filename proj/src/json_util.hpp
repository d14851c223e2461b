#pragma once

// Helpers shared by the JSON readers. Internal to the library.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>

#include "hybridsim/types.hpp"
#include "json.hpp"

namespace hybridsim::detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& context) {
  if (!j.is_object()) throw Error(context + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto a : allowed) ok = ok || it.key() == a;
    if (!ok) throw Error(context + ": unknown key '" + it.key() + "'");
  }
}

inline double get_number(const json& j, const std::string& context) {
  if (!j.is_number()) throw Error(context + ": expected a number");
  return j.get<double>();
}

inline Vec3 get_vec3(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 3) throw Error(context + ": expected an array of 3 numbers");
  return {get_number(j[0], context), get_number(j[1], context), get_number(j[2], context)};
}

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace hybridsim::detail
