#pragma once

#include "acs/error.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <string>

namespace acs {

inline nlohmann::json to_json_array(const Eigen::VectorXd& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j, Eigen::Index expected = -1) {
  if (!j.is_array()) throw FormatError("expected a JSON array of numbers", 0);
  if (expected >= 0 && static_cast<Eigen::Index>(j.size()) != expected)
    throw FormatError("array has length " + std::to_string(j.size()) + ", expected " + std::to_string(expected), 0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

/// Parses a JSON file, mapping syntax errors to FormatError with the byte offset.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace acs
