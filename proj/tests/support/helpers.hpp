#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "qiu/config.hpp"
#include "qiu/stack.hpp"

namespace testing_support {

inline std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(QIU_FIXTURES) / name; }

inline qiu::AppConfig fixture_config(const std::map<std::string, std::string>& overrides = {}) {
  auto tree = qiu::load_config_file(fixture("pipeline.ini"));
  for (const auto& [k, v] : overrides) qiu::set_config_value(tree, k, v);
  return qiu::app_config(tree);
}

inline qiu::Stack fixture_stack(const std::map<std::string, std::string>& overrides = {}) {
  return qiu::build_stack(fixture_config(overrides));
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

class TempDir {
public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "qiu-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

}  // namespace testing_support
