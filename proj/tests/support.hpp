#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "maskclip/config.hpp"

namespace test_support {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() / ("maskclip_" + tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& p) const { return path_ / p; }

 private:
  fs::path path_;
};

inline fs::path source_path(const std::string& rel) { return fs::path(MASKCLIP_SOURCE_DIR) / rel; }

/// The toy configuration file with a few dotted overrides applied.
inline nlohmann::json toy_tree(const std::vector<std::string>& overrides = {}) {
  maskclip::config::Overrides o;
  o.assignments = overrides;
  return maskclip::config::resolve(source_path("configs/toy.json"), o);
}

}  // namespace test_support
