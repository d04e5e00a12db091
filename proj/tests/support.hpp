#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pactune/data.hpp"
#include "pactune/rng.hpp"

namespace pactune::testing {

/// Fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    Rng rng(derive_seed(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)), ++counter));
    path_ = std::filesystem::temp_directory_path() / ("pactune-" + tag + "-" + std::to_string(rng.next_u64() % 1000000007));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
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

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

/// Small random classification batch.
inline Dataset random_batch(std::size_t n, std::size_t d, std::size_t k, Rng& rng) {
  Dataset b;
  b.x = Tensor::zeros({n, d});
  for (double& v : b.x.storage()) v = rng.normal();
  b.num_classes = k;
  for (std::size_t i = 0; i < n; ++i) b.y.push_back(static_cast<int>(rng.below(k)));
  return b;
}

}  // namespace pactune::testing
