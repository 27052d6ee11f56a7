#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "unisal/domain.hpp"
#include "unisal/rng.hpp"
#include "unisal/tensor.hpp"

namespace testing_support {

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("unisal_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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

 private:
  std::filesystem::path path_;
};

inline unisal::Tensor random_tensor(unisal::Shape shape, std::uint64_t seed, bool requires_grad = false,
                                    double lo = -1.0, double hi = 1.0) {
  unisal::CounterRng rng(seed, 77);
  std::vector<double> v(unisal::shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return unisal::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Two static and two dynamic domains at the given resolution.
inline std::shared_ptr<unisal::DomainRegistry> four_domains(unisal::Resolution res = {24, 32}) {
  auto reg = std::make_shared<unisal::DomainRegistry>();
  reg->add("image_a", unisal::Modality::Static, 0, res);
  reg->add("image_b", unisal::Modality::Static, 0, res);
  reg->add("video_a", unisal::Modality::Dynamic, 30, res);
  reg->add("video_b", unisal::Modality::Dynamic, 24, res);
  return reg;
}

}  // namespace testing_support
