#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "foldnet/encode.hpp"
#include "foldnet/model.hpp"
#include "foldnet/tensor.hpp"

namespace foldnet::testing {

inline Tensor random_tensor(Tensor::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("foldnet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline encode::SyntheticCorpus small_corpus(std::size_t folds = 4, std::size_t per_fold = 8,
                                            std::uint64_t seed = 5) {
  encode::SyntheticSpec spec;
  spec.num_folds = folds;
  spec.proteins_per_fold = per_fold;
  spec.min_length = 30;
  spec.max_length = 70;
  spec.seed = seed;
  return encode::generate_synthetic(spec);
}

inline model::ModelConfig tiny_config(std::size_t folds = 4) {
  model::ModelConfig c;
  c.window_sizes = {3, 4};
  c.filters_per_layer = 4;
  c.conv_depth = 2;
  c.kmax = 5;
  c.hidden_units = 12;
  c.num_folds = folds;
  c.dropout_rate = 0.2;
  return c;
}

}  // namespace foldnet::testing
