#pragma once

// Length binning and zero-padded mini-batches.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "foldnet/encode.hpp"
#include "foldnet/nn.hpp"

namespace foldnet::train {

// A protein of length L lives in bin floor((L - 1) / bin_size).
struct LengthBin {
  std::size_t bin_index = 0;
  std::vector<std::size_t> members;  // indices into the corpus, ascending
  std::vector<std::string> member_ids;
  std::size_t max_length = 0;
};

std::size_t bin_of(std::size_t length, std::size_t bin_size);

// Non-empty bins in ascending bin order.
std::vector<LengthBin> make_bins(std::span<const encode::EncodedProtein> proteins,
                                 std::size_t bin_size);

struct PaddedBatch {
  Tensor features;  // [B, 45, L_max], tail zero-padded
  nn::Mask mask;
  std::vector<std::size_t> labels;  // empty when any member is unlabeled

  std::size_t size() const noexcept { return mask.batch(); }
};

PaddedBatch pad_batch(std::span<const encode::EncodedProtein* const> proteins);
PaddedBatch pad_batch(std::span<const encode::EncodedProtein> proteins);
// Pads to at least `min_length` positions; used to probe padding invariance.
PaddedBatch pad_batch(std::span<const encode::EncodedProtein* const> proteins,
                      std::size_t min_length);

}  // namespace foldnet::train
