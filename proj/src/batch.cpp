#include "foldnet/batch.hpp"

#include <algorithm>
#include <map>

#include "foldnet/error.hpp"

namespace foldnet::train {

std::size_t bin_of(std::size_t length, std::size_t bin_size) {
  if (bin_size == 0) throw ValidationError("bin size must be at least 1");
  if (length == 0) throw ValidationError("cannot bin a protein of length 0");
  return (length - 1) / bin_size;
}

std::vector<LengthBin> make_bins(std::span<const encode::EncodedProtein> proteins,
                                 std::size_t bin_size) {
  std::map<std::size_t, LengthBin> bins;
  for (std::size_t i = 0; i < proteins.size(); ++i) {
    const std::size_t idx = bin_of(proteins[i].length(), bin_size);
    LengthBin& bin = bins[idx];
    bin.bin_index = idx;
    bin.members.push_back(i);
    bin.member_ids.push_back(proteins[i].id);
    bin.max_length = std::max(bin.max_length, proteins[i].length());
  }
  std::vector<LengthBin> out;
  out.reserve(bins.size());
  for (auto& [_, bin] : bins) out.push_back(std::move(bin));
  return out;
}

PaddedBatch pad_batch(std::span<const encode::EncodedProtein* const> proteins,
                      std::size_t min_length) {
  if (proteins.empty()) throw ValidationError("pad_batch: empty batch");
  std::size_t max_len = min_length;
  bool labeled = true;
  std::vector<std::size_t> lengths;
  for (const auto* p : proteins) {
    if (p->length() == 0) throw ValidationError("pad_batch: '" + p->id + "' is empty");
    max_len = std::max(max_len, p->length());
    lengths.push_back(p->length());
    labeled = labeled && p->label.has_value();
  }
  constexpr std::size_t width = encode::kFeatureWidth;
  PaddedBatch batch{Tensor({proteins.size(), width, max_len}), nn::Mask(lengths, max_len), {}};
  for (std::size_t b = 0; b < proteins.size(); ++b) {
    const auto& f = proteins[b]->features;
    if (f.shape() != Tensor::Shape{proteins[b]->length(), width}) {
      throw ShapeError("pad_batch: '" + proteins[b]->id + "' has feature shape " +
                       shape_string(f.shape()));
    }
    for (std::size_t t = 0; t < proteins[b]->length(); ++t) {
      for (std::size_t c = 0; c < width; ++c) batch.features.at(b, c, t) = f.at(t, c);
    }
    if (labeled) batch.labels.push_back(*proteins[b]->label);
  }
  return batch;
}

PaddedBatch pad_batch(std::span<const encode::EncodedProtein* const> proteins) {
  return pad_batch(proteins, 0);
}

PaddedBatch pad_batch(std::span<const encode::EncodedProtein> proteins) {
  std::vector<const encode::EncodedProtein*> ptrs;
  for (const auto& p : proteins) ptrs.push_back(&p);
  return pad_batch(ptrs, 0);
}

}  // namespace foldnet::train
