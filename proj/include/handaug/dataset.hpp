#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "handaug/depth_renderer.hpp"
#include "handaug/hand_model.hpp"
#include "handaug/random.hpp"

namespace handaug {

struct PairedRecord {
  DepthMap depth;
  Skeleton skeleton;

  friend bool operator==(const PairedRecord&, const PairedRecord&) = default;
};

/// Depth maps with their ground-truth skeletons.
struct PairedDataset {
  std::uint32_t resolution = 0;
  std::vector<PairedRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  friend bool operator==(const PairedDataset&, const PairedDataset&) = default;
};

/// Augmented skeletons without depth maps.
struct UnpairedSkeletonSet {
  std::vector<Skeleton> records;

  std::size_t size() const noexcept { return records.size(); }
  friend bool operator==(const UnpairedSkeletonSet&, const UnpairedSkeletonSet&) = default;
};

/// Synthesizes `n` records. Each record draws from its own stream derived
/// from one draw of `rng`, so record i does not depend on records < i.
/// Skeletons are rounded to float precision before rendering so that they
/// survive serialization bitwise.
inline PairedDataset make_dataset(std::size_t n, const PoseSampler& sampler, const RenderConfig& render_config,
                                  RandomState& rng) {
  render_config.check();
  PairedDataset out;
  out.resolution = static_cast<std::uint32_t>(render_config.resolution);
  out.records.reserve(n);
  const std::uint64_t base = rng.next_u64();
  for (std::size_t i = 0; i < n; ++i) {
    RandomState local(derive_seed(base, i));
    Skeleton s;
    for (int attempt = 0;; ++attempt) {
      s = quantize_to_float(sampler.sample(local));
      if (validate(s, sampler.limits).is_valid) break;
      if (attempt == 99) throw std::runtime_error("pose sampler failed to produce a valid skeleton");
    }
    out.records.push_back({render(s, render_config), s});
  }
  return out;
}

// Rows [begin, end) of a dataset.
inline PairedDataset slice(const PairedDataset& d, std::size_t begin, std::size_t end) {
  PairedDataset out;
  out.resolution = d.resolution;
  out.records.assign(d.records.begin() + static_cast<std::ptrdiff_t>(begin),
                     d.records.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

inline std::vector<Skeleton> skeletons_of(const PairedDataset& d) {
  std::vector<Skeleton> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(r.skeleton);
  return out;
}

}  // namespace handaug
