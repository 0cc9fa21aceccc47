#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "msseg/labels.hpp"
#include "msseg/rng.hpp"
#include "msseg/volume.hpp"

namespace msseg {

struct SamplerConfig {
  int patch_size = 64;
  // A patch is kept when at least ceil(fraction * P^3) voxels are tumor.
  double min_tumor_fraction = 1e-4;
  double noise_std = 0.1;
  int scales = 3;
  int max_attempts = 1000;

  void validate() const;
  std::int64_t tumor_threshold() const;
};

// Normalized modalities and smoothed class probabilities of one training case.
struct PreparedCase {
  std::string id;
  std::vector<Volume> modalities;
  ProbMaps targets;
  // 1 where the target argmax is a tumor class (ties go to the lower index).
  Mask tumor;
};

// Normalizes every modality inside its own brain mask, one-hot encodes and
// smooths the labels (internal class ids).
PreparedCase prepare_case(std::string id, const std::vector<Volume>& raw_modalities, const LabelMap& labels,
                          int num_classes, const GaussianKernel& label_kernel);

struct PatchSample {
  std::vector<std::vector<Volume>> inputs;  // [scale][modality]
  std::vector<ProbMaps> targets;            // [scale]
  Index3 origin;
};

// Level s is downsample2 applied s times, per modality.
std::vector<std::vector<Volume>> input_pyramid(const std::vector<Volume>& patch, int scales, const GaussianKernel& k);

std::int64_t count_tumor_voxels(const Mask& tumor, Index3 origin, int patch_size);

// Rejection-samples uniform corners until the tumor-voxel threshold holds.
PatchSample sample_patch(const PreparedCase& c, const SamplerConfig& cfg, const GaussianKernel& k, Rng& rng);

// Adds N(0, noise_std^2) to every input voxel at every scale; targets untouched.
PatchSample augment_noise(PatchSample p, double noise_std, Rng& rng);

// Fixed-capacity multi-producer queue. push blocks while full; pop blocks while empty.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

}  // namespace msseg
