#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dslab/rng.hpp"
#include "dslab/tensor.hpp"

namespace dslab {

enum class Split { Train, Val };

// Labeled examples: images as (N,3,32,32) in [0,1], or a flat (N,D) feature
// matrix for synthetic data. coarse_labels is only populated by the
// 100-class loader so files can be reproduced byte-for-byte.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::vector<int> coarse_labels;
  int class_count = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
};

struct DatasetPair {
  Dataset train;
  Dataset val;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

// Per-channel constants computed from a training split (rank-4 images) or
// per-column for flat feature matrices.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

// --- binary dataset files ---------------------------------------------------
// 10-class record: 1 label byte, then 3072 pixel bytes (R, G, B planes,
// row-major). 100-class record: coarse byte, fine byte, 3072 pixel bytes.

Dataset load_cifar10_file(const std::string& path, Split split);
Dataset load_cifar100_file(const std::string& path, Split split);
void write_cifar10_file(const std::string& path, const Dataset& d);
void write_cifar100_file(const std::string& path, const Dataset& d);

// Directory layouts: data_batch_{1..5}.bin + test_batch.bin, and
// train.bin + test.bin respectively.
DatasetPair load_cifar10(const std::string& dir);
DatasetPair load_cifar100(const std::string& dir);

// Default data root from the DSLAB_DATA_DIR environment variable.
std::optional<std::string> data_root();

// --- synthetic data ----------------------------------------------------------

// Gaussian class blobs: class centers at N(0, spread^2) per dimension, unit
// in-class noise, classes assigned round-robin so counts come out equal.
Dataset make_synthetic(int classes, std::size_t dim, std::size_t n,
                       std::uint64_t seed, double spread = 3.0);

// --- batching and augmentation ------------------------------------------------

// First per_class samples of every class, keeping dataset order.
Dataset subset_per_class(const Dataset& d, std::size_t per_class);

// Rows [begin, begin+count) as a dataset of the same kind and split.
Dataset slice_dataset(const Dataset& d, std::size_t begin, std::size_t count);

// Seeded permutation of {0..n-1}; a fresh stream per (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t epoch);

// Gathers the given rows. Batches are capped at 128 samples.
Batch take_batch(const Dataset& d, std::span<const std::size_t> indices);

// First n images as a raw tensor (no batch cap); calibration passes use this.
Tensor leading_images(const Dataset& d, std::size_t n);

Normalization compute_normalization(const Dataset& train);

// Mirrors every image left-right.
Tensor flip_horizontal(const Tensor& images);

// Training batches get a per-image coin-flip mirror then normalization; val
// batches are normalized only and never touch the generator.
Batch augment(const Batch& batch, Split split, const Normalization& norm,
              Rng& rng);

}  // namespace dslab
