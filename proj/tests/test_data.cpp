#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "dslab/data.hpp"

using namespace dslab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("dslab_data_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

// One 10-class record: label byte then a pixel ramp starting at `base`.
std::vector<unsigned char> record10(unsigned char label, unsigned base) {
  std::vector<unsigned char> r;
  r.push_back(label);
  for (unsigned j = 0; j < 3072; ++j) {
    r.push_back(static_cast<unsigned char>((base + j) % 256));
  }
  return r;
}

std::vector<unsigned char> concat(std::initializer_list<std::vector<unsigned char>> parts) {
  std::vector<unsigned char> all;
  for (const auto& p : parts) all.insert(all.end(), p.begin(), p.end());
  return all;
}

// Least-squares multiclass probe: solve (X^T X + eps I) W = X^T Y for a
// one-hot Y, predict by argmax. Gaussian elimination is plenty at this size.
double linear_probe_accuracy(const Dataset& d) {
  const std::size_t n = d.images.dim(0);
  const std::size_t dim = d.images.dim(1);
  const std::size_t cols = dim + 1;  // bias column
  const std::size_t C = static_cast<std::size_t>(d.class_count);

  std::vector<double> A(cols * cols, 0.0);
  std::vector<double> B(cols * C, 0.0);
  std::vector<double> xi(cols);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) xi[j] = d.images[i * dim + j];
    xi[dim] = 1.0;
    for (std::size_t a = 0; a < cols; ++a) {
      for (std::size_t b = 0; b < cols; ++b) A[a * cols + b] += xi[a] * xi[b];
      B[a * C + static_cast<std::size_t>(d.labels[i])] += xi[a];
    }
  }
  for (std::size_t a = 0; a < cols; ++a) A[a * cols + a] += 1e-8;

  // forward elimination with partial pivoting, then back substitution
  for (std::size_t col = 0; col < cols; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < cols; ++r) {
      if (std::abs(A[r * cols + col]) > std::abs(A[piv * cols + col])) piv = r;
    }
    for (std::size_t j = 0; j < cols; ++j) std::swap(A[col * cols + j], A[piv * cols + j]);
    for (std::size_t j = 0; j < C; ++j) std::swap(B[col * C + j], B[piv * C + j]);
    for (std::size_t r = col + 1; r < cols; ++r) {
      const double f = A[r * cols + col] / A[col * cols + col];
      for (std::size_t j = col; j < cols; ++j) A[r * cols + j] -= f * A[col * cols + j];
      for (std::size_t j = 0; j < C; ++j) B[r * C + j] -= f * B[col * C + j];
    }
  }
  std::vector<double> W(cols * C, 0.0);
  for (std::size_t r = cols; r-- > 0;) {
    for (std::size_t j = 0; j < C; ++j) {
      double v = B[r * C + j];
      for (std::size_t k = r + 1; k < cols; ++k) v -= A[r * cols + k] * W[k * C + j];
      W[r * C + j] = v / A[r * cols + r];
    }
  }

  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_score = -1e300;
    for (std::size_t j = 0; j < C; ++j) {
      double score = W[dim * C + j];
      for (std::size_t k = 0; k < dim; ++k) {
        score += d.images[i * dim + k] * W[k * C + j];
      }
      if (score > best_score) {
        best_score = score;
        best = static_cast<int>(j);
      }
    }
    hits += (best == d.labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("synthetic blobs are balanced and deterministic") {
  Dataset d = make_synthetic(4, 8, 400, 7);
  CHECK(d.images.shape() == Shape{400, 8});
  CHECK(d.class_count == 4);
  int counts[4] = {0, 0, 0, 0};
  for (int l : d.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 4);
    ++counts[l];
  }
  for (int c : counts) CHECK(c == 100);

  Dataset same = make_synthetic(4, 8, 400, 7);
  CHECK(same.images.values() == d.images.values());
  CHECK(same.labels == d.labels);
  Dataset other = make_synthetic(4, 8, 400, 8);
  CHECK(other.images.values() != d.images.values());

  CHECK_THROWS_AS(make_synthetic(1, 8, 400, 7), Error);
  CHECK_THROWS_AS(make_synthetic(4, 0, 400, 7), Error);
}

TEST_CASE("synthetic blobs are linearly separable at default spread") {
  Dataset d = make_synthetic(4, 8, 400, 7);
  CHECK(linear_probe_accuracy(d) >= 0.95);
  Dataset harder = make_synthetic(6, 12, 600, 19);
  CHECK(linear_probe_accuracy(harder) >= 0.95);
}

TEST_CASE("10-class records round-trip through write and load") {
  TempDir tmp;
  const auto bytes = concat({record10(7, 0), record10(0, 23), record10(9, 200)});
  write_bytes(tmp.file("one.bin"), bytes);

  Dataset d = load_cifar10_file(tmp.file("one.bin"), Split::Train);
  CHECK(d.size() == 3);
  CHECK(d.labels == std::vector<int>{7, 0, 9});
  CHECK(d.class_count == 10);
  CHECK(d.images.shape() == Shape{3, 3, 32, 32});
  CHECK(d.images[0] == 0.0);           // first ramp starts at byte 0
  CHECK(d.images[255] == 1.0);         // and reaches byte 255
  for (double v : d.images.values()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }

  write_cifar10_file(tmp.file("copy.bin"), d);
  CHECK(read_bytes(tmp.file("copy.bin")) == bytes);
}

TEST_CASE("single record file loads as one sample") {
  TempDir tmp;
  write_bytes(tmp.file("tiny.bin"), record10(4, 10));
  Dataset d = load_cifar10_file(tmp.file("tiny.bin"), Split::Val);
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 4);
  CHECK(d.split == Split::Val);
}

TEST_CASE("10-class directory layout concatenates the five train files") {
  TempDir tmp;
  for (int i = 1; i <= 5; ++i) {
    write_bytes(tmp.file("data_batch_" + std::to_string(i) + ".bin"),
                concat({record10(static_cast<unsigned char>(i % 10), 5),
                        record10(static_cast<unsigned char>((i + 1) % 10), 6)}));
  }
  write_bytes(tmp.file("test_batch.bin"),
              concat({record10(1, 0), record10(2, 0), record10(3, 0)}));

  DatasetPair pair = load_cifar10(tmp.path.string());
  CHECK(pair.train.size() == 10);
  CHECK(pair.val.size() == 3);
  CHECK(pair.train.split == Split::Train);
  CHECK(pair.val.split == Split::Val);
  CHECK(pair.train.labels == std::vector<int>{1, 2, 2, 3, 3, 4, 4, 5, 5, 6});
  CHECK(pair.val.labels == std::vector<int>{1, 2, 3});
}

TEST_CASE("malformed files are rejected with the reason") {
  TempDir tmp;
  write_bytes(tmp.file("short.bin"),
              std::vector<unsigned char>(100, 0));
  CHECK_THROWS_WITH_AS(load_cifar10_file(tmp.file("short.bin"), Split::Train),
                       doctest::Contains("not a positive multiple"), Error);

  write_bytes(tmp.file("empty.bin"), {});
  CHECK_THROWS_WITH_AS(load_cifar10_file(tmp.file("empty.bin"), Split::Train),
                       doctest::Contains("not a positive multiple"), Error);

  CHECK_THROWS_WITH_AS(load_cifar10_file(tmp.file("absent.bin"), Split::Train),
                       doctest::Contains("cannot open"), Error);

  auto corrupt = concat({record10(3, 0), record10(12, 0)});
  write_bytes(tmp.file("corrupt.bin"), corrupt);
  CHECK_THROWS_WITH_AS(load_cifar10_file(tmp.file("corrupt.bin"), Split::Train),
                       doctest::Contains("byte offset 3073"), Error);
  CHECK_THROWS_WITH_AS(load_cifar10_file(tmp.file("corrupt.bin"), Split::Train),
                       doctest::Contains("label byte 12"), Error);
}

TEST_CASE("100-class records carry coarse and fine labels") {
  TempDir tmp;
  std::vector<unsigned char> bytes;
  bytes.push_back(3);   // coarse
  bytes.push_back(42);  // fine
  for (unsigned j = 0; j < 3072; ++j) bytes.push_back(static_cast<unsigned char>(j % 251));
  bytes.push_back(17);
  bytes.push_back(99);
  for (unsigned j = 0; j < 3072; ++j) bytes.push_back(static_cast<unsigned char>(j % 256));
  write_bytes(tmp.file("train.bin"), bytes);
  write_bytes(tmp.file("test.bin"), bytes);

  DatasetPair pair = load_cifar100(tmp.path.string());
  CHECK(pair.train.size() == 2);
  CHECK(pair.train.class_count == 100);
  CHECK(pair.train.labels == std::vector<int>{42, 99});
  CHECK(pair.train.coarse_labels == std::vector<int>{3, 17});

  write_cifar100_file(tmp.file("copy.bin"), pair.train);
  CHECK(read_bytes(tmp.file("copy.bin")) == bytes);

  std::vector<unsigned char> bad = bytes;
  bad[1] = 200;  // fine label out of range
  write_bytes(tmp.file("bad.bin"), bad);
  CHECK_THROWS_WITH_AS(load_cifar100_file(tmp.file("bad.bin"), Split::Train),
                       doctest::Contains("label byte 200"), Error);
}

TEST_CASE("horizontal flip reverses rows and is an involution") {
  Tensor x({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor f = flip_horizontal(x);
  CHECK(f.values() == std::vector<double>{4, 3, 2, 1, 8, 7, 6, 5});
  Tensor ff = flip_horizontal(f);
  CHECK(ff.values() == x.values());
  CHECK_THROWS_AS(flip_horizontal(Tensor({2, 3})), Error);
}

TEST_CASE("train augmentation flips some images and normalizes") {
  const std::size_t n = 16;
  Batch b;
  b.images = Tensor({n, 1, 1, 4});
  b.labels.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      b.images[i * 4 + j] = static_cast<double>(i * 4 + j);
    }
  }
  Normalization identity{{0.0}, {1.0}};

  Rng rng(5);
  Batch out = augment(b, Split::Train, identity, rng);
  Rng rng2(5);
  Batch out2 = augment(b, Split::Train, identity, rng2);
  CHECK(out.images.values() == out2.images.values());  // seeded determinism

  int flipped = 0, kept = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = b.images.values().data() + i * 4;
    const double* got = out.images.values().data() + i * 4;
    const bool is_kept = std::equal(src, src + 4, got);
    bool is_flipped = true;
    for (std::size_t j = 0; j < 4; ++j) is_flipped &= (got[j] == src[3 - j]);
    REQUIRE((is_kept || is_flipped));
    flipped += is_flipped;
    kept += is_kept;
  }
  CHECK(flipped > 0);
  CHECK(kept > 0);
}

TEST_CASE("val batches are never flipped and leave the generator alone") {
  Batch b;
  b.images = Tensor({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  b.labels = {0, 1};
  Normalization norm{{2.0}, {4.0}};

  Rng used(9);
  Rng untouched(9);
  Batch a1 = augment(b, Split::Val, norm, used);
  Batch a2 = augment(b, Split::Val, norm, used);
  CHECK(a1.images.values() == a2.images.values());
  CHECK(a1.images[0] == (1.0 - 2.0) / 4.0);
  CHECK(a1.images[7] == (8.0 - 2.0) / 4.0);
  CHECK(used.next_u64() == untouched.next_u64());  // no draws were consumed
}

TEST_CASE("normalization constants recentre the split they came from") {
  Dataset d;
  d.class_count = 2;
  d.split = Split::Train;
  d.images = Tensor({12, 2, 4, 4});
  d.labels.assign(12, 0);
  Rng rng(31);
  for (double& v : d.images.values()) v = 0.3 + 0.7 * rng.uniform();

  Normalization norm = compute_normalization(d);
  REQUIRE(norm.mean.size() == 2);

  Batch all;
  all.images = d.images;
  all.labels = d.labels;
  Rng flips(77);
  Batch out = augment(all, Split::Train, norm, flips);  // flips keep channel stats

  const std::size_t hw = 16, c = 2, n = 12;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = out.images.values().data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) mean += p[k];
    }
    mean /= static_cast<double>(n * hw);
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = out.images.values().data() + (i * c + ch) * hw;
      for (std::size_t k = 0; k < hw; ++k) var += (p[k] - mean) * (p[k] - mean);
    }
    var /= static_cast<double>(n * hw);
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
  }
}

TEST_CASE("epoch orders are permutations, fresh per epoch, stable per seed") {
  const std::size_t n = 32;
  std::vector<std::size_t> e0 = epoch_order(n, 11, 0);
  std::vector<std::size_t> e1 = epoch_order(n, 11, 1);
  CHECK(e0 != e1);
  CHECK(epoch_order(n, 11, 0) == e0);
  CHECK(epoch_order(n, 12, 0) != e0);

  for (auto order : {e0, e1}) {
    std::sort(order.begin(), order.end());
    for (std::size_t i = 0; i < n; ++i) REQUIRE(order[i] == i);
  }
}

TEST_CASE("per-class subsets keep the earliest samples in order") {
  Dataset d;
  d.class_count = 3;
  d.split = Split::Train;
  d.images = Tensor({9, 2});
  d.labels = {0, 1, 0, 2, 1, 0, 2, 1, 2};
  for (std::size_t i = 0; i < 9; ++i) {
    d.images[i * 2] = static_cast<double>(i);
    d.images[i * 2 + 1] = 100.0 + static_cast<double>(i);
  }

  Dataset s = subset_per_class(d, 2);
  CHECK(s.size() == 6);
  CHECK(s.labels == std::vector<int>{0, 1, 0, 2, 1, 2});
  CHECK(s.images[0] == 0.0);   // sample 0
  CHECK(s.images[4] == 2.0);   // sample 2 is the second of class 0
  CHECK(s.images[6] == 3.0);   // sample 3 is the first of class 2
  CHECK_THROWS_AS(subset_per_class(d, 0), Error);
}

TEST_CASE("batches gather rows and respect the size cap") {
  Dataset d = make_synthetic(2, 3, 10, 1);
  const std::size_t idx[] = {4, 0, 7};
  Batch b = take_batch(d, idx);
  CHECK(b.size() == 3);
  CHECK(b.images.shape() == Shape{3, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(b.images[j] == d.images[4 * 3 + j]);
    CHECK(b.images[3 + j] == d.images[0 * 3 + j]);
    CHECK(b.images[6 + j] == d.images[7 * 3 + j]);
  }
  CHECK(b.labels[0] == d.labels[4]);

  std::vector<std::size_t> too_many(129, 0);
  CHECK_THROWS_WITH_AS(take_batch(d, too_many), doctest::Contains("128"), Error);
  CHECK_THROWS_AS(take_batch(d, std::span<const std::size_t>{}), Error);
  const std::size_t oob[] = {10};
  CHECK_THROWS_AS(take_batch(d, oob), Error);
}

TEST_CASE("leading images slice off the front of a dataset") {
  Dataset d = make_synthetic(2, 4, 6, 3);
  Tensor t = leading_images(d, 2);
  CHECK(t.shape() == Shape{2, 4});
  for (std::size_t i = 0; i < 8; ++i) CHECK(t[i] == d.images[i]);
  CHECK_THROWS_AS(leading_images(d, 7), Error);
  CHECK_THROWS_AS(leading_images(d, 0), Error);
}

TEST_CASE("data root comes from the environment") {
  ::unsetenv("DSLAB_DATA_DIR");
  CHECK_FALSE(data_root().has_value());
  ::setenv("DSLAB_DATA_DIR", "/somewhere/data", 1);
  REQUIRE(data_root().has_value());
  CHECK(*data_root() == "/somewhere/data");
  ::unsetenv("DSLAB_DATA_DIR");
}

}  // TEST_SUITE
