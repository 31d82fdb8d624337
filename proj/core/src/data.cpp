#include "dslab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

namespace dslab {

namespace {

constexpr std::size_t kPixels = 3 * 32 * 32;

std::vector<unsigned char> read_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(std::string(what) + ": cannot open " + path);
  }
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

Dataset load_records(const std::string& path, Split split, int classes) {
  const char* what = classes == 10 ? "cifar10" : "cifar100";
  const std::size_t label_bytes = classes == 10 ? 1 : 2;
  const std::size_t record = label_bytes + kPixels;

  std::vector<unsigned char> bytes = read_file(path, what);
  if (bytes.empty() || bytes.size() % record != 0) {
    throw Error(std::string(what) + ": " + path + " has size " +
                std::to_string(bytes.size()) + ", not a positive multiple of " +
                std::to_string(record));
  }

  const std::size_t n = bytes.size() / record;
  Dataset d;
  d.class_count = classes;
  d.split = split;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.resize(n);
  if (classes == 100) d.coarse_labels.resize(n);

  std::vector<double>& px = d.images.values();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * record;
    const unsigned char fine = bytes[off + label_bytes - 1];
    if (static_cast<int>(fine) >= classes) {
      throw Error(std::string(what) + ": corrupt record in " + path +
                  " at byte offset " + std::to_string(off) + ", label byte " +
                  std::to_string(static_cast<int>(fine)) + " out of range [0," +
                  std::to_string(classes - 1) + "]");
    }
    d.labels[i] = fine;
    if (classes == 100) d.coarse_labels[i] = bytes[off];
    for (std::size_t j = 0; j < kPixels; ++j) {
      px[i * kPixels + j] =
          static_cast<double>(bytes[off + label_bytes + j]) / 255.0;
    }
  }
  return d;
}

void write_records(const std::string& path, const Dataset& d, int classes) {
  const char* what = classes == 10 ? "cifar10" : "cifar100";
  if (!d.images.defined() || d.images.rank() != 4 || d.images.dim(1) != 3 ||
      d.images.dim(2) != 32 || d.images.dim(3) != 32) {
    throw Error(std::string(what) + ": can only write (N,3,32,32) images");
  }
  const std::size_t n = d.images.dim(0);
  if (d.labels.size() != n) {
    throw Error(std::string(what) + ": have " + std::to_string(n) +
                " images but " + std::to_string(d.labels.size()) + " labels");
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(std::string(what) + ": cannot write " + path);
  }
  const std::vector<double>& px = d.images.values();
  std::vector<unsigned char> buf;
  buf.reserve(n * (kPixels + 2));
  for (std::size_t i = 0; i < n; ++i) {
    if (classes == 100) {
      const int coarse = d.coarse_labels.empty() ? 0 : d.coarse_labels[i];
      buf.push_back(static_cast<unsigned char>(coarse));
    }
    buf.push_back(static_cast<unsigned char>(d.labels[i]));
    for (std::size_t j = 0; j < kPixels; ++j) {
      const double v = std::clamp(px[i * kPixels + j], 0.0, 1.0);
      buf.push_back(static_cast<unsigned char>(std::llround(v * 255.0)));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw Error(std::string(what) + ": short write to " + path);
  }
}

Dataset concat_train(std::vector<Dataset> parts) {
  std::size_t n = 0;
  for (const Dataset& p : parts) n += p.size();
  Dataset d;
  d.class_count = parts.front().class_count;
  d.split = Split::Train;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.reserve(n);
  std::size_t at = 0;
  const bool coarse = !parts.front().coarse_labels.empty();
  for (const Dataset& p : parts) {
    std::copy(p.images.values().begin(), p.images.values().end(),
              d.images.values().begin() + static_cast<long>(at));
    at += p.images.numel();
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
    if (coarse) {
      d.coarse_labels.insert(d.coarse_labels.end(), p.coarse_labels.begin(),
                             p.coarse_labels.end());
    }
  }
  return d;
}

}  // namespace

Dataset load_cifar10_file(const std::string& path, Split split) {
  return load_records(path, split, 10);
}

Dataset load_cifar100_file(const std::string& path, Split split) {
  return load_records(path, split, 100);
}

void write_cifar10_file(const std::string& path, const Dataset& d) {
  write_records(path, d, 10);
}

void write_cifar100_file(const std::string& path, const Dataset& d) {
  write_records(path, d, 100);
}

DatasetPair load_cifar10(const std::string& dir) {
  std::vector<Dataset> parts;
  parts.reserve(5);
  for (int i = 1; i <= 5; ++i) {
    parts.push_back(load_cifar10_file(
        dir + "/data_batch_" + std::to_string(i) + ".bin", Split::Train));
  }
  DatasetPair pair;
  pair.train = concat_train(std::move(parts));
  pair.val = load_cifar10_file(dir + "/test_batch.bin", Split::Val);
  return pair;
}

DatasetPair load_cifar100(const std::string& dir) {
  DatasetPair pair;
  pair.train = load_cifar100_file(dir + "/train.bin", Split::Train);
  pair.val = load_cifar100_file(dir + "/test.bin", Split::Val);
  return pair;
}

std::optional<std::string> data_root() {
  const char* env = std::getenv("DSLAB_DATA_DIR");
  if (env == nullptr || *env == '\0') return std::nullopt;
  return std::string(env);
}

Dataset make_synthetic(int classes, std::size_t dim, std::size_t n,
                       std::uint64_t seed, double spread) {
  if (classes < 2 || dim == 0 || n == 0) {
    throw Error("synthetic: need >= 2 classes, nonzero dim and n");
  }
  Rng rng(seed, "synthetic");
  std::vector<double> centers(static_cast<std::size_t>(classes) * dim);
  for (double& c : centers) c = spread * rng.normal();

  Dataset d;
  d.class_count = classes;
  d.split = Split::Train;
  d.images = Tensor({n, dim});
  d.labels.resize(n);
  std::vector<double>& x = d.images.values();
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(classes));
    d.labels[i] = k;
    for (std::size_t j = 0; j < dim; ++j) {
      x[i * dim + j] =
          centers[static_cast<std::size_t>(k) * dim + j] + rng.normal();
    }
  }
  return d;
}

Dataset subset_per_class(const Dataset& d, std::size_t per_class) {
  if (per_class == 0) throw Error("subset: per-class count must be positive");
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.class_count), 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t& c = counts[static_cast<std::size_t>(d.labels[i])];
    if (c < per_class) {
      ++c;
      keep.push_back(i);
    }
  }
  const std::size_t per_row = d.images.numel() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = keep.size();
  Dataset out;
  out.class_count = d.class_count;
  out.split = d.split;
  out.images = Tensor(std::move(shape));
  out.labels.reserve(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const std::size_t i = keep[r];
    std::copy_n(d.images.values().begin() + static_cast<long>(i * per_row),
                per_row,
                out.images.values().begin() + static_cast<long>(r * per_row));
    out.labels.push_back(d.labels[i]);
    if (!d.coarse_labels.empty()) {
      out.coarse_labels.push_back(d.coarse_labels[i]);
    }
  }
  return out;
}

Dataset slice_dataset(const Dataset& d, std::size_t begin, std::size_t count) {
  if (count == 0) throw Error("slice: row count must be positive");
  if (begin + count > d.size()) {
    throw Error("slice: rows [" + std::to_string(begin) + ", " +
                std::to_string(begin + count) + ") exceed dataset of " +
                std::to_string(d.size()));
  }
  const std::size_t per_row = d.images.numel() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = count;
  Dataset out;
  out.class_count = d.class_count;
  out.split = d.split;
  out.images = Tensor(std::move(shape));
  std::copy_n(d.images.values().begin() + static_cast<long>(begin * per_row),
              count * per_row, out.images.values().begin());
  out.labels.assign(d.labels.begin() + static_cast<long>(begin),
                    d.labels.begin() + static_cast<long>(begin + count));
  if (!d.coarse_labels.empty()) {
    out.coarse_labels.assign(
        d.coarse_labels.begin() + static_cast<long>(begin),
        d.coarse_labels.begin() + static_cast<long>(begin + count));
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                     std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed, "epoch/" + std::to_string(epoch));
  rng.shuffle(order);
  return order;
}

Batch take_batch(const Dataset& d, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error("batch: no indices");
  if (indices.size() > 128) {
    throw Error("batch: size " + std::to_string(indices.size()) +
                " exceeds the 128-sample cap");
  }
  const std::size_t per_row = d.images.numel() / d.images.dim(0);
  Shape shape = d.images.shape();
  shape[0] = indices.size();
  Batch b;
  b.images = Tensor(std::move(shape));
  b.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= d.size()) {
      throw Error("batch: index " + std::to_string(i) + " out of range for " +
                  std::to_string(d.size()) + " samples");
    }
    std::copy_n(d.images.values().begin() + static_cast<long>(i * per_row),
                per_row,
                b.images.values().begin() + static_cast<long>(r * per_row));
    b.labels.push_back(d.labels[i]);
  }
  return b;
}

Tensor leading_images(const Dataset& d, std::size_t n) {
  if (n == 0 || n > d.images.dim(0)) {
    throw Error("dataset: cannot take " + std::to_string(n) + " of " +
                std::to_string(d.images.dim(0)) + " samples");
  }
  Shape shape = d.images.shape();
  shape[0] = n;
  const std::size_t per_row = d.images.numel() / d.images.dim(0);
  std::vector<double> vals(d.images.values().begin(),
                           d.images.values().begin() +
                               static_cast<long>(n * per_row));
  return Tensor(std::move(shape), std::move(vals));
}

Normalization compute_normalization(const Dataset& train) {
  const Tensor& x = train.images;
  if (!x.defined() || (x.rank() != 4 && x.rank() != 2)) {
    throw Error("normalization: expected (N,C,H,W) or (N,D) data");
  }
  Normalization norm;
  if (x.rank() == 4) {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    norm.mean.assign(c, 0.0);
    norm.stddev.assign(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = x.values().data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) norm.mean[ch] += p[k];
      }
    }
    const double count = static_cast<double>(n * hw);
    for (std::size_t ch = 0; ch < c; ++ch) norm.mean[ch] /= count;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = x.values().data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          const double dlt = p[k] - norm.mean[ch];
          norm.stddev[ch] += dlt * dlt;
        }
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      norm.stddev[ch] = std::sqrt(norm.stddev[ch] / count);
      if (norm.stddev[ch] < 1e-12) norm.stddev[ch] = 1.0;
    }
  } else {
    const std::size_t n = x.dim(0), dim = x.dim(1);
    norm.mean.assign(dim, 0.0);
    norm.stddev.assign(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) norm.mean[j] += x[i * dim + j];
    }
    for (std::size_t j = 0; j < dim; ++j) norm.mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double dlt = x[i * dim + j] - norm.mean[j];
        norm.stddev[j] += dlt * dlt;
      }
    }
    for (std::size_t j = 0; j < dim; ++j) {
      norm.stddev[j] = std::sqrt(norm.stddev[j] / static_cast<double>(n));
      if (norm.stddev[j] < 1e-12) norm.stddev[j] = 1.0;
    }
  }
  return norm;
}

Tensor flip_horizontal(const Tensor& images) {
  if (!images.defined() || images.rank() != 4) {
    throw Error("flip: expected (N,C,H,W) images");
  }
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2),
                    w = images.dim(3);
  Tensor out(images.shape());
  const std::vector<double>& src = images.values();
  std::vector<double>& dst = out.values();
  for (std::size_t plane = 0; plane < n * c * h; ++plane) {
    const double* s = src.data() + plane * w;
    double* t = dst.data() + plane * w;
    for (std::size_t x = 0; x < w; ++x) t[x] = s[w - 1 - x];
  }
  return out;
}

Batch augment(const Batch& batch, Split split, const Normalization& norm,
              Rng& rng) {
  Batch out;
  out.labels = batch.labels;
  Tensor img = batch.images.clone();
  std::vector<double>& v = img.values();

  if (img.rank() == 4) {
    const std::size_t n = img.dim(0), c = img.dim(1), h = img.dim(2),
                      w = img.dim(3);
    if (norm.mean.size() != c || norm.stddev.size() != c) {
      throw Error("augment: normalization has " +
                  std::to_string(norm.mean.size()) + " channels, images have " +
                  std::to_string(c));
    }
    if (split == Split::Train) {
      std::vector<double> row(w);
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform() >= 0.5) continue;
        for (std::size_t plane = 0; plane < c * h; ++plane) {
          double* p = v.data() + (i * c * h + plane) * w;
          for (std::size_t x = 0; x < w; ++x) row[x] = p[w - 1 - x];
          std::copy(row.begin(), row.end(), p);
        }
      }
    }
    const std::size_t hw = h * w;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double* p = v.data() + (i * c + ch) * hw;
        for (std::size_t k = 0; k < hw; ++k) {
          p[k] = (p[k] - norm.mean[ch]) / norm.stddev[ch];
        }
      }
    }
  } else if (img.rank() == 2) {
    const std::size_t n = img.dim(0), dim = img.dim(1);
    if (norm.mean.size() != dim || norm.stddev.size() != dim) {
      throw Error("augment: normalization has " +
                  std::to_string(norm.mean.size()) + " columns, data has " +
                  std::to_string(dim));
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        v[i * dim + j] = (v[i * dim + j] - norm.mean[j]) / norm.stddev[j];
      }
    }
  } else {
    throw Error("augment: expected rank-2 or rank-4 data");
  }

  out.images = std::move(img);
  return out;
}

}  // namespace dslab
