#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pactune/rng.hpp"
#include "pactune/tensor.hpp"

namespace pactune {

struct Dataset {
  Tensor x = Tensor::zeros({0, 0});  // n x d
  std::vector<int> y;
  std::size_t num_classes = 0;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
  Dataset subset(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> class_counts() const;
};

/// Rotation in the plane of the first two signal coordinates followed by a
/// shift of the signal coordinates. Used to build a related target task.
struct Transform {
  double rotation_rad = 0.0;
  std::vector<double> shift;  // empty = no shift
};

struct Blobs {
  std::size_t k = 2;
  std::size_t d = 2;
  double separation = 4.0;
  double std = 1.0;
};

struct TwoSpirals {
  double noise = 0.1;
};

struct Xor {
  std::size_t d = 2;
  double noise = 0.0;
};

struct CsvFile {
  std::filesystem::path path;
  std::string label_column;  // empty = last column
};

using Generator = std::variant<Blobs, TwoSpirals, Xor, CsvFile>;

struct DatasetSpec {
  Generator generator = Blobs{};
  std::size_t n = 100;
  std::uint64_t seed = 0;
  /// Pure N(0, 1) feature columns appended after the signal coordinates.
  std::size_t nuisance_dims = 0;
  Transform transform;
};

struct TransferPair {
  DatasetSpec source;
  DatasetSpec target;
};

/// Builds a dataset. Labels are assigned round-robin, so class counts are
/// balanced to within one. Generated features are not standardized.
///
/// Blobs: class c has mean (separation/2)(cos 2pi c/k, sin 2pi c/k, 0, ...)
/// and isotropic std. TwoSpirals: two interleaved arms in 2-D with isotropic
/// feature noise. Xor: coordinates uniform in [-1, 1]^d, label = parity of
/// the number of negative coordinates, then feature noise is added.
Dataset generate(const DatasetSpec& spec);

struct FewShotSplit {
  Dataset train;
  Dataset dev;
  std::vector<std::size_t> train_rows;  // indices into the source dataset
};

/// Stratified sample without replacement; class quotas are proportional to
/// class frequency (largest-remainder rounding). The remainder becomes the
/// dev set. Rejects n_shot == 0 and n_shot >= |dataset|.
FewShotSplit few_shot_sample(const Dataset& data, std::size_t n_shot, std::uint64_t seed);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;  // floored at 1e-12
};

struct LoadedCsv {
  Dataset data;
  Standardizer transform;
  std::vector<std::string> feature_names;
};

/// Reads a header + numeric rows CSV. Fields may be wrapped in double quotes
/// ("" inside a quoted field is a literal quote). Features are z-scored per
/// column; labels must be non-negative integers.
LoadedCsv load_csv(const std::filesystem::path& path, const std::string& label_column = {});

/// Writes features as x0..x{d-1} plus a final `label` column, doubles at 17
/// significant digits, no quoting.
void write_csv(const std::filesystem::path& path, const Dataset& data);
std::string to_csv_string(const Dataset& data);

Standardizer fit_standardizer(const Tensor& x);
void apply_standardizer(const Standardizer& s, Tensor& x);

}  // namespace pactune
