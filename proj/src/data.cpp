#include "pactune/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "pactune/errors.hpp"

namespace pactune {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const std::size_t d = dim();
  Dataset out;
  out.num_classes = num_classes;
  out.x = Tensor::zeros({rows.size(), d});
  out.y.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(rows[i] * d), d,
                out.x.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    out.y.push_back(y[rows[i]]);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int label : y) ++counts.at(static_cast<std::size_t>(label));
  return counts;
}

namespace {

std::size_t signal_dims(const Generator& g) {
  if (const auto* b = std::get_if<Blobs>(&g)) return b->d;
  if (std::holds_alternative<TwoSpirals>(g)) return 2;
  return std::get<Xor>(g).d;
}

std::size_t class_count(const Generator& g) {
  if (const auto* b = std::get_if<Blobs>(&g)) return b->k;
  return 2;
}

void sample_point(const Generator& g, int label, Rng& rng, std::span<double> out) {
  if (const auto* b = std::get_if<Blobs>(&g)) {
    const double angle = 2.0 * std::numbers::pi * label / static_cast<double>(b->k);
    for (std::size_t j = 0; j < b->d; ++j) out[j] = b->std * rng.normal();
    out[0] += 0.5 * b->separation * std::cos(angle);
    if (b->d > 1) out[1] += 0.5 * b->separation * std::sin(angle);
  } else if (const auto* s = std::get_if<TwoSpirals>(&g)) {
    const double theta = std::sqrt(rng.uniform()) * 2.5 * std::numbers::pi;
    const double r = theta / std::numbers::pi;
    const double sign = label == 0 ? 1.0 : -1.0;
    out[0] = sign * r * std::cos(theta) + s->noise * rng.normal();
    out[1] = sign * r * std::sin(theta) + s->noise * rng.normal();
  } else {
    const auto& xr = std::get<Xor>(g);
    int negatives = 0;
    for (std::size_t j = 0; j < xr.d; ++j) {
      out[j] = rng.uniform(-1.0, 1.0);
      if (out[j] < 0.0) ++negatives;
    }
    // Flip the first coordinate when the parity disagrees with the requested
    // label; the result is still uniform on the matching orthants.
    if ((negatives % 2) != label) out[0] = -out[0];
    for (std::size_t j = 0; j < xr.d; ++j) out[j] += xr.noise * rng.normal();
  }
}

void apply_transform(const Transform& t, std::size_t signal, std::span<double> row) {
  if (t.rotation_rad != 0.0 && signal >= 2) {
    const double c = std::cos(t.rotation_rad), s = std::sin(t.rotation_rad);
    const double a = row[0], b = row[1];
    row[0] = c * a - s * b;
    row[1] = s * a + c * b;
  }
  if (t.shift.size() > signal) throw std::invalid_argument("transform: shift longer than the signal dimensions");
  for (std::size_t j = 0; j < t.shift.size(); ++j) row[j] += t.shift[j];
}

}  // namespace

Dataset generate(const DatasetSpec& spec) {
  if (const auto* csv = std::get_if<CsvFile>(&spec.generator)) return load_csv(csv->path, csv->label_column).data;
  if (spec.n < 1) throw std::invalid_argument("generate: n must be at least 1");
  const std::size_t signal = signal_dims(spec.generator);
  const std::size_t k = class_count(spec.generator);
  if (signal < 1) throw std::invalid_argument("generate: d must be at least 1");
  if (k < 2) throw std::invalid_argument("generate: need at least 2 classes");
  const std::size_t d = signal + spec.nuisance_dims;

  Rng rng(spec.seed);
  Dataset out;
  out.num_classes = k;
  out.x = Tensor::zeros({spec.n, d});
  out.y.resize(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int label = static_cast<int>(i % k);
    std::span<double> row(&out.x[i * d], d);
    sample_point(spec.generator, label, rng, row.first(signal));
    apply_transform(spec.transform, signal, row);
    for (std::size_t j = signal; j < d; ++j) row[j] = rng.normal();
    out.y[i] = label;
  }
  return out;
}

FewShotSplit few_shot_sample(const Dataset& data, std::size_t n_shot, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (n_shot == 0) throw std::invalid_argument("few_shot_sample: n_shot must be positive");
  if (n_shot >= n)
    throw std::invalid_argument("few_shot_sample: n_shot=" + std::to_string(n_shot) + " leaves no dev rows out of " +
                                std::to_string(n));

  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(data.y[i])].push_back(i);

  // Largest-remainder apportionment of n_shot over classes.
  const std::size_t k = by_class.size();
  std::vector<std::size_t> quota(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = static_cast<double>(n_shot) * static_cast<double>(by_class[c].size()) / static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < n_shot; ++i, ++assigned) ++quota[remainders[i % k].second];

  Rng rng(seed);
  std::vector<bool> chosen(n, false);
  for (std::size_t c = 0; c < k; ++c) {
    auto rows = by_class[c];
    rng.shuffle(rows);
    for (std::size_t i = 0; i < std::min(quota[c], rows.size()); ++i) chosen[rows[i]] = true;
  }

  FewShotSplit split;
  std::vector<std::size_t> dev_rows;
  for (std::size_t i = 0; i < n; ++i) (chosen[i] ? split.train_rows : dev_rows).push_back(i);
  split.train = data.subset(split.train_rows);
  split.dev = data.subset(dev_rows);
  return split;
}

Standardizer fit_standardizer(const Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  if (n == 0) {
    s.std.assign(d, 1.0);
    return s;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[i * d + j];
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - s.mean[j];
      s.std[j] += c * c;
    }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), 1e-12);
  return s;
}

void apply_standardizer(const Standardizer& s, Tensor& x) {
  const std::size_t n = x.rows(), d = x.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = (x[i * d + j] - s.mean[j]) / s.std[j];
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

LoadedCsv load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: " + path.string() + " has no header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  std::size_t label_idx = header.size() - 1;
  if (!label_column.empty()) {
    auto it = std::find(header.begin(), header.end(), label_column);
    if (it == header.end())
      throw std::invalid_argument("load_csv: label column '" + label_column + "' not found in " + path.string());
    label_idx = static_cast<std::size_t>(it - header.begin());
  }
  if (header.size() < 2) throw std::invalid_argument("load_csv: need at least one feature column and a label");

  LoadedCsv result;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (j != label_idx) result.feature_names.push_back(header[j]);
  const std::size_t d = header.size() - 1;

  std::vector<double> features;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::invalid_argument("load_csv: row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                  " fields, expected " + std::to_string(header.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const std::string cell = trim(fields[j]);
      const auto fail = [&] {
        return std::invalid_argument("load_csv: non-numeric cell at row " + std::to_string(row) + ", column '" +
                                     header[j] + "': '" + cell + "'");
      };
      if (j == label_idx) {
        int v = 0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || p != cell.data() + cell.size() || v < 0) throw fail();
        labels.push_back(v);
      } else {
        double v = 0.0;
        auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || p != cell.data() + cell.size() || !std::isfinite(v)) throw fail();
        features.push_back(v);
      }
    }
  }

  const std::size_t n = labels.size();
  result.data.x = Tensor::matrix(n, d, std::move(features));
  result.data.y = std::move(labels);
  int max_label = -1;
  for (int v : result.data.y) max_label = std::max(max_label, v);
  result.data.num_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
  result.transform = fit_standardizer(result.data.x);
  apply_standardizer(result.transform, result.data.x);
  return result;
}

std::string to_csv_string(const Dataset& data) {
  std::ostringstream out;
  const std::size_t d = data.dim();
  for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
  out << "label\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out << data.x[i * d + j] << ',';
    out << data.y[i] << '\n';
  }
  return out.str();
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_csv: cannot open " + path.string());
  out << to_csv_string(data);
  if (!out) throw IoError("write_csv: write failed for " + path.string());
}

}  // namespace pactune
