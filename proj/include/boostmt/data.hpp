#pragma once

// Synthetic class-hierarchical datasets and their text file format.
//
// File layout (one record per line, '#' starts a comment line):
//
//   boostmt-dataset 1
//   dims <d_in>
//   classes <C>
//   samples <n>
//   class <id> <base|val|novel>        C lines, ids 0..C-1
//   data
//   <class id>,<x_1>,...,<x_d>         n lines, reals with 17 significant digits

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "boostmt/errors.hpp"
#include "boostmt/rng.hpp"
#include "boostmt/tensor.hpp"

namespace boostmt {

enum class Split { base, val, novel };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::base: return "base";
    case Split::val: return "val";
    case Split::novel: return "novel";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "base") return Split::base;
  if (s == "val") return Split::val;
  if (s == "novel") return Split::novel;
  throw ValidationError("unknown split '" + s + "'");
}

class Dataset {
 public:
  Dataset() = default;

  // features: [n×d_in]; labels: class id per row; splits: one entry per class.
  Dataset(Tensor features, std::vector<std::size_t> labels, std::vector<Split> class_splits)
      : features_(std::move(features)), labels_(std::move(labels)), splits_(std::move(class_splits)) {
    kernels::require_matrix(features_, "dataset features");
    if (labels_.size() != features_.rows()) {
      throw ValidationError("dataset has " + std::to_string(features_.rows()) + " rows but " +
                            std::to_string(labels_.size()) + " labels");
    }
    by_class_.assign(splits_.size(), {});
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] >= splits_.size()) {
        throw ValidationError("sample " + std::to_string(i) + " has undeclared class " +
                              std::to_string(labels_[i]));
      }
      by_class_[labels_[i]].push_back(i);
    }
    split_index_.assign(splits_.size(), 0);
    for (Split s : {Split::base, Split::val, Split::novel}) {
      auto& cls = split_classes_[static_cast<int>(s)];
      for (std::size_t c = 0; c < splits_.size(); ++c) {
        if (splits_[c] == s) {
          split_index_[c] = cls.size();
          cls.push_back(c);
        }
      }
      auto& idx = split_samples_[static_cast<int>(s)];
      for (std::size_t i = 0; i < labels_.size(); ++i)
        if (splits_[labels_[i]] == s) idx.push_back(i);
    }
  }

  std::size_t dim() const { return features_.cols(); }
  std::size_t sample_count() const { return labels_.size(); }
  std::size_t class_count() const { return splits_.size(); }
  const Tensor& features() const { return features_; }
  std::span<const double> sample(std::size_t i) const { return features_.row(i); }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  Split split_of(std::size_t cls) const { return splits_.at(cls); }
  const std::vector<Split>& class_splits() const { return splits_; }

  // Sample indices of one class, in file order.
  const std::vector<std::size_t>& class_samples(std::size_t cls) const { return by_class_.at(cls); }
  // Sorted class ids of a split.
  const std::vector<std::size_t>& classes(Split s) const { return split_classes_[static_cast<int>(s)]; }
  // Sample indices belonging to a split, ascending.
  const std::vector<std::size_t>& samples(Split s) const { return split_samples_[static_cast<int>(s)]; }
  // Position of a class inside its split's sorted class list (classifier label).
  std::size_t split_index(std::size_t cls) const { return split_index_.at(cls); }

  // Rows gathered into a matrix.
  Tensor gather(std::span<const std::size_t> idx) const {
    Tensor x({idx.size(), dim()});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = sample(idx[i]);
      std::copy(src.begin(), src.end(), x.row(i).begin());
    }
    return x;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.features_ == b.features_ && a.labels_ == b.labels_ && a.splits_ == b.splits_;
  }

 private:
  Tensor features_;
  std::vector<std::size_t> labels_;
  std::vector<Split> splits_;
  std::vector<std::vector<std::size_t>> by_class_;
  std::vector<std::size_t> split_index_;
  std::vector<std::size_t> split_classes_[3];
  std::vector<std::size_t> split_samples_[3];
};

struct GeneratorConfig {
  std::size_t dim = 32;
  std::size_t superclasses = 6;
  std::size_t classes_per_superclass = 8;
  std::size_t samples_per_class = 200;
  double sigma_super = 4.0;
  double sigma_class = 1.0;
  double sigma_sample = 0.5;
  std::size_t base_classes = 32;
  std::size_t val_classes = 8;
  std::size_t novel_classes = 8;
  std::uint64_t seed = 0;

  std::size_t total_classes() const { return superclasses * classes_per_superclass; }

  void validate() const {
    if (dim == 0 || superclasses == 0 || classes_per_superclass == 0 || samples_per_class == 0) {
      throw ValidationError("generator: counts must be positive");
    }
    if (!(sigma_super > 0.0 && sigma_class > 0.0 && sigma_sample > 0.0)) {
      throw ValidationError("generator: all spreads must be positive");
    }
    if (base_classes + val_classes + novel_classes != total_classes()) {
      throw ValidationError("generator: split counts " + std::to_string(base_classes) + "+" +
                            std::to_string(val_classes) + "+" + std::to_string(novel_classes) +
                            " do not sum to " + std::to_string(total_classes()) + " classes");
    }
    if (base_classes == 0 || novel_classes == 0) {
      throw ValidationError("generator: base and novel splits must be non-empty");
    }
  }
};

// Gaussian hierarchy: superclass means ~ N(0, s_super^2 I), class means around
// their superclass, samples around their class. Class ids run superclass-major.
// Splits take consecutive class ids (base first, then val, then novel), which
// are whole superclasses whenever every split count is a multiple of
// classes_per_superclass.
inline Dataset generate_synthetic(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t C = cfg.total_classes();
  const std::size_t n = C * cfg.samples_per_class;

  Tensor x({n, cfg.dim});
  std::vector<std::size_t> labels(n);
  std::vector<double> super_mean(cfg.dim), class_mean(cfg.dim);
  std::size_t row = 0;
  for (std::size_t s = 0; s < cfg.superclasses; ++s) {
    for (double& v : super_mean) v = rng.normal(0.0, cfg.sigma_super);
    for (std::size_t k = 0; k < cfg.classes_per_superclass; ++k) {
      const std::size_t cls = s * cfg.classes_per_superclass + k;
      for (std::size_t d = 0; d < cfg.dim; ++d) class_mean[d] = rng.normal(super_mean[d], cfg.sigma_class);
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i, ++row) {
        auto r = x.row(row);
        for (std::size_t d = 0; d < cfg.dim; ++d) r[d] = rng.normal(class_mean[d], cfg.sigma_sample);
        labels[row] = cls;
      }
    }
  }

  std::vector<Split> splits(C);
  for (std::size_t i = 0; i < C; ++i) {
    splits[i] = i < cfg.base_classes                     ? Split::base
                : i < cfg.base_classes + cfg.val_classes ? Split::val
                                                         : Split::novel;
  }
  return Dataset(std::move(x), std::move(labels), std::move(splits));
}

// True when every split boundary falls on a superclass boundary.
inline bool splits_follow_superclasses(const GeneratorConfig& cfg) {
  const std::size_t m = cfg.classes_per_superclass;
  return cfg.base_classes % m == 0 && cfg.val_classes % m == 0 && cfg.novel_classes % m == 0;
}

inline void save_dataset(const Dataset& ds, std::ostream& os) {
  os << "boostmt-dataset 1\n";
  os << "dims " << ds.dim() << "\n";
  os << "classes " << ds.class_count() << "\n";
  os << "samples " << ds.sample_count() << "\n";
  for (std::size_t c = 0; c < ds.class_count(); ++c) os << "class " << c << ' ' << to_string(ds.split_of(c)) << "\n";
  os << "data\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < ds.sample_count(); ++i) {
    os << ds.label(i);
    for (double v : ds.sample(i)) os << ',' << v;
    os << '\n';
  }
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dataset to " + path);
  save_dataset(ds, os);
  if (!os) throw std::runtime_error("write failed for " + path);
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  // Next non-comment line; throws at end of input. Every line must end in a
  // newline, so a file cut off mid-line is reported rather than read short.
  std::string next(const char* expecting) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (is_.eof()) fail("line is not terminated (file truncated?)");
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] == '#') continue;
      return line;
    }
    fail(std::string("unexpected end of file, expecting ") + expecting);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("line " + std::to_string(line_no_) + ": " + msg);
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::istream& is_;
  std::size_t line_no_ = 0;
};

inline std::size_t parse_count(const LineReader& r, const std::string& tok) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(tok, &pos);
  } catch (const std::exception&) {
    r.fail("expected a non-negative integer, got '" + tok + "'");
  }
  if (pos != tok.size() || tok.empty() || tok[0] == '-') r.fail("expected a non-negative integer, got '" + tok + "'");
  return static_cast<std::size_t>(v);
}

inline std::size_t keyed_count(LineReader& r, const std::string& key) {
  std::istringstream ls(r.next(key.c_str()));
  std::string k, v, extra;
  if (!(ls >> k >> v) || k != key || (ls >> extra)) r.fail("expected '" + key + " <count>'");
  return parse_count(r, v);
}

}  // namespace detail

inline Dataset load_dataset(std::istream& is) {
  detail::LineReader r(is);
  if (r.next("header") != "boostmt-dataset 1") r.fail("missing 'boostmt-dataset 1' header");
  const std::size_t dims = detail::keyed_count(r, "dims");
  const std::size_t classes = detail::keyed_count(r, "classes");
  const std::size_t samples = detail::keyed_count(r, "samples");
  if (dims == 0 || classes == 0 || samples == 0) r.fail("dims, classes and samples must be positive");

  std::vector<Split> splits(classes);
  std::vector<bool> seen(classes, false);
  std::size_t declared = 0;
  for (std::string line = r.next("class line or 'data'"); line != "data"; line = r.next("class line or 'data'")) {
    std::istringstream ls(line);
    std::string k, id, split, extra;
    if (!(ls >> k >> id >> split) || k != "class" || (ls >> extra)) r.fail("expected 'class <id> <split>' or 'data'");
    const std::size_t cls = detail::parse_count(r, id);
    if (cls >= classes) r.fail("class id " + id + " out of range");
    Split s;
    try {
      s = parse_split(split);
    } catch (const ValidationError& e) {
      r.fail(e.what());
    }
    if (seen[cls]) {
      if (splits[cls] != s) {
        throw ValidationError("class " + std::to_string(cls) + " assigned to both " +
                              to_string(splits[cls]) + " and " + to_string(s) + " splits");
      }
      r.fail("class " + std::to_string(cls) + " declared twice");
    }
    seen[cls] = true;
    splits[cls] = s;
    ++declared;
  }
  if (declared != classes) {
    r.fail(std::to_string(declared) + " class lines for " + std::to_string(classes) + " classes");
  }

  Tensor x({samples, dims});
  std::vector<std::size_t> labels(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::string line = r.next("sample line");
    std::size_t field = 0, start = 0;
    auto row = x.row(i);
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string tok = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (field == 0) {
        labels[i] = detail::parse_count(r, tok);
        if (labels[i] >= classes) r.fail("sample class " + tok + " was not declared");
      } else {
        if (field > dims) r.fail("too many fields, expected " + std::to_string(dims + 1));
        std::size_t pos = 0;
        double v = 0.0;
        try {
          v = std::stod(tok, &pos);
        } catch (const std::exception&) {
          r.fail("bad real '" + tok + "' at field " + std::to_string(field));
        }
        if (pos != tok.size() || !std::isfinite(v)) r.fail("bad real '" + tok + "' at field " + std::to_string(field));
        row[field - 1] = v;
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != dims + 1) {
      r.fail("expected " + std::to_string(dims + 1) + " fields, got " + std::to_string(field));
    }
  }
  std::string trailing;
  while (std::getline(is, trailing)) {
    if (!trailing.empty() && trailing[0] != '#') r.fail("unexpected content after " + std::to_string(samples) + " samples");
  }
  return Dataset(std::move(x), std::move(labels), std::move(splits));
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path);
  return load_dataset(is);
}

// Smallest per-class sample count inside a split (0 for an empty split).
inline std::size_t min_class_size(const Dataset& ds, Split s) {
  std::size_t m = 0;
  bool first = true;
  for (std::size_t c : ds.classes(s)) {
    const std::size_t k = ds.class_samples(c).size();
    m = first ? k : std::min(m, k);
    first = false;
  }
  return m;
}

}  // namespace boostmt
