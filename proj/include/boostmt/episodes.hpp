#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "boostmt/data.hpp"
#include "boostmt/errors.hpp"
#include "boostmt/rng.hpp"

namespace boostmt {

struct EpisodeShape {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 15;

  friend bool operator==(const EpisodeShape&, const EpisodeShape&) = default;
};

// One N-way K-shot episode. Rows are grouped by episode label: support rows
// [n*K, (n+1)*K) and query rows [n*Q, (n+1)*Q) belong to label n.
struct Task {
  EpisodeShape shape;
  Tensor support_x;                        // [N*K × d_in]
  std::vector<std::size_t> support_y;      // episode labels
  std::vector<std::size_t> support_ids;    // dataset sample indices
  Tensor query_x;                          // [N*Q × d_in]
  std::vector<std::size_t> query_y;
  std::vector<std::size_t> query_ids;
  std::vector<std::size_t> class_map;      // episode label -> dataset class id

  friend bool operator==(const Task&, const Task&) = default;
};

// Classes are drawn uniformly without replacement and relabeled by ascending
// class id; each class then contributes K+Q distinct samples, the first K to
// the support set.
inline Task sample_task(const Dataset& ds, Split split, EpisodeShape shape, Rng& rng) {
  const auto& classes = ds.classes(split);
  if (shape.ways == 0 || shape.shots == 0 || shape.queries == 0) {
    throw EpisodeShapeError("episode shape needs N, K, Q >= 1");
  }
  if (classes.size() < shape.ways) {
    throw CapacityError(std::string(to_string(split)) + " split has " + std::to_string(classes.size()) +
                        " classes, episode needs " + std::to_string(shape.ways));
  }
  const std::size_t per_class = shape.shots + shape.queries;

  std::vector<std::size_t> chosen;
  for (std::size_t i : rng.choose(classes.size(), shape.ways)) chosen.push_back(classes[i]);
  std::sort(chosen.begin(), chosen.end());

  Task t;
  t.shape = shape;
  t.class_map = chosen;
  for (std::size_t label = 0; label < chosen.size(); ++label) {
    const auto& pool = ds.class_samples(chosen[label]);
    if (pool.size() < per_class) {
      throw CapacityError("class " + std::to_string(chosen[label]) + " has " + std::to_string(pool.size()) +
                          " samples, episode needs " + std::to_string(per_class));
    }
    const auto pick = rng.choose(pool.size(), per_class);
    for (std::size_t i = 0; i < per_class; ++i) {
      if (i < shape.shots) {
        t.support_ids.push_back(pool[pick[i]]);
        t.support_y.push_back(label);
      } else {
        t.query_ids.push_back(pool[pick[i]]);
        t.query_y.push_back(label);
      }
    }
  }
  t.support_x = ds.gather(t.support_ids);
  t.query_x = ds.gather(t.query_ids);
  return t;
}

struct Batch {
  Tensor x;                          // [B × d_in]
  std::vector<std::size_t> y;        // class position within the split
  std::vector<std::size_t> ids;      // dataset sample indices
};

inline Batch make_batch(const Dataset& ds, std::vector<std::size_t> ids) {
  Batch b;
  b.x = ds.gather(ids);
  b.y.reserve(ids.size());
  for (std::size_t i : ids) b.y.push_back(ds.split_index(ds.label(i)));
  b.ids = std::move(ids);
  return b;
}

inline std::size_t batches_per_epoch(std::size_t split_size, std::size_t batch_size) {
  return (split_size + batch_size - 1) / batch_size;
}

// One epoch of a split: a fresh permutation cut into consecutive chunks of
// `batch_size`; the final chunk keeps the remainder.
inline std::vector<std::vector<std::size_t>> epoch_batches(const Dataset& ds, Split split,
                                                           std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order = ds.samples(split);
  if (batch_size == 0 || batch_size > order.size()) {
    throw CapacityError("batch size " + std::to_string(batch_size) + " invalid for split of " +
                        std::to_string(order.size()) + " samples");
  }
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

// Sequential batch source over repeated epochs.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, Split split, std::size_t batch_size, Rng rng)
      : ds_(&ds), split_(split), batch_size_(batch_size), rng_(std::move(rng)) {}

  Batch next() {
    if (pos_ == current_.size()) {
      current_ = epoch_batches(*ds_, split_, batch_size_, rng_);
      pos_ = 0;
    }
    return make_batch(*ds_, current_[pos_++]);
  }

  std::size_t per_epoch() const { return batches_per_epoch(ds_->samples(split_).size(), batch_size_); }

 private:
  const Dataset* ds_;
  Split split_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> current_;
  std::size_t pos_ = 0;
};

}  // namespace boostmt
