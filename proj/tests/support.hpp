#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "boostmt/boostmt.hpp"

namespace boostmt::testing {

inline Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
  Tensor t({r, c});
  for (double& v : t.data()) v = rng.normal(0.0, sd);
  return t;
}

// Small generated dataset; zero-ish noise makes classes trivially separable.
inline GeneratorConfig tiny_generator(std::uint64_t seed, double sigma_sample = 0.5) {
  GeneratorConfig g;
  g.dim = 8;
  g.superclasses = 4;
  g.classes_per_superclass = 3;
  g.samples_per_class = 30;
  g.sigma_sample = sigma_sample;
  g.base_classes = 6;
  g.val_classes = 3;
  g.novel_classes = 3;
  g.seed = seed;
  return g;
}

inline Architecture tiny_architecture(const Dataset& ds, std::size_t hidden = 16, std::size_t emb = 8) {
  FeatureExtractor fx({ds.dim(), hidden, emb});
  return {fx, LinearClassifier(emb, ds.classes(Split::base).size())};
}

inline BoostMTConfig tiny_train(std::uint64_t seed) {
  BoostMTConfig c;
  c.alpha = 0.05;
  c.beta = 0.05;
  c.epochs = 1;
  c.batch_size = 32;
  c.inner_loops = 3;
  c.shape = {3, 2, 3};
  c.seed = seed;
  return c;
}

}  // namespace boostmt::testing
