#pragma once

#include <limits>
#include <random>
#include <string>
#include <vector>

#include "qachain/grammar.hpp"
#include "qachain/oracle.hpp"

namespace qachain {

// Seeded RNG with a portable bounded draw (uniform_int_distribution is
// implementation-defined, which would break cross-platform determinism).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, bound) via rejection sampling.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) return 0;
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                          std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % bound;
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(below(v.size()))];
  }

 private:
  std::mt19937_64 engine_;
};

// Random scene over the given grammar's vocabulary. Coordinates are distinct
// permutations of 0..n-1 on each axis, so no pair ever ties.
inline SceneGraph generate_scene(const GrammarSpec& spec, size_t n_objects, Rng& rng) {
  std::vector<int> xs(n_objects), ys(n_objects);
  for (size_t i = 0; i < n_objects; ++i) xs[i] = ys[i] = static_cast<int>(i);
  for (size_t i = n_objects; i > 1; --i) {
    std::swap(xs[i - 1], xs[static_cast<size_t>(rng.below(i))]);
    std::swap(ys[i - 1], ys[static_cast<size_t>(rng.below(i))]);
  }
  std::vector<SceneObject> objs;
  for (size_t i = 0; i < n_objects; ++i) {
    SceneObject o;
    o.id = static_cast<int>(i);
    o.size = rng.pick(spec.slot("size")->options);
    o.color = rng.pick(spec.slot("color")->options);
    o.material = rng.pick(spec.slot("material")->options);
    o.shape = rng.pick(spec.slot("shape")->options);
    o.x = xs[i];
    o.y = ys[i];
    objs.push_back(std::move(o));
  }
  return SceneGraph(std::move(objs), &spec);
}

}  // namespace qachain
