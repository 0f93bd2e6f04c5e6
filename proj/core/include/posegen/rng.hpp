#pragma once

#include <cstdint>

namespace posegen {

// Counter-based generator: draw i of a stream is a pure function of
// (key, i). split() derives an independent child stream, so per-segment
// or per-scene work can be seeded up front and run in any order while
// staying reproducible.
class Rng {
  public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x9E3779B97F4A7C15ull)) {}

    uint64_t next_u64() {
        counter_ += 1;
        return mix(key_ + counter_ * 0xBF58476D1CE4E5B9ull);
    }

    // [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0,n), n > 0
    int64_t uniform_int(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

    // Box-Muller, consumes two draws per call
    float normal();

    Rng split(uint64_t stream) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(stream + 0x94D049BB133111EBull));
        child.counter_ = 0;
        return child;
    }

    uint64_t key() const { return key_; }

  private:
    static uint64_t mix(uint64_t z);

    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace posegen
