#include "posegen/rng.hpp"

#include <cmath>

namespace posegen {

uint64_t Rng::mix(uint64_t z) {
    // splitmix64 finalizer
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

float Rng::normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return float(r * std::cos(2.0 * M_PI * u2));
}

}  // namespace posegen
