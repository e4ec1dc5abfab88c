#pragma once

#include <cstdint>
#include <random>

#include "nk/tensor.hpp"

namespace nk {

// Deterministic RNG. mt19937_64 core with hand-rolled distributions so that
// streams do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();                       // [0,1)
    double uniform(double lo, double hi);
    int uniform_int(int n);                 // [0,n)
    double normal();                        // Box-Muller
    double normal(double mu, double sigma);

    // Independent derived stream; deterministic function of (seed, stream).
    Rng fork(uint64_t stream) const;
    uint64_t seed() const { return seed_; }

    Tensor uniform_tensor(Shape shape, double lo, double hi);
    Tensor normal_tensor(Shape shape, double mu = 0.0, double sigma = 1.0);

private:
    std::mt19937_64 engine_;
    uint64_t seed_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

uint64_t splitmix64(uint64_t x);

}  // namespace nk
