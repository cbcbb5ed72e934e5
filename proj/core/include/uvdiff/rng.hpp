#pragma once

#include <cstddef>
#include <cstdint>

namespace uvdiff {

// Counter-based Philox4x32-10 stream (Salmon et al., "Parallel Random
// Numbers: As Easy as 1, 2, 3"). A stream is identified by
// (seed, domain, index); draws advance a 64-bit block counter. Identical
// identifiers yield bit-identical sequences on every platform, and distinct
// (domain, index) pairs give statistically independent streams, which is what
// the samplers rely on to share noise across algorithms by construction.
// One Philox4x32-10 block: out = bijection(ctr) keyed by key. Exposed so the
// known-answer vectors can hit the exact production path.
void philox4x32_10(const std::uint32_t ctr[4], const std::uint32_t key[2],
                   std::uint32_t out[4]);

class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint32_t domain = 0, std::uint32_t index = 0);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform on [0,1) with 53 random bits.
    double uniform();
    // Standard normal via Box-Muller (pairs cached). Computed in double even
    // when the caller stores float, so f32/f64 runs draw the same values.
    double normal();
    // Uniform integer in [lo, hi). Uses the multiply-shift range trick; the
    // bias is < range/2^32, irrelevant for the augmentation choices it feeds.
    int uniform_int(int lo, int hi);

    template <class T> void fill_normal(T* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(normal());
    }
    template <class T> void fill_uniform(T* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(uniform());
    }

private:
    void refill();

    std::uint32_t key_[2];
    std::uint32_t ctr_[4];
    std::uint32_t block_[4];
    int block_pos_;
    bool have_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

// Stream domains used across the library. Keeping them in one enum documents
// the global stream layout and prevents accidental collisions.
enum class StreamDomain : std::uint32_t {
    init = 1,          // chain initialization x_T
    proposal = 2,      // reverse-step proposal noise at step t
    known = 3,         // forward-noising of the observed texture to t
    renoise = 4,       // RePaint re-noising between resampling reps
    data = 5,          // synthetic dataset generation
    scene = 6,         // benchmark scene (pose, light, coefficients)
    weights = 7,       // model weight initialization
    train = 8,         // training loop (batch picks, timesteps, noise)
    misc = 9,
};

inline Rng make_stream(std::uint64_t seed, StreamDomain d, std::uint32_t index = 0) {
    return Rng(seed, static_cast<std::uint32_t>(d), index);
}

} // namespace uvdiff
