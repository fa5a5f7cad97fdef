#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace folio {

// Seeded generator shared by model initialization, shuffling and simulation.
// Stream: std::mt19937_64; uniforms take the top 53 bits; normals come from
// the Box-Muller transform, both outputs used in order. Algorithm id below.
class Rng {
public:
    static constexpr const char* algorithm = "mt19937_64/u53/box-muller";

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(engine_() % i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace folio
