#include "tet/fastmath.hpp"

#include <cmath>

namespace tet::fastmath {

void tanh_inplace(float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        float v = x[i];
        v = v < -20.0f ? -20.0f : (v > 20.0f ? 20.0f : v);
        x[i] = tanhf(v);
    }
}

// sigmoid(x) = 0.5 * (1 + tanh(x/2)); the tanh form vectorizes best here
void sigmoid_inplace(float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        float v = 0.5f * x[i];
        v = v < -20.0f ? -20.0f : (v > 20.0f ? 20.0f : v);
        x[i] = 0.5f + 0.5f * tanhf(v);
    }
}

} // namespace tet::fastmath
