#pragma once

#include <cstddef>

// Vectorized float transcendentals for the training/eval hot path. Compiled
// in its own translation unit with fast-math so the compiler can use the
// glibc vector math routines; inputs are clamped to +/-20 where both
// functions already saturate in float, keeping the fast-math assumptions
// valid. The double-precision instantiations of the cells never call these.

namespace tet::fastmath {

void tanh_inplace(float* x, std::size_t n);
void sigmoid_inplace(float* x, std::size_t n);

} // namespace tet::fastmath
