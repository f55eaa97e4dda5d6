#include "cumamba/runtime.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cumamba {

void set_num_threads(std::size_t threads) {
#ifdef _OPENMP
    omp_set_num_threads(static_cast<int>(std::max<std::size_t>(1, threads)));
#else
    (void)threads;
#endif
}

std::size_t num_threads() {
#ifdef _OPENMP
    return static_cast<std::size_t>(omp_get_max_threads());
#else
    return 1;
#endif
}

}  // namespace cumamba
