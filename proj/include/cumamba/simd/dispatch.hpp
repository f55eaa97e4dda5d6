#pragma once

#include <string_view>

namespace cumamba::simd {

/// Instruction-set variant used by the data-parallel kernels.
enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

/// Best variant this binary was built with and the running CPU supports.
Isa detected_isa();

/// Variant the kernels dispatch to. Defaults to detected_isa(); the
/// CUMAMBA_ISA environment variable ("scalar", "avx2", "neon") overrides it
/// at first use.
Isa active_isa();

/// Throws std::invalid_argument if `isa` is not available on this machine.
void set_active_isa(Isa isa);

bool isa_available(Isa isa);

/// Restores the previous variant on destruction.
class ScopedIsa {
public:
    explicit ScopedIsa(Isa isa);
    ~ScopedIsa();
    ScopedIsa(const ScopedIsa&) = delete;
    ScopedIsa& operator=(const ScopedIsa&) = delete;

private:
    Isa previous_;
};

}  // namespace cumamba::simd
