#include "cumamba/simd/dispatch.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace cumamba::simd {

namespace {

bool cpu_has_avx2() {
#if defined(CUMAMBA_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

bool cpu_has_neon() {
#if defined(CUMAMBA_HAVE_NEON)
    return true;
#else
    return false;
#endif
}

Isa initial_isa() {
    Isa isa = detected_isa();
    if (const char* env = std::getenv("CUMAMBA_ISA")) {
        const std::string v(env);
        if (v == "scalar") {
            isa = Isa::kScalar;
        } else if (v == "avx2" && cpu_has_avx2()) {
            isa = Isa::kAvx2;
        } else if (v == "neon" && cpu_has_neon()) {
            isa = Isa::kNeon;
        }
    }
    return isa;
}

std::atomic<Isa>& active_slot() {
    static std::atomic<Isa> slot{initial_isa()};
    return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::kScalar: return "scalar";
        case Isa::kAvx2: return "avx2";
        case Isa::kNeon: return "neon";
    }
    return "unknown";
}

bool isa_available(Isa isa) {
    switch (isa) {
        case Isa::kScalar: return true;
        case Isa::kAvx2: return cpu_has_avx2();
        case Isa::kNeon: return cpu_has_neon();
    }
    return false;
}

Isa detected_isa() {
    static const Isa isa = [] {
        if (cpu_has_avx2()) return Isa::kAvx2;
        if (cpu_has_neon()) return Isa::kNeon;
        return Isa::kScalar;
    }();
    return isa;
}

Isa active_isa() { return active_slot().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
    if (!isa_available(isa)) {
        throw std::invalid_argument("ISA variant '" + std::string(isa_name(isa)) +
                                    "' is not available on this machine");
    }
    active_slot().store(isa, std::memory_order_relaxed);
}

ScopedIsa::ScopedIsa(Isa isa) : previous_(active_isa()) { set_active_isa(isa); }

ScopedIsa::~ScopedIsa() { active_slot().store(previous_, std::memory_order_relaxed); }

}  // namespace cumamba::simd
