#pragma once

// Shared vocabulary types: dense vectors/matrices, the error type used by
// every module, and a platform-stable random generator for seeded sweeps.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <limits>
#include <random>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace tosc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class ErrorKind {
    InvalidArgument,
    SingularState,
    NegativeTransformCoordinate,
    InnerRegion,
    NotOnBoundary,
    SingularJacobian,
    NonConvexControlSet,
    NonAffineSystem,
    ZeroTerminalCovector,
    Infeasible,
    NoDescent,
    NonFinite,
    BelowThreshold,
    OutOfRange,
    AlphaOutOfRange,
    BelowMtilde,
    BaselineQuenchedEarly,
    NotHit,
    NotQuenchingSystem,
    UnsupportedControlSet,
    ConfigError,
};

[[nodiscard]] constexpr std::string_view to_string(ErrorKind k) noexcept {
    switch (k) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::SingularState: return "SingularState";
        case ErrorKind::NegativeTransformCoordinate: return "NegativeTransformCoordinate";
        case ErrorKind::InnerRegion: return "InnerRegion";
        case ErrorKind::NotOnBoundary: return "NotOnBoundary";
        case ErrorKind::SingularJacobian: return "SingularJacobian";
        case ErrorKind::NonConvexControlSet: return "NonConvexControlSet";
        case ErrorKind::NonAffineSystem: return "NonAffineSystem";
        case ErrorKind::ZeroTerminalCovector: return "ZeroTerminalCovector";
        case ErrorKind::Infeasible: return "Infeasible";
        case ErrorKind::NoDescent: return "NoDescent";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::BelowThreshold: return "BelowThreshold";
        case ErrorKind::OutOfRange: return "OutOfRange";
        case ErrorKind::AlphaOutOfRange: return "AlphaOutOfRange";
        case ErrorKind::BelowMtilde: return "BelowMtilde";
        case ErrorKind::BaselineQuenchedEarly: return "BaselineQuenchedEarly";
        case ErrorKind::NotHit: return "NotHit";
        case ErrorKind::NotQuenchingSystem: return "NotQuenchingSystem";
        case ErrorKind::UnsupportedControlSet: return "UnsupportedControlSet";
        case ErrorKind::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

/// Error raised by all library operations. `module()` names the module the
/// failure originated in so the CLI can report provenance.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " [" + module + "]: " + message),
          kind_(kind),
          module_(std::move(module)) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    [[nodiscard]] const std::string& module() const noexcept { return module_; }

private:
    ErrorKind kind_;
    std::string module_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string_view module, const std::string& message) {
    throw Error(kind, std::string(module), message);
}

[[nodiscard]] inline bool all_finite(const Vec& v) noexcept { return v.allFinite(); }

/// Seeded generator. Distributions are derived by hand from the raw 64-bit
/// stream so that sweeps are reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Box-Muller standard normal.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

    Vec normal_vector(int n) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Vec unit_vector(int n) {
        Vec v = normal_vector(n);
        double nv = v.norm();
        while (nv < 1e-12) {
            v = normal_vector(n);
            nv = v.norm();
        }
        return v / nv;
    }

    std::uint64_t next_u64() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

/// FNV-1a over the bytes of a sequence of doubles; used for deterministic
/// tie-breaking between otherwise equal results.
[[nodiscard]] inline std::uint64_t hash_doubles(const std::vector<double>& values) noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (double v : values) {
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        std::memcpy(&bits, &v, sizeof(v));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

/// Moves `t` into the open interval (a, b) by at most one ulp on each side.
/// Piecewise-constant data is evaluated through this inside an integration
/// segment so both endpoint stages see the segment's own value.
[[nodiscard]] inline double clamp_open(double t, double a, double b) noexcept {
    if (b <= a) return t;
    const double lo = std::nextafter(a, b);
    const double hi = std::nextafter(b, a);
    if (lo > hi) return 0.5 * (a + b);
    return t < lo ? lo : (t > hi ? hi : t);
}

/// Worker count from TOSC_WORKERS, else the hardware concurrency.
[[nodiscard]] inline unsigned worker_count() {
    if (const char* env = std::getenv("TOSC_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count). Work is claimed in index order and each
/// result must be written to a slot owned by i, so output order never depends
/// on scheduling. The first exception (lowest index) is rethrown.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, unsigned workers = worker_count()) {
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(count, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::exception_ptr> errors(count);
    auto work = [&] {
        for (;;) {
            std::size_t i;
            {
                std::lock_guard<std::mutex> lock(mu);
                if (next >= count) return;
                i = next++;
            }
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace tosc
