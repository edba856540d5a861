#include "fticir/rng.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fticir/errors.hpp"

namespace fticir {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::input: return "input";
        case ErrorKind::shape: return "shape";
        case ErrorKind::config: return "config";
        case ErrorKind::lookup: return "lookup";
        case ErrorKind::data: return "data";
        case ErrorKind::parse: return "parse";
        case ErrorKind::io: return "io";
        case ErrorKind::precondition: return "precondition";
    }
    return "unknown";
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u1 kept away from zero.
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) {
        return 0;
    }
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x = 0;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_;
    char spare[64];
    std::snprintf(spare, sizeof(spare), " %d %a", has_spare_ ? 1 : 0, spare_);
    out << spare;
    return out.str();
}

void Rng::set_state(const std::string& state) {
    std::istringstream in(state);
    in >> engine_;
    int has_spare = 0;
    std::string spare;
    in >> has_spare >> spare;
    if (in.fail()) {
        fail(ErrorKind::parse, "malformed rng state");
    }
    has_spare_ = has_spare != 0;
    spare_ = std::strtod(spare.c_str(), nullptr);
}

}  // namespace fticir
