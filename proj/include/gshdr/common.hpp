#pragma once

#include <array>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gshdr {

using i64 = std::int64_t;

// Error taxonomy surfaced by the CLI as "error[<kind>]: <message>".
enum class ErrorKind {
    Config,  // invalid model/training configuration
    Shape,   // tensor dimension mismatch
    Value,   // out-of-domain numeric input
    Io,      // file system failure
    Format,  // malformed or unsupported file content
    State,   // API misuse (e.g. backward called twice)
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Config: return "config";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Value: return "value";
        case ErrorKind::Io: return "io";
        case ErrorKind::Format: return "format";
        case ErrorKind::State: return "state";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

// Dense tensor extents, rank 0..4. Canonical image layout is
// (batch, channels, height, width).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::int64_t> dims) {
        if (dims.size() > kMaxRank) fail(ErrorKind::Shape, "rank > 4 not supported");
        for (auto d : dims) {
            if (d < 0) fail(ErrorKind::Shape, "negative dimension");
            d_[static_cast<std::size_t>(rank_++)] = d;
        }
    }

    void push_back(std::int64_t d) {
        if (rank_ >= static_cast<int>(kMaxRank)) fail(ErrorKind::Shape, "rank > 4 not supported");
        if (d < 0) fail(ErrorKind::Shape, "negative dimension");
        d_[static_cast<std::size_t>(rank_++)] = d;
    }

    int rank() const noexcept { return rank_; }
    std::int64_t operator[](int i) const { return d_[static_cast<std::size_t>(i)]; }

    std::int64_t numel() const noexcept {
        std::int64_t n = 1;
        for (int i = 0; i < rank_; ++i) n *= d_[static_cast<std::size_t>(i)];
        return n;
    }

    bool operator==(const Shape& o) const noexcept { return rank_ == o.rank_ && d_ == o.d_; }
    bool operator!=(const Shape& o) const noexcept { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << d_[static_cast<std::size_t>(i)];
        os << ')';
        return os.str();
    }

private:
    static constexpr std::size_t kMaxRank = 4;
    std::array<std::int64_t, kMaxRank> d_{};
    int rank_ = 0;
};

}  // namespace gshdr
