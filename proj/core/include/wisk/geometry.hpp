#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace wisk {

enum class Axis : std::uint8_t { X = 0, Y = 1 };

struct GeoPoint {
    double x = 0.0;
    double y = 0.0;

    double operator[](Axis a) const { return a == Axis::X ? x : y; }
    bool operator==(const GeoPoint&) const = default;
};

// Axis-aligned rectangle, closed on all sides.
struct Rect {
    double xb = 0.0;
    double yb = 0.0;
    double xu = 0.0;
    double yu = 0.0;

    static Rect empty() {
        constexpr double inf = std::numeric_limits<double>::infinity();
        return {inf, inf, -inf, -inf};
    }
    static Rect of_point(const GeoPoint& p) { return {p.x, p.y, p.x, p.y}; }

    bool is_empty() const { return xb > xu || yb > yu; }
    bool contains(const GeoPoint& p) const {
        return xb <= p.x && p.x <= xu && yb <= p.y && p.y <= yu;
    }
    bool contains(const Rect& r) const {
        return xb <= r.xb && r.xu <= xu && yb <= r.yb && r.yu <= yu;
    }
    bool intersects(const Rect& r) const {
        return xb <= r.xu && r.xb <= xu && yb <= r.yu && r.yb <= yu;
    }
    double width() const { return xu - xb; }
    double height() const { return yu - yb; }
    double area() const { return is_empty() ? 0.0 : width() * height(); }
    double lo(Axis a) const { return a == Axis::X ? xb : yb; }
    double hi(Axis a) const { return a == Axis::X ? xu : yu; }
    void set_lo(Axis a, double v) { (a == Axis::X ? xb : yb) = v; }
    void set_hi(Axis a, double v) { (a == Axis::X ? xu : yu) = v; }

    void expand(const GeoPoint& p) {
        xb = std::min(xb, p.x);
        yb = std::min(yb, p.y);
        xu = std::max(xu, p.x);
        yu = std::max(yu, p.y);
    }
    void expand(const Rect& r) {
        if (r.is_empty()) return;
        xb = std::min(xb, r.xb);
        yb = std::min(yb, r.yb);
        xu = std::max(xu, r.xu);
        yu = std::max(yu, r.yu);
    }

    // Euclidean distance from p to the closest point of the rectangle (0 inside).
    double min_distance(const GeoPoint& p) const {
        const double dx = p.x < xb ? xb - p.x : (p.x > xu ? p.x - xu : 0.0);
        const double dy = p.y < yb ? yb - p.y : (p.y > yu ? p.y - yu : 0.0);
        return std::sqrt(dx * dx + dy * dy);
    }

    bool operator==(const Rect&) const = default;
};

inline double distance(const GeoPoint& a, const GeoPoint& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return std::sqrt(dx * dx + dy * dy);
}

inline Axis other(Axis a) { return a == Axis::X ? Axis::Y : Axis::X; }

}  // namespace wisk
