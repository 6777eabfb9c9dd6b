#pragma once

#include <cmath>
#include <vector>

namespace lksde {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

/// Time-ordered 2-D waypoints at a fixed sampling period.
using Trajectory = std::vector<Point2>;

inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Rigid 2-D pose. Local coordinates put the origin at (x, y) with the
/// local x-axis along `heading`.
struct Frame {
    double x = 0.0;
    double y = 0.0;
    double heading = 0.0;

    Point2 to_local(const Point2& p) const {
        const double dx = p.x - x, dy = p.y - y;
        const double c = std::cos(heading), s = std::sin(heading);
        return {c * dx + s * dy, -s * dx + c * dy};
    }

    Point2 to_world(const Point2& p) const {
        const double c = std::cos(heading), s = std::sin(heading);
        return {x + c * p.x - s * p.y, y + s * p.x + c * p.y};
    }

    Trajectory to_local(const Trajectory& t) const {
        Trajectory out;
        out.reserve(t.size());
        for (const auto& p : t) out.push_back(to_local(p));
        return out;
    }

    Trajectory to_world(const Trajectory& t) const {
        Trajectory out;
        out.reserve(t.size());
        for (const auto& p : t) out.push_back(to_world(p));
        return out;
    }

    friend bool operator==(const Frame&, const Frame&) = default;
};

}  // namespace lksde
