#include "aggload/control.hpp"

#include "aggload/errors.hpp"

#include <cmath>
#include <limits>

namespace aggload {

ControlSchedule::ControlSchedule(std::vector<ControlEvent> events, double initial)
    : events_(std::move(events)), initial_(initial) {
    for (std::size_t i = 0; i < events_.size(); ++i) {
        if (!std::isfinite(events_[i].time) || !std::isfinite(events_[i].value)) {
            throw ConfigError("events: non-finite time or value");
        }
        if (i > 0 && !(events_[i].time > events_[i - 1].time)) {
            throw ConfigError("events: times must be strictly increasing");
        }
    }
}

double ControlSchedule::value_at(double t) const {
    double v = initial_;
    for (const auto& e : events_) {
        if (e.time <= t) {
            v = e.value;
        } else {
            break;
        }
    }
    return v;
}

std::vector<ControlEvent> ControlSchedule::events_in(double start, double end) const {
    std::vector<ControlEvent> out;
    for (const auto& e : events_) {
        if (e.time > start && e.time <= end) {
            out.push_back(e);
        }
    }
    return out;
}

double ControlSchedule::next_event_after(double t) const {
    for (const auto& e : events_) {
        if (e.time > t) {
            return e.time;
        }
    }
    return std::numeric_limits<double>::infinity();
}

double ControlSchedule::next_change_after(double t) const {
    const double u = value_at(t);
    for (const auto& e : events_) {
        if (e.time > t && value_at(e.time) != u) {
            return e.time;
        }
    }
    return std::numeric_limits<double>::infinity();
}

}  // namespace aggload
