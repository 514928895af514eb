#pragma once

#include <vector>

namespace aggload {

struct ControlEvent {
    double time = 0.0;
    double value = 0.0;
};

/// Piecewise-constant external signal shared by the whole population.
/// value_at(t) includes every event with time <= t.
class ControlSchedule {
public:
    ControlSchedule() = default;
    explicit ControlSchedule(std::vector<ControlEvent> events, double initial = 0.0);

    [[nodiscard]] double value_at(double t) const;
    [[nodiscard]] double initial() const noexcept { return initial_; }
    [[nodiscard]] const std::vector<ControlEvent>& events() const noexcept { return events_; }

    /// Events with start < time <= end, in order.
    [[nodiscard]] std::vector<ControlEvent> events_in(double start, double end) const;

    /// Time of the first event strictly after t, or +inf.
    [[nodiscard]] double next_event_after(double t) const;
    /// First event after t that changes the value, or +inf. Events repeating
    /// the current value are no-ops for both solvers.
    [[nodiscard]] double next_change_after(double t) const;

private:
    std::vector<ControlEvent> events_;
    double initial_ = 0.0;
};

}  // namespace aggload
