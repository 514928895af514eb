#pragma once

#include <map>
#include <string>
#include <vector>

namespace aggload {

enum class SeriesSource { MonteCarlo, Pde };

[[nodiscard]] std::string to_string(SeriesSource source);
[[nodiscard]] SeriesSource series_source_from_string(const std::string& tag);

/// Time-stamped aggregated power y(t) in kW with its provenance.
struct PowerSeries {
    std::vector<double> times;   // hours, strictly increasing
    std::vector<double> values;  // kW
    SeriesSource source = SeriesSource::MonteCarlo;
    std::map<std::string, std::string> metadata;

    [[nodiscard]] std::size_t size() const noexcept { return times.size(); }
    /// Throws StructureError on length mismatch or non-increasing times.
    void validate() const;
    /// Linear interpolation; clamps outside the span.
    [[nodiscard]] double interpolate(double t) const;
    /// Mean of the samples with start <= t <= end.
    [[nodiscard]] double window_mean(double start, double end) const;
};

/// Uniform time axis start, start + step, ..., including `end` when it lies on
/// the grid (within 1e-9 of a step).
[[nodiscard]] std::vector<double> uniform_times(double start, double end, double step);

}  // namespace aggload
