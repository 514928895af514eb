#include "aggload/series.hpp"

#include "aggload/errors.hpp"

#include <algorithm>
#include <cmath>

namespace aggload {

std::string to_string(SeriesSource source) {
    return source == SeriesSource::MonteCarlo ? "MC" : "PDE";
}

SeriesSource series_source_from_string(const std::string& tag) {
    if (tag == "MC") {
        return SeriesSource::MonteCarlo;
    }
    if (tag == "PDE") {
        return SeriesSource::Pde;
    }
    throw StructureError("unknown series source tag '" + tag + "'");
}

void PowerSeries::validate() const {
    if (times.size() != values.size()) {
        throw StructureError("power series: times and values differ in length");
    }
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) {
            throw StructureError("power series: times must be strictly increasing");
        }
    }
}

double PowerSeries::interpolate(double t) const {
    if (times.empty()) {
        throw StructureError("power series is empty");
    }
    if (t <= times.front()) {
        return values.front();
    }
    if (t >= times.back()) {
        return values.back();
    }
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[k - 1]) / (times[k] - times[k - 1]);
    return (1.0 - w) * values[k - 1] + w * values[k];
}

double PowerSeries::window_mean(double start, double end) const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] >= start - 1e-12 && times[i] <= end + 1e-12) {
            s += values[i];
            ++n;
        }
    }
    if (n == 0) {
        throw StructureError("power series: empty averaging window");
    }
    return s / static_cast<double>(n);
}

std::vector<double> uniform_times(double start, double end, double step) {
    if (!(step > 0.0) || !(end >= start)) {
        throw StructureError("uniform_times: need step > 0 and end >= start");
    }
    const auto n = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9));
    std::vector<double> t(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        t[k] = std::min(start + static_cast<double>(k) * step, end);
    }
    return t;
}

}  // namespace aggload
