#pragma once

#include "aggload/model.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

namespace aggload {

/// Axis-aligned box in the (x1, x2) plane.
struct Box {
    std::array<double, 2> lo{0.0, 0.0};
    std::array<double, 2> hi{0.0, 0.0};

    [[nodiscard]] double extent(int axis) const { return hi[axis] - lo[axis]; }
    [[nodiscard]] bool contains(const StateVector& x) const;
};

/// Uniform cell mesh over one box, attached to one mode. Cells are indexed
/// x1-fastest: index(i, j) = i + cells[0] * j.
struct CellBlock {
    Mode mode = 0;
    Box box;
    std::array<int, 2> cells{1, 1};

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(cells[0]) * static_cast<std::size_t>(cells[1]);
    }
    [[nodiscard]] double width(int axis) const { return box.extent(axis) / cells[axis]; }
    [[nodiscard]] double cell_volume() const { return width(0) * width(1); }
    [[nodiscard]] double lower(int axis, int i) const { return box.lo[axis] + i * width(axis); }
    [[nodiscard]] double center(int axis, int i) const {
        return box.lo[axis] + (i + 0.5) * width(axis);
    }
    [[nodiscard]] std::size_t index(int i, int j) const {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(cells[0]) * j;
    }
    [[nodiscard]] StateVector center_point(int i, int j) const;
    /// Cell containing x (half-open cells, upper box face included).
    [[nodiscard]] std::optional<std::size_t> locate(const StateVector& x) const;
};

/// Piecewise-constant density p_i(q, x, t) over a set of cell blocks.
/// Values are densities (mass per unit state-space volume).
struct DensityField {
    std::vector<CellBlock> blocks;
    std::vector<std::vector<double>> values;
    double time = 0.0;

    [[nodiscard]] static DensityField zeros(std::vector<CellBlock> blocks, double time = 0.0);

    [[nodiscard]] double block_mass(std::size_t b) const;
    [[nodiscard]] double total_mass() const;
    [[nodiscard]] double mode_mass(Mode q) const;
    [[nodiscard]] bool same_layout(const DensityField& other, double tol = 1e-12) const;
};

/// Adds `mass` spread uniformly over `region` (restricted to blocks of `mode`)
/// in proportion to each cell's overlap area. Returns the mass actually placed.
double add_uniform_mass(DensityField& field, Mode mode, const Box& region, double mass);

/// Overlap length of [a0, a1] and [b0, b1].
[[nodiscard]] inline double overlap(double a0, double a1, double b0, double b1) {
    const double lo = a0 > b0 ? a0 : b0;
    const double hi = a1 < b1 ? a1 : b1;
    return hi > lo ? hi - lo : 0.0;
}

}  // namespace aggload
