#include "aggload/grid.hpp"

#include "aggload/errors.hpp"

#include <algorithm>
#include <cmath>

namespace aggload {

bool Box::contains(const StateVector& x) const {
    for (int a = 0; a < 2; ++a) {
        if (x(a) < lo[a] || x(a) > hi[a]) {
            return false;
        }
    }
    return true;
}

StateVector CellBlock::center_point(int i, int j) const {
    StateVector x(2);
    x << center(0, i), center(1, j);
    return x;
}

std::optional<std::size_t> CellBlock::locate(const StateVector& x) const {
    if (!box.contains(x)) {
        return std::nullopt;
    }
    std::array<int, 2> idx{};
    for (int a = 0; a < 2; ++a) {
        int i = static_cast<int>(std::floor((x(a) - box.lo[a]) / width(a)));
        idx[a] = std::clamp(i, 0, cells[a] - 1);
    }
    return index(idx[0], idx[1]);
}

DensityField DensityField::zeros(std::vector<CellBlock> blocks, double time) {
    DensityField f;
    f.values.reserve(blocks.size());
    for (const auto& b : blocks) {
        f.values.emplace_back(b.size(), 0.0);
    }
    f.blocks = std::move(blocks);
    f.time = time;
    return f;
}

double DensityField::block_mass(std::size_t b) const {
    double s = 0.0;
    for (double v : values[b]) {
        s += v;
    }
    return s * blocks[b].cell_volume();
}

double DensityField::total_mass() const {
    double s = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        s += block_mass(b);
    }
    return s;
}

double DensityField::mode_mass(Mode q) const {
    double s = 0.0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].mode == q) {
            s += block_mass(b);
        }
    }
    return s;
}

bool DensityField::same_layout(const DensityField& other, double tol) const {
    if (blocks.size() != other.blocks.size()) {
        return false;
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& u = blocks[b];
        const auto& v = other.blocks[b];
        if (u.mode != v.mode || u.cells != v.cells) {
            return false;
        }
        for (int a = 0; a < 2; ++a) {
            if (std::abs(u.box.lo[a] - v.box.lo[a]) > tol ||
                std::abs(u.box.hi[a] - v.box.hi[a]) > tol) {
                return false;
            }
        }
    }
    return true;
}

double add_uniform_mass(DensityField& field, Mode mode, const Box& region, double mass) {
    const double area = region.extent(0) * region.extent(1);
    if (!(area > 0.0)) {
        throw StructureError("uniform mass region must have positive area");
    }
    const double density = mass / area;
    double placed = 0.0;
    for (std::size_t b = 0; b < field.blocks.size(); ++b) {
        const auto& blk = field.blocks[b];
        if (blk.mode != mode) {
            continue;
        }
        const double w0 = blk.width(0);
        const double w1 = blk.width(1);
        for (int j = 0; j < blk.cells[1]; ++j) {
            const double oy = overlap(blk.lower(1, j), blk.lower(1, j) + w1, region.lo[1], region.hi[1]);
            if (oy <= 0.0) {
                continue;
            }
            for (int i = 0; i < blk.cells[0]; ++i) {
                const double ox =
                    overlap(blk.lower(0, i), blk.lower(0, i) + w0, region.lo[0], region.hi[0]);
                if (ox <= 0.0) {
                    continue;
                }
                const double m = density * ox * oy;
                field.values[b][blk.index(i, j)] += m / (w0 * w1);
                placed += m;
            }
        }
    }
    return placed;
}

}  // namespace aggload
