#include "aggload/pde.hpp"

#include "aggload/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

namespace aggload {

std::string to_string(FaceKind kind) {
    switch (kind) {
        case FaceKind::Truncation:
            return "truncation";
        case FaceKind::Wall:
            return "wall";
        case FaceKind::Interface:
            return "interface";
        case FaceKind::Outflow:
            return "outflow";
    }
    return "unknown";
}

namespace {

constexpr double kGeomTol = 1e-9;

// Index helpers for a block viewed along `axis`: k is the position along the
// axis, t the transverse position.
std::size_t cell_at(const CellBlock& b, int axis, int k, int t) {
    return axis == 0 ? b.index(k, t) : b.index(t, k);
}

std::size_t face_at(const CellBlock& b, int axis, int k, int t) {
    return axis == 0 ? static_cast<std::size_t>(k) + static_cast<std::size_t>(b.cells[0] + 1) * t
                     : static_cast<std::size_t>(t) + static_cast<std::size_t>(b.cells[0]) * k;
}

std::size_t face_count(const CellBlock& b, int axis) {
    return axis == 0 ? static_cast<std::size_t>(b.cells[0] + 1) * b.cells[1]
                     : static_cast<std::size_t>(b.cells[0]) * (b.cells[1] + 1);
}

double side_coordinate(const CellBlock& b, int side) {
    const int a = side_axis(side);
    return side_upper(side) ? b.box.hi[a] : b.box.lo[a];
}

bool near(double a, double b) { return std::abs(a - b) <= kGeomTol * std::max(1.0, std::abs(a)); }

Box intersect(const Box& a, const Box& b) {
    Box r;
    for (int d = 0; d < 2; ++d) {
        r.lo[d] = std::max(a.lo[d], b.lo[d]);
        r.hi[d] = std::min(a.hi[d], b.hi[d]);
    }
    return r;
}

double area(const Box& b) {
    return std::max(0.0, b.extent(0)) * std::max(0.0, b.extent(1));
}

Box cell_box(const CellBlock& b, int i, int j) {
    Box c;
    c.lo = {b.lower(0, i), b.lower(1, j)};
    c.hi = {i + 1 == b.cells[0] ? b.box.hi[0] : b.lower(0, i + 1),
            j + 1 == b.cells[1] ? b.box.hi[1] : b.lower(1, j + 1)};
    return c;
}

// Cells of `b` overlapping [lo, hi] along `axis`, as a half-open index range.
std::pair<int, int> index_range(const CellBlock& b, int axis, double lo, double hi) {
    const double w = b.width(axis);
    int i0 = static_cast<int>(std::floor((lo - b.box.lo[axis]) / w));
    int i1 = static_cast<int>(std::ceil((hi - b.box.lo[axis]) / w));
    return {std::clamp(i0, 0, b.cells[axis]), std::clamp(i1, 0, b.cells[axis])};
}

int cell_count(double length, double width, const char* what) {
    const double n = length / width;
    const double r = std::round(n);
    if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, r)) {
        throw PartitionError(std::string("PEV grid: ") + what +
                             " is not a whole number of cells");
    }
    return static_cast<int>(r);
}

Component make_component(Mode q, int label, Box box, std::array<int, 2> cells) {
    Component c;
    c.block.mode = q;
    c.block.box = box;
    c.block.cells = cells;
    c.label = label;
    return c;
}

void link_interface(DomainPartition& p, int a, int side_a, int b, int side_b) {
    p.components[a].faces[side_a] = FaceLink{FaceKind::Interface, b, side_b, 0};
    p.components[b].faces[side_b] = FaceLink{FaceKind::Interface, a, side_a, 0};
}

DomainPartition hvac_partition(const LoadModel& model, const LoadParameters& params,
                               double control, const GridSpec& grid) {
    using namespace hvac_layout;
    const double base = params.alpha.at(kSetpoint);
    const double delta = params.alpha.at(kDeadband);
    if (!(delta > 0.0) || grid.cells_x1 < 2 || grid.cells_x2 < 1) {
        throw PartitionError("HVAC partition: deadband narrower than two cells");
    }
    if (!(grid.margin > 0.0)) {
        throw PartitionError("HVAC partition: truncation margin must be positive");
    }
    const double u = base + model.setpoint_shift(control);
    const double lo = u - delta;
    const double hi = u + delta;
    const double x2_lo = base - delta - grid.margin;
    const double x2_hi = base + delta + grid.margin;
    const std::array<int, 2> cells{grid.cells_x1, grid.cells_x2};

    DomainPartition p;
    p.family = model.family();
    p.control = control;
    // 0: OFF outside band, 1: OFF band, 2: ON outside band, 3: ON band.
    p.components.push_back(make_component(kOff, 1, Box{{lo - grid.margin, x2_lo}, {lo, x2_hi}}, cells));
    p.components.push_back(make_component(kOff, 2, Box{{lo, x2_lo}, {hi, x2_hi}}, cells));
    p.components.push_back(make_component(kOn, 1, Box{{hi, x2_lo}, {hi + grid.margin, x2_hi}}, cells));
    p.components.push_back(make_component(kOn, 2, Box{{lo, x2_lo}, {hi, x2_hi}}, cells));
    link_interface(p, 0, side_index(0, true), 1, side_index(0, false));
    link_interface(p, 3, side_index(0, true), 2, side_index(0, false));
    // G_0 at x1 = u + delta hands off to the ON band/outside interface, G_1 at
    // x1 = u - delta to the OFF outside/band interface.
    p.components[1].faces[side_index(0, true)] =
        FaceLink{FaceKind::Outflow, 3, side_index(0, true), 0};
    p.components[3].faces[side_index(0, false)] =
        FaceLink{FaceKind::Outflow, 1, side_index(0, false), 0};
    return p;
}

DomainPartition pev_partition(const LoadModel& model, double control, const GridSpec& grid) {
    using namespace pev_layout;
    const auto& lo = grid.pev_lower;
    const auto& hi = grid.pev_upper;
    const auto& h = grid.pev_cell;
    if (!(lo[0] < 0.0 && lo[1] < 0.0 && hi[0] > 0.0 && hi[1] > 0.0 && h[0] > 0.0 && h[1] > 0.0)) {
        throw PartitionError("PEV grid: bounds must straddle the origin and widths be positive");
    }
    const int n1n = cell_count(-lo[0], h[0], "x1 below 0");
    const int n1p = cell_count(hi[0], h[0], "x1 above 0");
    const int n2n = cell_count(-lo[1], h[1], "x2 below 0");
    const int n2p = cell_count(hi[1], h[1], "x2 above 0");

    DomainPartition p;
    p.family = model.family();
    p.control = control;
    // 0: waiting; 1, 2: charging below/above x2 = 0; 3, 4: completed left/right of x1 = 0.
    p.components.push_back(make_component(kWaiting, 1, Box{{0.0, 0.0}, {hi[0], hi[1]}}, {n1p, n2p}));
    p.components.push_back(make_component(kCharging, 1, Box{{0.0, lo[1]}, {hi[0], 0.0}}, {n1p, n2n}));
    p.components.push_back(make_component(kCharging, 2, Box{{0.0, 0.0}, {hi[0], hi[1]}}, {n1p, n2p}));
    p.components.push_back(make_component(kCompleted, 1, Box{{lo[0], lo[1]}, {0.0, hi[1]}}, {n1n, n2n + n2p}));
    p.components.push_back(make_component(kCompleted, 2, Box{{0.0, lo[1]}, {hi[0], hi[1]}}, {n1p, n2n + n2p}));

    p.components[0].faces[side_index(0, false)] = FaceLink{FaceKind::Wall, -1, -1, 0};
    p.components[0].faces[side_index(1, false)] =
        FaceLink{FaceKind::Outflow, 2, side_index(1, false), 0};
    link_interface(p, 1, side_index(1, true), 2, side_index(1, false));
    p.components[1].faces[side_index(0, false)] =
        FaceLink{FaceKind::Outflow, 4, side_index(0, false), 0};
    p.components[2].faces[side_index(0, false)] =
        FaceLink{FaceKind::Outflow, 4, side_index(0, false), n2n};
    link_interface(p, 3, side_index(0, true), 4, side_index(0, false));
    return p;
}

}  // namespace

std::vector<CellBlock> DomainPartition::blocks() const {
    std::vector<CellBlock> out;
    out.reserve(components.size());
    for (const auto& c : components) {
        out.push_back(c.block);
    }
    return out;
}

std::vector<int> DomainPartition::components_of(Mode q) const {
    std::vector<int> out;
    for (std::size_t c = 0; c < components.size(); ++c) {
        if (components[c].block.mode == q) {
            out.push_back(static_cast<int>(c));
        }
    }
    return out;
}

void DomainPartition::validate(const LoadModel& model) const {
    const int n = static_cast<int>(components.size());
    for (int c = 0; c < n; ++c) {
        const auto& blk = components[c].block;
        model.require_mode(blk.mode);
        for (int a = 0; a < 2; ++a) {
            if (blk.cells[a] < 1 || !(blk.box.extent(a) > 0.0)) {
                throw PartitionError("component " + std::to_string(c) + " has no cells");
            }
        }
        for (int d = c + 1; d < n; ++d) {
            const auto& other = components[d].block;
            if (other.mode == blk.mode) {
                const Box o = intersect(blk.box, other.box);
                if (o.extent(0) > kGeomTol && o.extent(1) > kGeomTol) {
                    throw PartitionError("components " + std::to_string(c) + " and " +
                                         std::to_string(d) + " overlap");
                }
            }
        }
        for (int s = 0; s < 4; ++s) {
            const FaceLink& f = components[c].faces[s];
            const int a = side_axis(s);
            const int t = 1 - a;
            if (f.kind != FaceKind::Interface && f.kind != FaceKind::Outflow) {
                continue;
            }
            if (f.component < 0 || f.component >= n || f.side < 0 || f.side > 3 ||
                side_axis(f.side) != a) {
                throw PartitionError("component " + std::to_string(c) + " side " +
                                     std::to_string(s) + ": link to a missing face");
            }
            const auto& tb = components[f.component].block;
            if (!near(tb.width(t), blk.width(t))) {
                throw PartitionError("component " + std::to_string(c) + " side " +
                                     std::to_string(s) + ": non-conforming face mesh");
            }
            if (f.kind == FaceKind::Interface) {
                const FaceLink& back = components[f.component].faces[f.side];
                if (back.kind != FaceKind::Interface || back.component != c || back.side != s ||
                    side_upper(f.side) == side_upper(s) || tb.mode != blk.mode ||
                    tb.cells[t] != blk.cells[t] || !near(tb.box.lo[t], blk.box.lo[t])) {
                    throw PartitionError("component " + std::to_string(c) + " side " +
                                         std::to_string(s) + ": inconsistent interface");
                }
                if (f.component != c &&
                    !near(side_coordinate(tb, f.side), side_coordinate(blk, s))) {
                    throw PartitionError("component " + std::to_string(c) + " side " +
                                         std::to_string(s) + ": interface faces do not meet");
                }
            } else {
                const auto succ = model.postjump_of(blk.mode);
                if (!succ || *succ != tb.mode) {
                    throw PartitionError("component " + std::to_string(c) + " side " +
                                         std::to_string(s) +
                                         ": outflow must feed the successor mode");
                }
                const double shift = blk.box.lo[t] - tb.box.lo[t];
                if (!near(side_coordinate(tb, f.side), side_coordinate(blk, s)) ||
                    !near(shift, f.offset * blk.width(t)) || f.offset < 0 ||
                    f.offset + blk.cells[t] > tb.cells[t]) {
                    throw PartitionError("component " + std::to_string(c) + " side " +
                                         std::to_string(s) +
                                         ": outflow face is not covered by its S face");
                }
            }
        }
    }
}

DomainPartition build_partition(const LoadModel& model, const LoadParameters& params,
                                double control, const GridSpec& grid) {
    if (model.dim() != 2) {
        throw ModelError("the PDE solver handles two-dimensional models only");
    }
    DomainPartition p;
    switch (model.family()) {
        case ModelFamily::HvacEtp:
        case ModelFamily::PriceResponsiveHvac:
            p = hvac_partition(model, params, control, grid);
            break;
        case ModelFamily::Pev:
            p = pev_partition(model, control, grid);
            break;
    }
    p.validate(model);
    return p;
}

// ---------------------------------------------------------------------------
// Discretization
// ---------------------------------------------------------------------------

Discretization::Discretization(const LoadModel& model, const LoadParameters& params,
                               DomainPartition partition)
    : model_(&model), params_(params), partition_(std::move(partition)) {
    partition_.validate(model);
    const std::span<const double> theta(params_.theta);
    const std::span<const double> alpha(params_.alpha);
    const double u = partition_.control;
    const auto& comps = partition_.components;
    data_.resize(comps.size());

    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        auto& d = data_[c];
        const double scale = std::max(1.0, std::max(b.box.extent(0), b.box.extent(1)));
        for (int a = 0; a < 2; ++a) {
            d.velocity[a].assign(face_count(b, a), 0.0);
            d.diffusion[a].assign(b.size(), 0.0);
            const int na = b.cells[a];
            const int nt = b.cells[1 - a];
            for (int t = 0; t < nt; ++t) {
                for (int k = 0; k <= na; ++k) {
                    StateVector x(2);
                    x(a) = k == na ? b.box.hi[a] : b.lower(a, k);
                    x(1 - a) = b.center(1 - a, t);
                    d.velocity[a][face_at(b, a, k, t)] = model.drift(b.mode, x, theta)(a);
                }
            }
        }
        d.hazard.assign(b.size(), 0.0);
        d.jump_component.assign(b.size(), -1);
        d.jump_cell.assign(b.size(), 0);
        const auto succ = model.postjump_of(b.mode);
        for (int j = 0; j < b.cells[1]; ++j) {
            for (int i = 0; i < b.cells[0]; ++i) {
                const std::size_t k = b.index(i, j);
                const StateVector x = b.center_point(i, j);
                const NoiseMatrix big = model.diffusion(b.mode, x, theta).big_sigma;
                if (big.rows() == 2 && std::abs(big(0, 1)) > 1e-14 * (big.norm() + 1e-300)) {
                    throw ModelError("the PDE solver supports diagonal diffusion only");
                }
                d.diffusion[0][k] = big.rows() > 0 ? big(0, 0) : 0.0;
                d.diffusion[1][k] = big.rows() > 1 ? big(1, 1) : 0.0;
                d.diffusive[0] = d.diffusive[0] || d.diffusion[0][k] > 0.0;
                d.diffusive[1] = d.diffusive[1] || d.diffusion[1][k] > 0.0;
                const double rate = model.hazard(b.mode, x, u, alpha);
                if (rate <= 0.0) {
                    continue;
                }
                // Geometrically identical cell of the successor mode.
                const Box mine = cell_box(b, i, j);
                bool found = false;
                for (int tc : partition_.components_of(*succ)) {
                    const CellBlock& tb = comps[tc].block;
                    const auto hit = tb.locate(x);
                    if (!hit) {
                        continue;
                    }
                    const int ti = static_cast<int>(*hit % tb.cells[0]);
                    const int tj = static_cast<int>(*hit / tb.cells[0]);
                    const Box theirs = cell_box(tb, ti, tj);
                    bool same = true;
                    for (int a = 0; a < 2; ++a) {
                        same = same && std::abs(theirs.lo[a] - mine.lo[a]) <= kGeomTol * scale &&
                               std::abs(theirs.hi[a] - mine.hi[a]) <= kGeomTol * scale;
                    }
                    if (same) {
                        d.jump_component[k] = tc;
                        d.jump_cell[k] = *hit;
                        found = true;
                        break;
                    }
                }
                if (!found) {
                    std::ostringstream msg;
                    msg << "mass routing: cell (" << x(0) << ", " << x(1) << ") of mode " << b.mode
                        << " has no identical cell in mode " << *succ;
                    throw PartitionError(msg.str());
                }
                d.hazard[k] = rate;
                has_jumps_ = true;
                max_hazard_ = std::max(max_hazard_, rate);
            }
        }
    }

    // Interface faces carry one velocity, taken from the upper-side owner.
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        for (int s = 0; s < 4; ++s) {
            const FaceLink& f = comps[c].faces[s];
            if (f.kind != FaceKind::Interface || !side_upper(s)) {
                continue;
            }
            const int a = side_axis(s);
            const CellBlock& nb = comps[f.component].block;
            for (int t = 0; t < b.cells[1 - a]; ++t) {
                data_[f.component].velocity[a][face_at(nb, a, 0, t)] =
                    data_[c].velocity[a][face_at(b, a, b.cells[a], t)];
            }
        }
    }

    // Hand-off routes: G face cell -> S face cell(s) of the successor.
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        for (int s = 0; s < 4; ++s) {
            const FaceLink& f = comps[c].faces[s];
            if (f.kind != FaceKind::Outflow) {
                continue;
            }
            const int a = side_axis(s);
            const CellBlock& tb = comps[f.component].block;
            const FaceLink& across = comps[f.component].faces[f.side];
            const int k_src = side_upper(s) ? b.cells[a] : 0;
            const int k_tgt = side_upper(f.side) ? tb.cells[a] - 1 : 0;
            for (int t = 0; t < b.cells[1 - a]; ++t) {
                const int tt = t + f.offset;
                const std::size_t face = face_at(b, a, k_src, t);
                const std::size_t cell_t = cell_at(tb, a, k_tgt, tt);
                if (across.kind != FaceKind::Interface) {
                    data_[c].routes[s].push_back(Route{face, f.component, cell_t, 1.0});
                    continue;
                }
                const CellBlock& ub = comps[across.component].block;
                const int k_u = side_upper(across.side) ? ub.cells[a] - 1 : 0;
                const std::size_t cell_u = cell_at(ub, a, k_u, tt);
                const double sig = std::max(data_[f.component].diffusion[a][cell_t],
                                            data_[across.component].diffusion[a][cell_u]);
                const double v = data_[f.component]
                                     .velocity[a][face_at(tb, a, side_upper(f.side) ? tb.cells[a] : 0, tt)];
                if (sig > 0.0 || v == 0.0) {
                    data_[c].routes[s].push_back(Route{face, f.component, cell_t, 0.5});
                    data_[c].routes[s].push_back(Route{face, across.component, cell_u, 0.5});
                } else {
                    // Downwind side of the S face under the successor's drift.
                    const bool to_upper = v > 0.0;
                    const bool target_is_upper = !side_upper(f.side);
                    if (to_upper == target_is_upper) {
                        data_[c].routes[s].push_back(Route{face, f.component, cell_t, 1.0});
                    } else {
                        data_[c].routes[s].push_back(Route{face, across.component, cell_u, 1.0});
                    }
                }
            }
        }
    }
    cfl_ = compute_cfl();
}

// ---------------------------------------------------------------------------
// Flux, sweeps, boundary
// ---------------------------------------------------------------------------

namespace {

// Outward flux through a boundary face of the inner cell.
double boundary_outflow(FaceKind kind, double v_out, double p_in, double sig, double h) {
    switch (kind) {
        case FaceKind::Truncation:
            return (v_out > 0.0 ? v_out * p_in : 0.0) + 0.5 * sig * p_in / h;
        case FaceKind::Outflow:
            // Absorbing ghost -p_in where Sigma_nn > 0; advection only outwards.
            return (v_out > 0.0 ? v_out * p_in : 0.0) + (sig > 0.0 ? sig * p_in / h : 0.0);
        case FaceKind::Wall:
        case FaceKind::Interface:
            break;
    }
    return 0.0;
}

void flux_along(const DensityField& p, const Discretization& disc, int a,
                std::vector<std::vector<double>>& out) {
    const auto& comps = disc.partition().components;
    out.resize(comps.size());
    for (std::size_t c = 0; c < comps.size(); ++c) {
        out[c].assign(face_count(comps[c].block, a), 0.0);
    }
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        const auto& d = disc.data(c);
        const auto& vel = d.velocity[a];
        const auto& sig = d.diffusion[a];
        const auto& val = p.values[c];
        auto& fx = out[c];
        const int na = b.cells[a];
        const int nt = b.cells[1 - a];
        const double h = b.width(a);
        const double inv_h = 1.0 / h;

        // Interior faces. Cells are x1-fastest, so both axes reduce to a run
        // of faces whose left/right cells sit `stride` apart.
        const bool diffusive = d.diffusive[a];
        const std::size_t n0 = static_cast<std::size_t>(b.cells[0]);
        for (int t = 0; t < nt; ++t) {
            std::size_t f0, c0, stride, fstep;
            if (a == 0) {
                f0 = static_cast<std::size_t>(t) * (n0 + 1) + 1;
                c0 = static_cast<std::size_t>(t) * n0;
                stride = 1;
                fstep = 1;
            } else {
                f0 = n0 + static_cast<std::size_t>(t);
                c0 = static_cast<std::size_t>(t);
                stride = n0;
                fstep = n0;
            }
            const double* pv = val.data() + c0;
            const double* sv = sig.data() + c0;
            const double* vv = vel.data() + f0;
            double* out_f = fx.data() + f0;
            for (int k = 1; k < na; ++k) {
                const double pl = pv[0];
                const double pr = pv[stride];
                const double v = *vv;
                double g = v > 0.0 ? v * pl : v * pr;
                if (diffusive) {
                    g -= 0.5 * (sv[stride] * pr - sv[0] * pl) * inv_h;
                    sv += stride;
                }
                *out_f = g;
                pv += stride;
                vv += fstep;
                out_f += fstep;
            }
        }
        for (int upper = 0; upper < 2; ++upper) {
            const int s = side_index(a, upper == 1);
            const FaceLink& link = comps[c].faces[s];
            const int k_face = upper ? na : 0;
            const int k_cell = upper ? na - 1 : 0;
            const double sign = upper ? 1.0 : -1.0;
            if (link.kind == FaceKind::Interface) {
                if (!upper) {
                    continue;  // filled by the upper-side owner
                }
                const CellBlock& nb = comps[link.component].block;
                const auto& nval = p.values[link.component];
                const auto& nsig = disc.data(link.component).diffusion[a];
                const double dist = 0.5 * (h + nb.width(a));
                for (int t = 0; t < nt; ++t) {
                    const std::size_t l = cell_at(b, a, k_cell, t);
                    const std::size_t r = cell_at(nb, a, 0, t);
                    const std::size_t f = face_at(b, a, k_face, t);
                    const double v = vel[f];
                    const double adv = v > 0.0 ? v * val[l] : v * nval[r];
                    const double g = adv - 0.5 * (nsig[r] * nval[r] - sig[l] * val[l]) / dist;
                    fx[f] = g;
                    out[link.component][face_at(nb, a, 0, t)] = g;
                }
                continue;
            }
            if (link.kind == FaceKind::Wall) {
                continue;
            }
            for (int t = 0; t < nt; ++t) {
                const std::size_t in = cell_at(b, a, k_cell, t);
                const std::size_t f = face_at(b, a, k_face, t);
                fx[f] = sign * boundary_outflow(link.kind, sign * vel[f], val[in], sig[in], h);
            }
        }
    }
}

}  // namespace

FluxField compute_flux(const DensityField& p, const Discretization& disc) {
    FluxField out;
    flux_along(p, disc, 0, out.faces[0]);
    flux_along(p, disc, 1, out.faces[1]);
    return out;
}

void apply_sweep(DensityField& p, const FluxField& flux, const Discretization& disc, int axis,
                 double dt) {
    const auto& comps = disc.partition().components;
    const int a = axis;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        const auto& fx = flux.faces[a][c];
        auto& val = p.values[c];
        const double r = dt / b.width(a);
        const int na = b.cells[a];
        const int nt = b.cells[1 - a];
        if (a == 0) {
            const std::size_t n0 = static_cast<std::size_t>(na);
            for (int t = 0; t < nt; ++t) {
                double* pv = val.data() + static_cast<std::size_t>(t) * n0;
                const double* f = fx.data() + static_cast<std::size_t>(t) * (n0 + 1);
                for (std::size_t k = 0; k < n0; ++k) {
                    pv[k] -= r * (f[k + 1] - f[k]);
                }
            }
        } else {
            // Faces along x2 share the cell layout shifted by one row.
            const std::size_t n = b.size();
            const std::size_t n0 = static_cast<std::size_t>(nt);
            const double* f = fx.data();
            for (std::size_t k = 0; k < n; ++k) {
                val[k] -= r * (f[k + n0] - f[k]);
            }
        }
    }
}

BoundaryReport apply_boundary(DensityField& p, const FluxField& flux, const Discretization& disc,
                              int axis, double dt, double balance_tolerance) {
    const auto& comps = disc.partition().components;
    const int a = axis;
    BoundaryReport rep;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        const auto& fx = flux.faces[a][c];
        const double ht = b.width(1 - a);
        for (int upper = 0; upper < 2; ++upper) {
            const int s = side_index(a, upper == 1);
            const FaceLink& link = comps[c].faces[s];
            const double sign = upper ? 1.0 : -1.0;
            if (link.kind == FaceKind::Truncation) {
                const int k_face = upper ? b.cells[a] : 0;
                for (int t = 0; t < b.cells[1 - a]; ++t) {
                    rep.escaped += sign * fx[face_at(b, a, k_face, t)] * dt * ht;
                }
            } else if (link.kind == FaceKind::Outflow) {
                const auto& routes = disc.data(c).routes[s];
                std::size_t last_face = std::numeric_limits<std::size_t>::max();
                for (const auto& r : routes) {
                    const double m = sign * fx[r.face] * dt * ht;
                    if (r.face != last_face) {
                        rep.outflow += m;
                        last_face = r.face;
                    }
                    const double vol = comps[r.component].block.cell_volume();
                    const double dp = m * r.fraction / vol;
                    p.values[r.component][r.cell] += dp;
                    rep.injected += dp * vol;
                }
            }
        }
    }
    if (!(std::abs(rep.residual()) <= balance_tolerance)) {
        std::ostringstream msg;
        msg << "interface flux balance violated: outflow " << rep.outflow << ", injected "
            << rep.injected;
        throw ConservationError(msg.str());
    }
    return rep;
}

BoundaryReport advect_diffuse_step(DensityField& p, const Discretization& disc, double dt,
                                   bool reverse, double balance_tolerance) {
    const double limit = cfl_dt(disc);
    if (dt > limit * (1.0 + 1e-12)) {
        std::ostringstream msg;
        msg << "time step " << dt << " h exceeds the CFL bound " << limit << " h";
        throw CflError(msg.str(), limit);
    }
    BoundaryReport total;
    thread_local FluxField flux;
    for (int n = 0; n < 2; ++n) {
        const int a = reverse ? 1 - n : n;
        flux_along(p, disc, a, flux.faces[a]);
        apply_sweep(p, flux, disc, a, dt);
        const BoundaryReport r = apply_boundary(p, flux, disc, a, dt, balance_tolerance);
        total.outflow += r.outflow;
        total.injected += r.injected;
        total.escaped += r.escaped;
    }
    return total;
}

void jump_exchange_step(DensityField& p, const Discretization& disc, double dt) {
    if (!disc.has_jumps()) {
        return;
    }
    if (disc.max_hazard() * dt > 0.5) {
        throw CflError("jump exchange needs lambda * dt <= 0.5", 0.5 / disc.max_hazard());
    }
    const auto& comps = disc.partition().components;
    const std::vector<std::vector<double>> old = p.values;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const auto& d = disc.data(c);
        const double vol = comps[c].block.cell_volume();
        for (std::size_t k = 0; k < d.hazard.size(); ++k) {
            if (d.jump_component[k] < 0) {
                continue;
            }
            const double moved = d.hazard[k] * old[c][k] * dt;
            const int tc = d.jump_component[k];
            p.values[c][k] -= moved;
            p.values[tc][d.jump_cell[k]] += moved * vol / comps[tc].block.cell_volume();
        }
    }
}

double Discretization::compute_cfl() const {
    const Discretization& disc = *this;
    const auto& comps = disc.partition().components;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const auto& d = disc.data(c);
        for (int a = 0; a < 2; ++a) {
            const double h = comps[c].block.width(a);
            double vmax = 0.0;
            for (double v : d.velocity[a]) {
                vmax = std::max(vmax, std::abs(v));
            }
            double smax = 0.0;
            for (double s : d.diffusion[a]) {
                smax = std::max(smax, s);
            }
            if (vmax > 0.0) {
                best = std::min(best, h / vmax);
            }
            if (smax > 0.0) {
                best = std::min(best, h * h / (2.0 * smax));
            }
        }
    }
    best *= 0.9;
    if (disc.max_hazard() > 0.0) {
        best = std::min(best, 0.5 / disc.max_hazard());
    }
    return best;
}

double cfl_dt(const Discretization& disc) { return disc.cfl_limit(); }

double stable_dt(const Discretization& disc) {
    const auto& comps = disc.partition().components;
    double rate = 0.0;
    for (std::size_t c = 0; c < comps.size(); ++c) {
        const CellBlock& b = comps[c].block;
        const auto& d = disc.data(c);
        for (int a = 0; a < 2; ++a) {
            const double h = b.width(a);
            for (int t = 0; t < b.cells[1 - a]; ++t) {
                for (int k = 0; k < b.cells[a]; ++k) {
                    const double v = std::max(std::abs(d.velocity[a][face_at(b, a, k, t)]),
                                              std::abs(d.velocity[a][face_at(b, a, k + 1, t)]));
                    const double s = d.diffusion[a][cell_at(b, a, k, t)];
                    rate = std::max(rate, v / h + 2.0 * s / (h * h));
                }
            }
        }
    }
    double dt = rate > 0.0 ? 0.9 / rate : std::numeric_limits<double>::infinity();
    if (disc.max_hazard() > 0.0) {
        dt = std::min(dt, 0.45 / disc.max_hazard());
    }
    return std::min(dt, cfl_dt(disc));
}

double total_mass(const DensityField& p) { return p.total_mass(); }

double aggregated_power(const DensityField& p, const LoadModel& model,
                        const LoadParameters& params, double population) {
    double y = 0.0;
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        y += model.output(p.blocks[b].mode, params.theta) * p.block_mass(b);
    }
    return population * y;
}

// ---------------------------------------------------------------------------
// Event remap and initial densities
// ---------------------------------------------------------------------------

double remap_density(const DensityField& p, const DomainPartition& from, DensityField& target,
                     const DomainPartition& to, const LoadModel& model) {
    double escaped = 0.0;
    for (std::size_t c = 0; c < from.components.size(); ++c) {
        const CellBlock& b = from.components[c].block;
        const std::vector<int> same = to.components_of(b.mode);
        std::vector<int> next;
        if (const auto succ = model.postjump_of(b.mode)) {
            next = to.components_of(*succ);
        }
        for (int j = 0; j < b.cells[1]; ++j) {
            for (int i = 0; i < b.cells[0]; ++i) {
                const double dens = p.values[c][b.index(i, j)];
                if (dens == 0.0) {
                    continue;
                }
                const Box cell = cell_box(b, i, j);
                const double cell_area = area(cell);
                double placed = 0.0;
                auto deposit = [&](int tc, bool exclude_same) {
                    const CellBlock& tb = to.components[tc].block;
                    const Box o = intersect(cell, tb.box);
                    if (!(o.extent(0) > 0.0 && o.extent(1) > 0.0)) {
                        return;
                    }
                    const auto [i0, i1] = index_range(tb, 0, o.lo[0], o.hi[0]);
                    const auto [j0, j1] = index_range(tb, 1, o.lo[1], o.hi[1]);
                    for (int tj = j0; tj < j1; ++tj) {
                        for (int ti = i0; ti < i1; ++ti) {
                            const Box piece = intersect(o, cell_box(tb, ti, tj));
                            double a = area(piece);
                            if (a <= 0.0) {
                                continue;
                            }
                            if (exclude_same) {
                                for (int sc : same) {
                                    a -= area(intersect(piece, to.components[sc].block.box));
                                }
                                if (a <= 0.0) {
                                    continue;
                                }
                            }
                            target.values[tc][tb.index(ti, tj)] += dens * a / tb.cell_volume();
                            placed += a;
                        }
                    }
                };
                for (int tc : same) {
                    deposit(tc, false);
                }
                if (placed < cell_area * (1.0 - 1e-12)) {
                    for (int tc : next) {
                        deposit(tc, true);
                    }
                }
                escaped += dens * std::max(0.0, cell_area - placed);
            }
        }
    }
    return escaped;
}

DensityField uniform_density(const DomainPartition& partition,
                             const std::vector<double>& mass_per_mode, const Box& region) {
    DensityField f = DensityField::zeros(partition.blocks());
    for (std::size_t q = 0; q < mass_per_mode.size(); ++q) {
        const double m = mass_per_mode[q];
        if (m == 0.0) {
            continue;
        }
        const double placed = add_uniform_mass(f, static_cast<Mode>(q), region, m);
        if (std::abs(placed - m) > 1e-12 * std::max(1.0, std::abs(m))) {
            throw PartitionError("initial region is not covered by the components of mode " +
                                 std::to_string(q));
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

void PdeOptions::validate() const {
    if (!(end > start)) {
        throw ConfigError("pde: end time must exceed the start time");
    }
    if (!(dt >= 0.0)) {
        throw ConfigError("pde: dt must be nonnegative (0 selects the stable step)");
    }
    if (!(output_interval > 0.0)) {
        throw ConfigError("pde: output_interval must be positive");
    }
    if (!(mass_tolerance > 0.0)) {
        throw ConfigError("pde: mass_tolerance must be positive");
    }
}

bool PdeResult::within_tolerance(const PdeOptions& options) const {
    return max_mass_error <= options.mass_tolerance && escaped <= options.escape_tolerance &&
           clipped <= options.clip_tolerance && max_balance_residual <= options.balance_tolerance;
}

namespace {

bool same_geometry(const DomainPartition& a, const DomainPartition& b) {
    if (a.components.size() != b.components.size()) {
        return false;
    }
    for (std::size_t c = 0; c < a.components.size(); ++c) {
        const auto& u = a.components[c].block;
        const auto& v = b.components[c].block;
        if (u.mode != v.mode || u.cells != v.cells || u.box.lo != v.box.lo ||
            u.box.hi != v.box.hi) {
            return false;
        }
    }
    return true;
}

}  // namespace

PdeResult solve(const LoadModel& model, const LoadParameters& params, const DensityField& init,
                const ControlSchedule& control, const GridSpec& grid, const PdeOptions& options) {
    options.validate();
    DomainPartition partition = build_partition(model, params, control.value_at(options.start), grid);
    DensityField p = init;
    if (!p.same_layout(DensityField::zeros(partition.blocks()))) {
        throw StructureError("initial density is not laid out on the solver's partition");
    }
    p.time = options.start;
    const double m0 = p.total_mass();
    if (std::abs(m0 - 1.0) > options.mass_tolerance) {
        std::ostringstream msg;
        msg << "initial density has mass " << m0 << ", expected 1";
        throw ConservationError(msg.str());
    }

    auto disc = std::make_unique<Discretization>(model, params, partition);
    auto choose_dt = [&] {
        if (options.dt > 0.0) {
            return options.dt;
        }
        return stable_dt(*disc);
    };
    double dt = choose_dt();

    PdeResult res;
    res.power.source = SeriesSource::Pde;
    res.active_mass.source = SeriesSource::Pde;
    const auto outputs = uniform_times(options.start, options.end, options.output_interval);
    std::vector<double> snaps = options.snapshot_times;
    std::sort(snaps.begin(), snaps.end());
    std::size_t next_out = 0;
    std::size_t next_snap = 0;
    while (next_snap < snaps.size() && snaps[next_snap] < options.start) {
        ++next_snap;
    }
    const auto& modes = model.modes();
    std::vector<bool> active(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) {
        active[m] = model.output(modes[m], params.theta) > 0.0;
    }

    struct Summary {
        double t = 0.0;
        double power = 0.0;
        double on = 0.0;
        double total = 0.0;
        std::vector<double> mm;
    };
    auto summarize = [&](double at) {
        Summary s;
        s.t = at;
        s.mm.resize(modes.size());
        for (std::size_t m = 0; m < modes.size(); ++m) {
            s.mm[m] = p.mode_mass(modes[m]);
            s.on += active[m] ? s.mm[m] : 0.0;
        }
        s.power = aggregated_power(p, model, params);
        s.total = p.total_mass();
        return s;
    };

    // Steps are not shortened to hit output times; outputs falling inside a
    // step are interpolated linearly between its end states.
    double t = options.start;
    std::optional<Summary> before;
    // `strict` records only outputs before t (used ahead of an event remap).
    auto record = [&](bool strict = false) {
        const double upto = strict ? t - 1e-12 : t + 1e-12;
        if (next_out < outputs.size() && outputs[next_out] <= upto) {
            const Summary now = summarize(t);
            while (next_out < outputs.size() && outputs[next_out] <= upto) {
                const double o = outputs[next_out];
                Summary v = now;
                if (before && o < t - 1e-12 && t > before->t) {
                    const double w = (o - before->t) / (t - before->t);
                    auto lerp = [w](double a, double b) { return a + w * (b - a); };
                    v.power = lerp(before->power, now.power);
                    v.on = lerp(before->on, now.on);
                    v.total = lerp(before->total, now.total);
                    for (std::size_t m = 0; m < v.mm.size(); ++m) {
                        v.mm[m] = lerp(before->mm[m], now.mm[m]);
                    }
                }
                res.power.times.push_back(o);
                res.power.values.push_back(v.power);
                res.active_mass.times.push_back(o);
                res.active_mass.values.push_back(v.on);
                res.total_mass.push_back(v.total);
                res.mode_mass.push_back(std::move(v.mm));
                ++next_out;
            }
        }
        while (next_snap < snaps.size() && snaps[next_snap] <= t + 1e-12) {
            DensityField s = p;
            s.time = snaps[next_snap];
            res.snapshots.push_back(std::move(s));
            ++next_snap;
        }
    };
    record();

    double next_event = control.next_change_after(t);
    std::size_t step = 0;
    while (t < options.end - 1e-12) {
        double target = std::min(options.end, next_event);
        if (next_snap < snaps.size()) {
            target = std::min(target, snaps[next_snap]);
        }
        const double h = std::min(dt, target - t);
        before.reset();
        if (next_out < outputs.size() && outputs[next_out] < t + h - 1e-12) {
            before = summarize(t);
        }
        const BoundaryReport rep =
            advect_diffuse_step(p, *disc, h, (step % 2) == 1, options.balance_tolerance);
        if (options.enable_jumps) {
            jump_exchange_step(p, *disc, h);
        }
        for (std::size_t c = 0; c < p.values.size(); ++c) {
            const double vol = p.blocks[c].cell_volume();
            for (double& v : p.values[c]) {
                if (v < 0.0) {
                    res.clipped += -v * vol;
                    v = 0.0;
                }
            }
        }
        ++step;
        t = (target - (t + h) <= 1e-12 * std::max(1.0, std::abs(target))) ? target : t + h;
        p.time = t;
        res.escaped += rep.escaped;
        res.max_balance_residual = std::max(res.max_balance_residual, std::abs(rep.residual()));

        if (t == next_event) {
            record(true);
            const double u = control.value_at(t);
            DomainPartition moved = build_partition(model, params, u, grid);
            if (!same_geometry(moved, partition)) {
                DensityField q = DensityField::zeros(moved.blocks(), t);
                res.escaped += remap_density(p, partition, q, moved, model);
                p = std::move(q);
            }
            partition = std::move(moved);
            disc = std::make_unique<Discretization>(model, params, partition);
            dt = choose_dt();
            next_event = control.next_change_after(t);
        }

        const double err = std::abs(p.total_mass() - 1.0);
        res.max_mass_error = std::max(res.max_mass_error, err);
        if (err > options.mass_tolerance) {
            std::ostringstream msg;
            msg << "mass drift " << err << " exceeds " << options.mass_tolerance << " at t = " << t
                << " h (escaped " << res.escaped << ", clipped " << res.clipped << ")";
            throw ConservationError(msg.str());
        }
        record();
    }
    res.final_partition = partition;
    res.dt = dt;
    res.steps = step;
    res.power.metadata["dt"] = std::to_string(dt);
    res.power.metadata["steps"] = std::to_string(step);
    return res;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

void write_density_csv(std::ostream& out, const DensityField& p, const DomainPartition& partition) {
    if (p.blocks.size() != partition.components.size()) {
        throw StructureError("density and partition have different component counts");
    }
    const auto old_flags = out.flags();
    const auto old_prec = out.precision();
    out.precision(10);
    out << "mode,component,x1,x2,p\n";
    for (std::size_t c = 0; c < p.blocks.size(); ++c) {
        const CellBlock& b = p.blocks[c];
        for (int j = 0; j < b.cells[1]; ++j) {
            for (int i = 0; i < b.cells[0]; ++i) {
                out << b.mode << ',' << partition.components[c].label << ',' << b.center(0, i)
                    << ',' << b.center(1, j) << ',' << p.values[c][b.index(i, j)] << '\n';
            }
        }
    }
    out.flags(old_flags);
    out.precision(old_prec);
}

nlohmann::json to_json(const DomainPartition& partition) {
    nlohmann::json j;
    j["family"] = to_string(partition.family);
    j["control"] = partition.control;
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : partition.components) {
        nlohmann::json faces = nlohmann::json::array();
        for (int s = 0; s < 4; ++s) {
            const FaceLink& f = c.faces[s];
            nlohmann::json face = {{"axis", side_axis(s)},
                                   {"side", side_upper(s) ? "upper" : "lower"},
                                   {"kind", to_string(f.kind)}};
            if (f.kind == FaceKind::Interface || f.kind == FaceKind::Outflow) {
                face["component"] = f.component;
                face["target_side"] = f.side;
                face["offset"] = f.offset;
            }
            faces.push_back(face);
        }
        comps.push_back({{"mode", c.block.mode},
                         {"label", c.label},
                         {"lower", {c.block.box.lo[0], c.block.box.lo[1]}},
                         {"upper", {c.block.box.hi[0], c.block.box.hi[1]}},
                         {"cells", {c.block.cells[0], c.block.cells[1]}},
                         {"faces", faces}});
    }
    j["components"] = comps;
    return j;
}

nlohmann::json to_json(const GridSpec& g) {
    return {{"cells_x1", g.cells_x1},   {"cells_x2", g.cells_x2},   {"margin", g.margin},
            {"pev_lower", g.pev_lower}, {"pev_upper", g.pev_upper}, {"pev_cell", g.pev_cell}};
}

GridSpec grid_spec_from_json(const nlohmann::json& j) {
    GridSpec g;
    try {
        g.cells_x1 = j.value("cells_x1", g.cells_x1);
        g.cells_x2 = j.value("cells_x2", g.cells_x2);
        g.margin = j.value("margin", g.margin);
        g.pev_lower = j.value("pev_lower", g.pev_lower);
        g.pev_upper = j.value("pev_upper", g.pev_upper);
        g.pev_cell = j.value("pev_cell", g.pev_cell);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("grid: ") + e.what());
    }
    if (g.cells_x1 < 2) {
        throw ConfigError("grid.cells_x1: need at least 2 cells");
    }
    if (g.cells_x2 < 1) {
        throw ConfigError("grid.cells_x2: need at least 1 cell");
    }
    if (!(g.margin > 0.0)) {
        throw ConfigError("grid.margin: must be positive");
    }
    return g;
}

}  // namespace aggload
