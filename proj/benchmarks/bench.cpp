#include "aggload/hetero.hpp"
#include "aggload/mc.hpp"
#include "aggload/pde.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace aggload;

namespace {

// One split advection-diffusion step of a noisy nominal thermostat on an n x 3n/4 grid.
void BM_AdvectDiffuseStep(benchmark::State& state) {
    EtpParameters e = default_etp_parameters();
    e.noise_sigma = 0.5;
    const LoadModel m = make_hvac_etp(e);
    GridSpec g;
    g.cells_x1 = static_cast<int>(state.range(0));
    g.cells_x2 = 3 * g.cells_x1 / 4;
    const Discretization disc(m, pack(e), build_partition(m, pack(e), 0.0, g));
    DensityField p = uniform_density(disc.partition(), {0.5, 0.5}, Box{{73.0, 73.0}, {75.0, 75.0}});
    const double dt = stable_dt(disc);
    bool reverse = false;
    for (auto _ : state) {
        benchmark::DoNotOptimize(advect_diffuse_step(p, disc, dt, reverse));
        reverse = !reverse;
    }
    state.SetItemsProcessed(state.iterations() * 4 * g.cells_x1 * g.cells_x2);
}
BENCHMARK(BM_AdvectDiffuseStep)->Arg(40)->Arg(80)->Arg(160);

// One simulated hour of a homogeneous population at dt = 1e-3.
void BM_PopulationHour(benchmark::State& state) {
    const EtpParameters e = default_etp_parameters();
    const LoadModel m = make_hvac_etp(e);
    const auto n = static_cast<std::size_t>(state.range(0));
    const std::vector<LoadParameters> params(n, pack(e));
    std::vector<HybridState> inits;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = 73.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
        inits.push_back({i % 2 == 0 ? hvac_layout::kOff : hvac_layout::kOn, make_state({x, x})});
    }
    SimulationOptions o;
    o.horizon = 1.0;
    o.dt = 1e-3;
    o.output_interval = 0.01;
    for (auto _ : state) {
        benchmark::DoNotOptimize(simulate_population(m, params, inits, o, ControlSchedule{}, 1));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(n) * 1000);
}
BENCHMARK(BM_PopulationHour)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    std::vector<std::vector<double>> x(2000, std::vector<double>(5));
    for (auto& row : x) {
        for (double& v : row) {
            v = z(rng);
        }
    }
    const auto k = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(kmeans(x, k, 2));
    }
}
BENCHMARK(BM_KMeans)->Arg(1)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace
