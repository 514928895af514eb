#include "aggload/hetero.hpp"

#include "aggload/errors.hpp"
#include "aggload/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace aggload {

CoordinateSpec CoordinateSpec::uniform(std::string name, double lo, double hi) {
    CoordinateSpec c;
    c.name = std::move(name);
    c.kind = Kind::Uniform;
    c.lo = lo;
    c.hi = hi;
    return c;
}

CoordinateSpec CoordinateSpec::point(std::string name, double value) {
    return samples(std::move(name), {value});
}

CoordinateSpec CoordinateSpec::samples(std::string name, std::vector<double> values) {
    CoordinateSpec c;
    c.name = std::move(name);
    c.kind = Kind::Samples;
    c.values = std::move(values);
    return c;
}

double CoordinateSpec::lower_bound() const {
    if (kind == Kind::Uniform) {
        return lo;
    }
    return *std::min_element(values.begin(), values.end());
}

double CoordinateSpec::upper_bound() const {
    if (kind == Kind::Uniform) {
        return hi;
    }
    return *std::max_element(values.begin(), values.end());
}

void ParameterDistribution::validate() const {
    if (!realize) {
        throw ConfigError("parameter distribution has no realization map");
    }
    for (const auto& c : coordinates) {
        if (c.kind == CoordinateSpec::Kind::Uniform) {
            if (!std::isfinite(c.lo) || !std::isfinite(c.hi) || !(c.lo <= c.hi)) {
                throw ConfigError("parameter '" + c.name + "': bounds must be finite and ordered");
            }
        } else if (c.values.empty() ||
                   !std::all_of(c.values.begin(), c.values.end(),
                                [](double v) { return std::isfinite(v); })) {
            throw ConfigError("parameter '" + c.name + "': sample list empty or non-finite");
        }
    }
}

bool ParameterDistribution::is_point_mass() const {
    return std::all_of(coordinates.begin(), coordinates.end(), [](const CoordinateSpec& c) {
        return c.lower_bound() == c.upper_bound();
    });
}

ParameterDistribution hvac_distribution(const HousePrior& prior, double noise_sigma) {
    const auto& h = prior.nominal;
    const double s = prior.relative_spread;
    auto spread = [s](const char* name, double nominal) {
        return CoordinateSpec::uniform(name, nominal * (1.0 - s), nominal * (1.0 + s));
    };
    ParameterDistribution d;
    d.coordinates = {
        spread("air_heat_capacity", h.air_heat_capacity),
        spread("mass_heat_capacity", h.mass_heat_capacity),
        spread("envelope_conductance", h.envelope_conductance),
        spread("mass_conductance", h.mass_conductance),
        spread("internal_gain", h.internal_gain),
        CoordinateSpec::uniform("setpoint", prior.setpoint_min, prior.setpoint_max),
    };
    d.realize = [prior, noise_sigma](std::span<const double> c) {
        HouseParameters house = prior.nominal;
        house.air_heat_capacity = c[0];
        house.mass_heat_capacity = c[1];
        house.envelope_conductance = c[2];
        house.mass_conductance = c[3];
        house.internal_gain = c[4];
        house.setpoint = c[5];
        house.cooling_capacity = prior.sized_capacity(house);
        const EtpParameters etp = etp_from_house(house, noise_sigma);
        validate_etp(etp);
        return pack(etp);
    };
    return d;
}

ParameterDistribution hvac_point_distribution(const EtpParameters& params) {
    validate_etp(params);
    ParameterDistribution d;
    d.coordinates = {CoordinateSpec::point("setpoint", params.setpoint)};
    d.realize = [params](std::span<const double> c) {
        EtpParameters p = params;
        p.setpoint = c[0];
        return pack(p);
    };
    return d;
}

std::vector<LoadParameters> sample_parameters(const ParameterDistribution& dist, std::size_t n,
                                              std::uint64_t seed) {
    dist.validate();
    if (n == 0) {
        throw ConfigError("sample_parameters: n must be at least 1");
    }
    RandomStream rng(seed, 0x70617261ULL);
    std::vector<LoadParameters> out;
    out.reserve(n);
    std::vector<double> coords(dist.coordinates.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < coords.size(); ++c) {
            const auto& spec = dist.coordinates[c];
            if (spec.kind == CoordinateSpec::Kind::Uniform) {
                coords[c] = rng.uniform(spec.lo, spec.hi);
            } else {
                const auto k = static_cast<std::size_t>(rng.uniform() *
                                                        static_cast<double>(spec.values.size()));
                coords[c] = spec.values[std::min(k, spec.values.size() - 1)];
            }
        }
        out.push_back(dist.realize(coords));
    }
    return out;
}

std::vector<double> FeatureMap::extract(const LoadParameters& p) const {
    std::vector<double> f;
    f.reserve(size());
    for (auto i : theta_indices) {
        f.push_back(p.theta.at(i));
    }
    for (auto i : alpha_indices) {
        f.push_back(p.alpha.at(i));
    }
    return f;
}

FeatureMap hvac_features() {
    using namespace hvac_layout;
    return FeatureMap{{kA00, kA01, kA10, kA11, kBOff0, kBOff1, kBOn0, kBOn1}, {kSetpoint}};
}

FeatureMap pev_features() { return FeatureMap{{pev_layout::kChargeRate}, {}}; }

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

ClusterSet kmeans(const std::vector<std::vector<double>>& samples, std::size_t n_clusters,
                  std::uint64_t seed, const KMeansOptions& options) {
    const std::size_t n = samples.size();
    if (n == 0 || n_clusters < 1 || n_clusters > n) {
        throw ConfigError("kmeans: need 1 <= n_clusters <= n");
    }
    const std::size_t dim = samples.front().size();
    for (const auto& s : samples) {
        if (s.size() != dim) {
            throw StructureError("kmeans: samples differ in dimension");
        }
    }

    // Standardize columns; constant columns are centered only.
    std::vector<double> mean(dim, 0.0), scale(dim, 1.0);
    for (const auto& s : samples) {
        for (std::size_t d = 0; d < dim; ++d) {
            mean[d] += s[d];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(n);
    }
    for (std::size_t d = 0; d < dim; ++d) {
        double var = 0.0;
        for (const auto& s : samples) {
            var += (s[d] - mean[d]) * (s[d] - mean[d]);
        }
        const double sd = std::sqrt(var / static_cast<double>(n));
        scale[d] = sd > 1e-300 * std::max(1.0, std::abs(mean[d])) ? sd : 1.0;
    }
    std::vector<double> z(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 0; d < dim; ++d) {
            z[i * dim + d] = (samples[i][d] - mean[d]) / scale[d];
        }
    }
    auto row = [&](std::size_t i) { return std::span<const double>(z.data() + i * dim, dim); };

    // k-means++ seeding.
    RandomStream rng(seed, 0x6b6d65616e73ULL);
    std::vector<double> centers(n_clusters * dim);
    auto center = [&](std::size_t k) { return std::span<double>(centers.data() + k * dim, dim); };
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> chosen(n, 0);
    std::size_t first = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * n));
    std::copy_n(row(first).begin(), dim, center(0).begin());
    chosen[first] = 1;
    for (std::size_t k = 1; k < n_clusters; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], squared_distance(row(i), center(k - 1)));
            total += chosen[i] ? 0.0 : d2[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) {
                    continue;
                }
                target -= d2[i];
                if (target <= 0.0 && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {
                for (std::size_t i = n; i-- > 0;) {
                    if (!chosen[i] && d2[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        }
        if (pick == n) {
            // every remaining sample duplicates a center
            for (std::size_t i = 0; i < n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        chosen[pick] = 1;
        std::copy_n(row(pick).begin(), dim, center(k).begin());
    }

    // Lloyd iterations.
    std::vector<std::size_t> assign(n, n_clusters);
    std::vector<std::size_t> counts(n_clusters, 0);
    int iter = 0;
    for (; iter < options.max_iterations; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < n_clusters; ++k) {
                const double d = squared_distance(row(i), center(k));
                if (d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) {
            break;
        }
        std::fill(centers.begin(), centers.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto c = center(assign[i]);
            for (std::size_t d = 0; d < dim; ++d) {
                c[d] += row(i)[d];
            }
            ++counts[assign[i]];
        }
        for (std::size_t k = 0; k < n_clusters; ++k) {
            if (counts[k] > 0) {
                for (auto& v : center(k)) {
                    v /= static_cast<double>(counts[k]);
                }
            }
        }
        for (std::size_t k = 0; k < n_clusters; ++k) {
            if (counts[k] > 0) {
                continue;
            }
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (counts[assign[i]] <= 1) {
                    continue;
                }
                const double d = squared_distance(row(i), center(assign[i]));
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far_d < 0.0) {
                throw StructureError("kmeans: cannot re-seed an empty cluster");
            }
            --counts[assign[far]];
            assign[far] = k;
            counts[k] = 1;
            std::copy_n(row(far).begin(), dim, center(k).begin());
        }
    }

    // Final assignment is the fixed point (or the cap); recompute centers from
    // it so weights, centers and distance agree.
    std::fill(centers.begin(), centers.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
        auto c = center(assign[i]);
        for (std::size_t d = 0; d < dim; ++d) {
            c[d] += row(i)[d];
        }
        ++counts[assign[i]];
    }
    for (std::size_t k = 0; k < n_clusters; ++k) {
        for (auto& v : center(k)) {
            v /= static_cast<double>(std::max<std::size_t>(counts[k], 1));
        }
    }

    ClusterSet out;
    out.seed = seed;
    out.iterations = iter;
    out.assignment = assign;
    out.sizes = counts;
    for (std::size_t i = 0; i < n; ++i) {
        out.within_cluster_distance += std::sqrt(squared_distance(row(i), center(assign[i])));
    }
    out.weights.resize(n_clusters);
    out.centers.assign(n_clusters, std::vector<double>(dim));
    for (std::size_t k = 0; k < n_clusters; ++k) {
        out.weights[k] = static_cast<double>(counts[k]) / static_cast<double>(n);
        for (std::size_t d = 0; d < dim; ++d) {
            out.centers[k][d] = mean[d] + scale[d] * center(k)[d];
        }
    }
    return out;
}

std::vector<LoadParameters> cluster_parameters(const std::vector<LoadParameters>& samples,
                                               const ClusterSet& clusters,
                                               const FeatureMap& features) {
    if (samples.size() != clusters.assignment.size()) {
        throw StructureError("cluster_parameters: assignment does not match the samples");
    }
    const std::size_t k_count = clusters.centers.size();
    const std::size_t n_theta = samples.front().theta.size();
    const std::size_t n_alpha = samples.front().alpha.size();
    std::vector<LoadParameters> reps(k_count, LoadParameters{std::vector<double>(n_theta, 0.0),
                                                             std::vector<double>(n_alpha, 0.0)});
    std::vector<std::size_t> counts(k_count, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& r = reps[clusters.assignment[i]];
        for (std::size_t t = 0; t < n_theta; ++t) {
            r.theta[t] += samples[i].theta[t];
        }
        for (std::size_t a = 0; a < n_alpha; ++a) {
            r.alpha[a] += samples[i].alpha[a];
        }
        ++counts[clusters.assignment[i]];
    }
    for (std::size_t k = 0; k < k_count; ++k) {
        const double c = static_cast<double>(std::max<std::size_t>(counts[k], 1));
        for (auto& v : reps[k].theta) {
            v /= c;
        }
        for (auto& v : reps[k].alpha) {
            v /= c;
        }
        std::size_t f = 0;
        for (auto t : features.theta_indices) {
            reps[k].theta[t] = clusters.centers[k][f++];
        }
        for (auto a : features.alpha_indices) {
            reps[k].alpha[a] = clusters.centers[k][f++];
        }
    }
    return reps;
}

DensityField mixture_density(const std::vector<DensityField>& fields,
                             std::span<const double> weights) {
    if (fields.empty() || fields.size() != weights.size()) {
        throw StructureError("mixture_density: one weight per field required");
    }
    DensityField out = DensityField::zeros(fields.front().blocks, fields.front().time);
    for (std::size_t k = 0; k < fields.size(); ++k) {
        if (!fields[k].same_layout(out)) {
            throw StructureError("mixture_density: fields do not share one grid");
        }
        for (std::size_t b = 0; b < out.blocks.size(); ++b) {
            for (std::size_t c = 0; c < out.values[b].size(); ++c) {
                out.values[b][c] += weights[k] * fields[k].values[b][c];
            }
        }
    }
    return out;
}

PowerSeries mixture_power(const std::vector<PowerSeries>& on_mass, std::span<const double> weights,
                          double population, std::span<const double> ratings) {
    if (on_mass.empty() || on_mass.size() != weights.size() || ratings.size() != weights.size()) {
        throw StructureError("mixture_power: one weight and rating per cluster series required");
    }
    PowerSeries out;
    out.source = SeriesSource::Pde;
    out.times = on_mass.front().times;
    out.values.assign(out.times.size(), 0.0);
    for (std::size_t k = 0; k < on_mass.size(); ++k) {
        const auto& s = on_mass[k];
        if (s.times.size() != out.times.size()) {
            throw StructureError("mixture_power: cluster series do not share one time grid");
        }
        for (std::size_t i = 0; i < s.times.size(); ++i) {
            if (std::abs(s.times[i] - out.times[i]) > 1e-9) {
                throw StructureError("mixture_power: cluster series do not share one time grid");
            }
            out.values[i] += population * weights[k] * ratings[k] * s.values[i];
        }
    }
    out.metadata["clusters"] = std::to_string(on_mass.size());
    return out;
}

nlohmann::json to_json(const ClusterSet& c, const std::vector<LoadParameters>& reps) {
    nlohmann::json j;
    j["seed"] = c.seed;
    j["iterations"] = c.iterations;
    j["within_cluster_distance"] = c.within_cluster_distance;
    j["weights"] = c.weights;
    j["sizes"] = c.sizes;
    j["centers"] = c.centers;
    j["assignment"] = c.assignment;
    nlohmann::json r = nlohmann::json::array();
    for (const auto& p : reps) {
        r.push_back({{"theta", p.theta}, {"alpha", p.alpha}});
    }
    j["representatives"] = r;
    return j;
}

ClusterSet cluster_set_from_json(const nlohmann::json& j, std::vector<LoadParameters>* reps) {
    ClusterSet c;
    try {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.iterations = j.at("iterations").get<int>();
        c.within_cluster_distance = j.at("within_cluster_distance").get<double>();
        c.weights = j.at("weights").get<std::vector<double>>();
        c.sizes = j.at("sizes").get<std::vector<std::size_t>>();
        c.centers = j.at("centers").get<std::vector<std::vector<double>>>();
        c.assignment = j.value("assignment", std::vector<std::size_t>{});
        if (reps != nullptr) {
            reps->clear();
            for (const auto& r : j.at("representatives")) {
                reps->push_back(LoadParameters{r.at("theta").get<std::vector<double>>(),
                                               r.at("alpha").get<std::vector<double>>()});
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cluster file: ") + e.what());
    }
    double total = std::accumulate(c.weights.begin(), c.weights.end(), 0.0);
    if (c.weights.size() != c.centers.size() || std::abs(total - 1.0) > 1e-9) {
        throw ConfigError("cluster file: weights must match centers and sum to 1");
    }
    return c;
}

}  // namespace aggload
