#pragma once

// Parameter heterogeneity: sampling from a compact parameter distribution,
// k-means reduction to weighted homogeneous clusters, and recombination of
// per-cluster densities and power.

#include "aggload/grid.hpp"
#include "aggload/model.hpp"
#include "aggload/series.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace aggload {

/// One coordinate of a parameter distribution: uniform on [lo, hi], or an
/// explicit list of values drawn with equal probability (a point mass is a
/// one-element list).
struct CoordinateSpec {
    std::string name;
    enum class Kind { Uniform, Samples } kind = Kind::Uniform;
    double lo = 0.0;
    double hi = 0.0;
    std::vector<double> values;

    [[nodiscard]] static CoordinateSpec uniform(std::string name, double lo, double hi);
    [[nodiscard]] static CoordinateSpec point(std::string name, double value);
    [[nodiscard]] static CoordinateSpec samples(std::string name, std::vector<double> values);

    [[nodiscard]] double lower_bound() const;
    [[nodiscard]] double upper_bound() const;
};

/// Independent coordinates plus the map that turns one coordinate draw into
/// the load's (theta, alpha).
struct ParameterDistribution {
    std::vector<CoordinateSpec> coordinates;
    std::function<LoadParameters(std::span<const double>)> realize;

    void validate() const;
    /// True when every coordinate is degenerate (homogeneous population).
    [[nodiscard]] bool is_point_mass() const;
};

/// Houses drawn from `prior`: thermal masses, conductances and internal gain
/// uniform within +-relative_spread of nominal, setpoint uniform on
/// [setpoint_min, setpoint_max]; cooling capacity sized per house.
[[nodiscard]] ParameterDistribution hvac_distribution(const HousePrior& prior,
                                                      double noise_sigma = 0.0);

/// Point-mass HVAC distribution at the given ETP parameters.
[[nodiscard]] ParameterDistribution hvac_point_distribution(const EtpParameters& params);

[[nodiscard]] std::vector<LoadParameters> sample_parameters(const ParameterDistribution& dist,
                                                            std::size_t n, std::uint64_t seed);

/// Which parameter entries form the clustering feature vector. Entries not
/// listed are averaged over cluster members when building representatives.
struct FeatureMap {
    std::vector<std::size_t> theta_indices;
    std::vector<std::size_t> alpha_indices;

    [[nodiscard]] std::size_t size() const { return theta_indices.size() + alpha_indices.size(); }
    [[nodiscard]] std::vector<double> extract(const LoadParameters& p) const;
};

/// Dynamics coefficients (entries of A, B_off, B_on) and the setpoint.
[[nodiscard]] FeatureMap hvac_features();
[[nodiscard]] FeatureMap pev_features();

struct ClusterSet {
    std::vector<std::vector<double>> centers;  // raw feature units
    std::vector<double> weights;               // n_k / n
    std::vector<std::size_t> assignment;       // cluster of each sample
    double within_cluster_distance = 0.0;      // standardized Euclidean
    std::uint64_t seed = 0;
    int iterations = 0;
    std::vector<std::size_t> sizes;
};

struct KMeansOptions {
    int max_iterations = 100;
};

/// Lloyd iterations from k-means++ seeding on standardized coordinates.
/// An emptied cluster is re-seeded from the sample farthest from its current
/// center (lowest index on ties).
[[nodiscard]] ClusterSet kmeans(const std::vector<std::vector<double>>& samples,
                                std::size_t n_clusters, std::uint64_t seed,
                                const KMeansOptions& options = {});

/// Cluster representatives: features from the centers, other entries averaged
/// over members.
[[nodiscard]] std::vector<LoadParameters> cluster_parameters(
    const std::vector<LoadParameters>& samples, const ClusterSet& clusters,
    const FeatureMap& features);

/// Cellwise convex combination sum_k w_k p_k on a shared layout.
[[nodiscard]] DensityField mixture_density(const std::vector<DensityField>& fields,
                                           std::span<const double> weights);

/// y(t) = N * sum_k w_k * W_k * m_k(t), with m_k the ON-mode mass of cluster k.
[[nodiscard]] PowerSeries mixture_power(const std::vector<PowerSeries>& on_mass,
                                        std::span<const double> weights, double population,
                                        std::span<const double> ratings);

[[nodiscard]] nlohmann::json to_json(const ClusterSet& clusters,
                                     const std::vector<LoadParameters>& representatives);
[[nodiscard]] ClusterSet cluster_set_from_json(const nlohmann::json& j,
                                               std::vector<LoadParameters>* representatives);

}  // namespace aggload
