#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cryoforge/diffcore/tensor.hpp"
#include "cryoforge/spectral/grid.hpp"
#include "cryoforge/util/rotation.hpp"

namespace cryoforge::implicit {

enum class Kind : std::uint32_t { FourierNet = 0, Siren = 1, PeMlp = 2, Voxel = 3 };

[[nodiscard]] std::string_view to_string(Kind kind);
/// Accepts "fouriernet", "siren", "pe_mlp", "voxel".
[[nodiscard]] Kind parse_kind(std::string_view name);

/// Architecture of an implicit representation.
///
/// layer_counts holds the number of hidden-to-hidden layers per branch. FourierNet
/// has two branches (the exponentiated one first), SIREN and PE-MLP have one, the
/// voxel grid none. Inputs are multiplied by coord_scale before the network, so
/// with coord_scale = 2 * pixel_size the Nyquist cube maps to [-1, 1]^D.
struct VolumeConfig {
    Kind kind{Kind::FourierNet};
    int input_dim{3};
    int hidden_width{64};
    std::vector<int> layer_counts{2, 3};
    double coord_scale{1.0};
    double omega0{30.0};
    double exp_clamp{20.0};
    int pe_frequencies{6};
    int voxel_side{32};
    bool zero_output_init{true};

    void validate() const;
    bool operator==(const VolumeConfig&) const = default;
};

/// Default configuration for a kind, with coord_scale set for the given pixel size.
[[nodiscard]] VolumeConfig default_config(Kind kind, double pixel_size, int input_dim = 3);

/// Closed-form parameter total of the layer map (weights and biases).
[[nodiscard]] std::int64_t analytic_parameter_count(const VolumeConfig& config);
/// Same layer map counting weight matrices only.
[[nodiscard]] std::int64_t analytic_weight_count(const VolumeConfig& config);

/// Width (and if needed depths) whose analytic count lies within `tolerance` of
/// `target`. Throws DomainError when no configuration lands in the band.
[[nodiscard]] VolumeConfig match_budget(VolumeConfig base, std::int64_t target, double tolerance = 0.02);

/// A trainable implicit field V: R^D -> C, symmetrized so that V(-k) = conj V(k).
class ImplicitVolume {
public:
    ImplicitVolume() = default;
    ImplicitVolume(const VolumeConfig& config, std::uint64_t seed);

    [[nodiscard]] const VolumeConfig& config() const { return m_config; }
    [[nodiscard]] Kind kind() const { return m_config.kind; }
    [[nodiscard]] std::vector<diff::Tensor>& parameters() { return m_params; }
    [[nodiscard]] const std::vector<diff::Tensor>& parameters() const { return m_params; }
    [[nodiscard]] std::int64_t parameter_count() const;

    /// Symmetrized field at points [N, D] (Å⁻¹); returns re and im of shape [N].
    /// A point is canonical when k_x > 0, or k_x = 0 and k_y > 0, and so on down
    /// the axes; other points are evaluated at -k and conjugated. The imaginary
    /// part at the origin is dropped.
    [[nodiscard]] diff::ComplexPair evaluate(const diff::Tensor& points) const;

    /// Unsymmetrized network output [N, 2] at already-scaled inputs.
    [[nodiscard]] diff::Tensor raw(const diff::Tensor& scaled_points) const;

    /// Sets the bias of the exponentiated branch's output layer (FourierNet only).
    void set_exp_bias(double value);

    /// Flat copy of every parameter in layer-map order, and its inverse.
    [[nodiscard]] std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& values);

    void save(std::ostream& out) const;
    [[nodiscard]] static ImplicitVolume load(std::istream& in);

private:
    [[nodiscard]] diff::Tensor mlp(std::size_t first_param, int hidden_layers, const diff::Tensor& x, bool sine) const;
    [[nodiscard]] diff::Tensor positional_encoding(const diff::Tensor& x) const;

    VolumeConfig m_config;
    std::vector<diff::Tensor> m_params;
};

/// Kind-checked entry points; each throws DomainError on a kind mismatch.
[[nodiscard]] diff::ComplexPair fouriernet_eval(const ImplicitVolume& vol, const diff::Tensor& points);
[[nodiscard]] diff::ComplexPair siren_eval(const ImplicitVolume& vol, const diff::Tensor& points);
[[nodiscard]] diff::ComplexPair pemlp_eval(const ImplicitVolume& vol, const diff::Tensor& points);

/// Precomputed bookkeeping for querying central slices on a fixed grid. Pixels
/// p and its mirror -p (both inside the grid) share one network evaluation.
struct SlicePlan {
    spectral::FreqGrid2D grid;
    std::vector<std::int64_t> representative;  // per pixel: index into the evaluated set
    std::vector<Real> conj_sign;               // per pixel: +1, or -1 when taken from the mirror
    diff::Tensor coords;                       // [3, U]: (k_x, k_y, 0) of each evaluated pixel

    [[nodiscard]] static SlicePlan make(const spectral::FreqGrid2D& grid);
    [[nodiscard]] std::int64_t evaluated() const { return coords.size(1); }
};

/// Field on the central slices R_b (k_x, k_y, 0) for rotations [B, 3, 3]; returns [B, P].
/// Differentiable w.r.t. the parameters and the rotations.
[[nodiscard]] diff::ComplexPair slice_query(const ImplicitVolume& vol, const diff::Tensor& rotations,
                                            const SlicePlan& plan);
/// Single rotation, no tape.
[[nodiscard]] spectral::ComplexImage slice_query(const ImplicitVolume& vol, const Mat3& rotation,
                                                 const spectral::FreqGrid2D& grid);

/// Field sampled on the centered 3D grid, then inverse transformed. The model is
/// evaluated at transform * q for every grid frequency q and multiplied by
/// exp(-2 pi i q·shift), which lets callers resample into another gauge.
/// Throws NumericalError if the imaginary part exceeds 1e-5 of the real part.
[[nodiscard]] spectral::RealVolume extract_volume(const ImplicitVolume& vol, std::int64_t side, double pixel_size,
                                                  const Mat3& transform = Mat3::Identity(),
                                                  const Vec3& shift = Vec3::Zero());

/// Same sampling without the inverse transform.
[[nodiscard]] spectral::ComplexVolume sample_spectrum(const ImplicitVolume& vol, std::int64_t side,
                                                      double pixel_size, const Mat3& transform = Mat3::Identity(),
                                                      const Vec3& shift = Vec3::Zero());

struct Fit2dOptions {
    int iterations{1000};
    double learning_rate{1e-4};
    /// Learning rate at the last iteration relative to the first (exponential decay).
    double final_lr_factor{0.1};
    std::uint64_t seed{0};
};

struct Fit2dResult {
    ImplicitVolume model;
    std::vector<double> loss_trace;    // mean squared spectrum error per iteration
    double spectrum_mse{0.0};
    double image_mse{0.0};
    spectral::ComplexImage fitted_spectrum;
    spectral::RealImage reconstructed_image;
};

/// Regresses a 2D field onto a Hermitian target spectrum (unpaired bins excluded)
/// with Adam and returns errors against the target spectrum and its image.
[[nodiscard]] Fit2dResult fit2d(const spectral::ComplexImage& target, double pixel_size, const VolumeConfig& config,
                                const Fit2dOptions& options);

} // namespace cryoforge::implicit
