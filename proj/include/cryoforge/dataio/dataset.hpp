#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cryoforge/forwardmodel/forward.hpp"
#include "cryoforge/spectral/grid.hpp"
#include "cryoforge/spectral/phantom.hpp"

namespace cryoforge::io {

/// Haar-uniform rotation from a normalized quaternion of four standard normals.
[[nodiscard]] Mat3 sample_rotation_uniform(std::mt19937_64& rng);
/// Uniform over rotations whose in-plane angle (gamma of Rz(alpha) Ry(beta) Rz(gamma),
/// the factor that turns the image) lies in [-pi/2, pi/2].
[[nodiscard]] Mat3 sample_rotation_restricted(std::mt19937_64& rng);
/// In-plane angle of a rotation under the convention above.
[[nodiscard]] double inplane_angle(const Mat3& r);

enum class InplaneRange { Full, Half };

struct DatasetSpec {
    std::int64_t n_particles{1000};
    std::int64_t side{32};
    double pixel_size{4.0};
    /// Gaussian phantom; ignored when mrc_path is set.
    spectral::GaussianPhantom phantom;
    std::string mrc_path;
    double shift_sigma{4.0};                       // Å
    double snr_db{forward::kNoiseOff};
    double defocus_mu_ln{9.210340371976184};       // ln(10000 Å)
    double defocus_sigma_ln{0.25};
    double astigmatism_sigma{300.0};               // Å, spread of defocus_u - defocus_v
    double voltage_kv{300.0};
    double cs_mm{2.7};
    double amplitude_contrast{0.1};
    std::uint64_t seed{0};
    InplaneRange inplane{InplaneRange::Full};
    /// Debug hook: every particle at R = I.
    bool identity_poses{false};

    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

/// Spec with the default phantom for a box of side * pixel_size.
[[nodiscard]] DatasetSpec default_spec(std::int64_t side = 32, double pixel_size = 4.0);

struct ParticleDataset {
    DatasetSpec spec;
    std::vector<float> images;  // N * L * L, row-major
    std::vector<forward::CtfParams> ctfs;
    std::vector<forward::Pose> gt_poses;  // empty when unknown

    [[nodiscard]] std::int64_t size() const { return static_cast<std::int64_t>(ctfs.size()); }
    [[nodiscard]] std::int64_t side() const { return spec.side; }
    [[nodiscard]] spectral::RealImage image(std::int64_t i) const;
    /// Throws ShapeError if the arrays disagree with each other or with the spec.
    void validate() const;
    bool operator==(const ParticleDataset&) const = default;
};

/// Central slice (DFT units) of the spec's ground truth at rotation r.
[[nodiscard]] spectral::ComplexImage ground_truth_slice(const DatasetSpec& spec, const Mat3& r);
/// Ground-truth density on the L^3 grid, band-matched to what the images carry.
[[nodiscard]] spectral::RealVolume ground_truth_volume(const DatasetSpec& spec);

[[nodiscard]] ParticleDataset generate_dataset(const DatasetSpec& spec);

/// Directory layout: meta.json, particles.f32, ctf.csv, gt_poses.csv.
void dataset_save(const ParticleDataset& data, const std::filesystem::path& dir);
[[nodiscard]] ParticleDataset dataset_load(const std::filesystem::path& dir);

} // namespace cryoforge::io
