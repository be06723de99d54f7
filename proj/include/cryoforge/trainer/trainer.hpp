#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cryoforge/dataio/dataset.hpp"
#include "cryoforge/diffcore/adam.hpp"
#include "cryoforge/implicitvol/volume.hpp"
#include "cryoforge/metrics/metrics.hpp"
#include "cryoforge/poseencoder/encoder.hpp"

namespace cryoforge::train {

enum class Branch : std::uint8_t { Original = 0, Rotated = 1 };
enum class LossMode { Symmetric, PlainL2 };

[[nodiscard]] std::string_view to_string(LossMode mode);
/// Accepts "symmetric" and "l2".
[[nodiscard]] LossMode parse_loss_mode(std::string_view name);

/// In-plane half turn about the pixel at (L/2, L/2): (i, j) -> ((L - i) mod L, (L - j) mod L).
/// On centered spectra this is k -> -k, so both domains use the same map.
[[nodiscard]] std::vector<std::int64_t> rot180_permutation(std::int64_t side);
[[nodiscard]] spectral::RealImage rot180(const spectral::RealImage& image);
[[nodiscard]] spectral::ComplexImage rot180(const spectral::ComplexImage& spectrum);

/// diag(-1, -1, 1), the exact Rz(pi).
[[nodiscard]] Mat3 half_turn();

/// Pose of the original image given a prediction made on `branch`:
/// rotated -> (R Rz(pi), -t).
[[nodiscard]] forward::Pose resolve_pose(const forward::Pose& predicted, Branch branch);

/// Training-precision copies of a dataset, with spectra, CTFs and a mask of
/// the bins that have a mirror partner.
struct TrainingSet {
    spectral::FreqGrid2D grid;
    implicit::SlicePlan plan;
    diff::Tensor freqs;                    // [2, P]
    std::int64_t count{0};
    std::vector<Real> images;              // N * P
    std::vector<Real> spectrum_re, spectrum_im, ctf;  // N * P each
    std::vector<Real> mask;                // P
    Real mask_count{0};
    std::vector<forward::Pose> gt_poses;
    std::optional<spectral::RealVolume> gt_volume;

    [[nodiscard]] static TrainingSet from(const io::ParticleDataset& data);
    [[nodiscard]] std::int64_t side() const { return grid.side; }
    [[nodiscard]] std::int64_t pixels() const { return grid.pixels(); }
    /// RMS magnitude of the spectra over the masked bins.
    [[nodiscard]] double spectrum_rms() const;
};

struct SymmetricLossOutput {
    diff::Tensor loss;                     // taped scalar through the winning branches
    double value{0.0};                     // mean over images of min(original, rotated)
    double plain_value{0.0};               // mean over images of the original residual
    std::vector<Branch> branch_won;
    std::vector<double> residual_original;
    std::vector<double> residual_rotated;  // NaN in plain mode
};

/// Per-image residual = mean over masked bins of |Y - X|². In symmetric mode a
/// no-tape pass scores both branches; the taped pass then runs only the winners.
[[nodiscard]] SymmetricLossOutput symmetric_loss(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                                 const pose::PoseEncoder& encoder,
                                                 const implicit::ImplicitVolume& volume,
                                                 LossMode mode = LossMode::Symmetric);

/// Untaped residuals of images rendered at explicit poses.
[[nodiscard]] std::vector<double> pose_residuals(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                                 const std::vector<forward::Pose>& poses,
                                                 const implicit::ImplicitVolume& volume);

struct PoseEvaluation {
    std::vector<forward::Pose> poses;      // resolved
    std::vector<Branch> branches;
    double images_per_second{0.0};
};

/// Both branches without a tape; keeps the one with the smaller residual.
[[nodiscard]] PoseEvaluation evaluate_poses(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                            const pose::PoseEncoder& encoder, const implicit::ImplicitVolume& volume);

struct Evaluation {
    double loss{0.0};
    double rot_err_median{std::numeric_limits<double>::quiet_NaN()};
    double trans_err_mean{std::numeric_limits<double>::quiet_NaN()};         // px², raw
    double trans_err_fitted{std::numeric_limits<double>::quiet_NaN()};       // px², offset removed
    metrics::Hand hand{metrics::Hand::Same};
    Mat3 gauge{Mat3::Identity()};
    Vec3 volume_shift{Vec3::Zero()};
    std::optional<metrics::FscCurve> fsc;
    metrics::Resolution resolution_05{std::numeric_limits<double>::quiet_NaN(), 0.0, false};
    metrics::Resolution resolution_0143{std::numeric_limits<double>::quiet_NaN(), 0.0, false};
    double images_per_second{0.0};
};

/// Subset used for periodic evaluation: the first min(n, count) images.
[[nodiscard]] std::vector<std::int64_t> eval_indices(const TrainingSet& set, std::int64_t n);

/// Loss, pose errors and FSC against ground truth (when present). The volume is
/// resampled into the ground-truth gauge: rotation from pose alignment, then a
/// fitted translation.
[[nodiscard]] Evaluation evaluate_reconstruction(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                                 const pose::PoseEncoder& encoder,
                                                 const implicit::ImplicitVolume& volume, LossMode mode);

/// Volume on the L^3 grid in the ground-truth gauge found by evaluate_reconstruction.
[[nodiscard]] spectral::RealVolume aligned_volume(const TrainingSet& set, const implicit::ImplicitVolume& volume,
                                                  const Evaluation& eval);

struct TrainConfig {
    std::int64_t batch_size{32};
    double learning_rate{1e-4};
    std::int64_t max_iters{1000};
    std::uint64_t seed{0};
    std::int64_t eval_every{500};
    std::int64_t eval_subset{256};
    LossMode loss_mode{LossMode::Symmetric};
    std::int64_t checkpoint_every{0};  // 0: only at the end
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints

    void validate() const;
};

struct TrainState {
    pose::PoseEncoder encoder;
    implicit::ImplicitVolume volume;
    diff::AdamState adam;
    std::int64_t iteration{0};
    std::mt19937_64 rng;
    std::vector<std::int64_t> order;  // current epoch permutation
    std::int64_t cursor{0};
};

/// Fresh state. For FourierNet the exponentiated branch's output bias starts at
/// log(spectrum_rms) so the initial field is zero but the scale branch is not.
[[nodiscard]] TrainState initial_state(const pose::EncoderConfig& encoder, const implicit::VolumeConfig& volume,
                                       const TrainingSet& set, std::uint64_t seed);

struct MetricsRow {
    std::int64_t iter{0};
    double loss{0.0};
    double fsc_resolution_px{std::numeric_limits<double>::quiet_NaN()};
    double rot_err_median{std::numeric_limits<double>::quiet_NaN()};
    double trans_err_mean{std::numeric_limits<double>::quiet_NaN()};
    double wall_seconds{0.0};
};

[[nodiscard]] MetricsRow metrics_row(std::int64_t iter, const Evaluation& eval, double wall_seconds);
[[nodiscard]] std::string metrics_csv_header();
[[nodiscard]] std::string metrics_csv_line(const MetricsRow& row);

struct StepRecord {
    std::int64_t iter{0};
    double loss{0.0};
    double plain_loss{0.0};
    double rotated_fraction{0.0};
};

struct TrainResult {
    std::vector<MetricsRow> rows;
    std::vector<StepRecord> steps;
};

struct TrainCallbacks {
    std::function<void(const MetricsRow&)> on_metrics;
    std::function<void(const StepRecord&)> on_step;
};

/// Runs config.max_iters - state.iteration further steps (Adam over encoder and
/// volume jointly). A metrics row is produced at the start, every eval_every
/// iterations and at the end. A non-finite loss writes nan_abort.ckpt (when a
/// checkpoint directory is set) and throws NumericalError naming it.
TrainResult train(const TrainingSet& set, TrainState& state, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

/// Hash of everything that determines a run's trajectory.
[[nodiscard]] std::uint64_t config_hash(const TrainConfig& config, const pose::EncoderConfig& encoder,
                                        const implicit::VolumeConfig& volume);

/// Binary checkpoint, written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, std::uint64_t hash);
struct LoadedCheckpoint {
    TrainState state;
    std::uint64_t hash{0};
};
[[nodiscard]] LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

} // namespace cryoforge::train
