#include "cryoforge/trainer/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "cryoforge/diffcore/ops.hpp"
#include "cryoforge/spectral/fft.hpp"
#include "cryoforge/util/binary.hpp"
#include "cryoforge/util/hash.hpp"
#include "cryoforge/util/parallel.hpp"

namespace cryoforge::train {

using diff::Shape;
using diff::Tensor;

namespace {

constexpr char kMagic[8] = {'C', 'F', 'T', 'R', 'A', 'I', 'N', '1'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::int64_t kEvalChunk = 64;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template<typename T>
T permuted(const T& in, const std::vector<std::int64_t>& perm) {
    T out(in.side);
    for (std::size_t p = 0; p < perm.size(); ++p)
        out.values[static_cast<std::size_t>(perm[p])] = in.values[p];
    return out;
}

struct BranchPass {
    Tensor residuals;  // [B]
    pose::EncoderOutput encoded;
};

// Encoder -> slice -> synthesize -> masked residual for each (image, branch) pair.
BranchPass run_branches(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                        const std::vector<Branch>& branches, const pose::PoseEncoder& encoder,
                        const implicit::ImplicitVolume& volume) {
    const auto b = static_cast<std::int64_t>(indices.size());
    const auto p = set.pixels();
    const auto perm = rot180_permutation(set.side());
    std::vector<Real> images(static_cast<std::size_t>(b * p)), tre(images.size()), tim(images.size()),
            ctf(images.size());
    for (std::int64_t i = 0; i < b; ++i) {
        const auto n = indices[static_cast<std::size_t>(i)];
        check<ShapeError>(n >= 0 && n < set.count, "training set index {} out of range [0, {})", n, set.count);
        const bool rotated = branches[static_cast<std::size_t>(i)] == Branch::Rotated;
        const auto src = static_cast<std::size_t>(n * p);
        const auto dst = static_cast<std::size_t>(i * p);
        for (std::int64_t q = 0; q < p; ++q) {
            const auto to = dst + static_cast<std::size_t>(rotated ? perm[static_cast<std::size_t>(q)] : q);
            images[to] = set.images[src + static_cast<std::size_t>(q)];
            tre[to] = set.spectrum_re[src + static_cast<std::size_t>(q)];
            tim[to] = set.spectrum_im[src + static_cast<std::size_t>(q)];
        }
        std::copy_n(set.ctf.begin() + static_cast<std::ptrdiff_t>(src), p, ctf.begin() + static_cast<std::ptrdiff_t>(dst));
    }
    BranchPass pass;
    pass.encoded = encoder.encode(Tensor(Shape{b, set.side(), set.side()}, std::move(images)));
    const auto slice = implicit::slice_query(volume, pass.encoded.rotations, set.plan);
    const auto x = forward::synthesize(slice, Tensor(Shape{b, p}, std::move(ctf)), pass.encoded.translations, set.freqs);
    const Tensor dre = x.re - Tensor(Shape{b, p}, std::move(tre));
    const Tensor dim = x.im - Tensor(Shape{b, p}, std::move(tim));
    const Tensor mask(Shape{p}, set.mask);
    pass.residuals = diff::sum((diff::square(dre) + diff::square(dim)) * mask, 1) * (Real{1} / set.mask_count);
    return pass;
}

forward::Pose pose_at(const pose::EncoderOutput& out, std::int64_t i) {
    forward::Pose pose;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            pose.rotation(r, c) = out.rotations.at(9 * i + 3 * r + c);
    pose.translation = Vec2(out.translations.at(2 * i), out.translations.at(2 * i + 1));
    return pose;
}

struct Scored {
    std::vector<double> original, rotated;
    std::vector<forward::Pose> pose_original, pose_rotated;
};

// Both branches without a tape, in one encoder batch.
Scored score_both(const TrainingSet& set, const std::vector<std::int64_t>& indices, const pose::PoseEncoder& encoder,
                  const implicit::ImplicitVolume& volume) {
    diff::NoGradGuard guard;
    const auto b = static_cast<std::int64_t>(indices.size());
    std::vector<std::int64_t> idx(indices);
    idx.insert(idx.end(), indices.begin(), indices.end());
    std::vector<Branch> branches(static_cast<std::size_t>(b), Branch::Original);
    branches.resize(static_cast<std::size_t>(2 * b), Branch::Rotated);
    const auto pass = run_branches(set, idx, branches, encoder, volume);
    Scored s;
    for (std::int64_t i = 0; i < b; ++i) {
        s.original.push_back(pass.residuals.at(i));
        s.rotated.push_back(pass.residuals.at(b + i));
        s.pose_original.push_back(pose_at(pass.encoded, i));
        s.pose_rotated.push_back(pose_at(pass.encoded, b + i));
    }
    return s;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v)
        s += x;
    return s / static_cast<double>(v.size());
}

std::vector<std::int64_t> next_batch(TrainState& state, std::int64_t batch, std::int64_t count) {
    if (state.order.empty() || state.cursor + batch > static_cast<std::int64_t>(state.order.size())) {
        state.order.resize(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i)
            state.order[static_cast<std::size_t>(i)] = i;
        std::shuffle(state.order.begin(), state.order.end(), state.rng);
        state.cursor = 0;
    }
    std::vector<std::int64_t> out(state.order.begin() + state.cursor, state.order.begin() + state.cursor + batch);
    state.cursor += batch;
    return out;
}

std::string csv_number(double v) {
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return std::isfinite(v) ? fmt::format("{:.9g}", v) : std::string("nan");
}

} // namespace

std::string_view to_string(LossMode mode) { return mode == LossMode::Symmetric ? "symmetric" : "l2"; }

LossMode parse_loss_mode(std::string_view name) {
    if (name == "symmetric")
        return LossMode::Symmetric;
    if (name == "l2")
        return LossMode::PlainL2;
    throw DomainError(fmt::format("unknown loss mode '{}' (expected symmetric or l2)", name));
}

std::vector<std::int64_t> rot180_permutation(std::int64_t side) {
    spectral::require_even_side(side, "rot180");
    std::vector<std::int64_t> perm(static_cast<std::size_t>(side * side));
    for (std::int64_t i = 0; i < side; ++i)
        for (std::int64_t j = 0; j < side; ++j)
            perm[static_cast<std::size_t>(i * side + j)] = ((side - i) % side) * side + (side - j) % side;
    return perm;
}

spectral::RealImage rot180(const spectral::RealImage& image) {
    return permuted(image, rot180_permutation(image.side));
}

spectral::ComplexImage rot180(const spectral::ComplexImage& spectrum) {
    return permuted(spectrum, rot180_permutation(spectrum.side));
}

Mat3 half_turn() { return Vec3(-1.0, -1.0, 1.0).asDiagonal(); }

forward::Pose resolve_pose(const forward::Pose& predicted, Branch branch) {
    if (branch == Branch::Original)
        return predicted;
    return {predicted.rotation * half_turn(), -predicted.translation};
}

TrainingSet TrainingSet::from(const io::ParticleDataset& data) {
    data.validate();
    TrainingSet set;
    set.grid = spectral::FreqGrid2D::make(data.spec.side, data.spec.pixel_size);
    set.plan = implicit::SlicePlan::make(set.grid);
    set.freqs = forward::frequency_matrix(set.grid);
    set.count = data.size();
    const auto p = set.pixels(), side = set.side();
    set.images.assign(data.images.begin(), data.images.end());
    set.spectrum_re.resize(static_cast<std::size_t>(set.count * p));
    set.spectrum_im.resize(set.spectrum_re.size());
    set.ctf.resize(set.spectrum_re.size());
    parallel_for(set.count, [&](std::int64_t n) {
        const auto spectrum = spectral::fft2_centered(data.image(n));
        const auto ctf = forward::ctf_eval(data.ctfs[static_cast<std::size_t>(n)], set.grid);
        for (std::int64_t q = 0; q < p; ++q) {
            const auto at = static_cast<std::size_t>(n * p + q);
            set.spectrum_re[at] = static_cast<Real>(spectrum.values[static_cast<std::size_t>(q)].real());
            set.spectrum_im[at] = static_cast<Real>(spectrum.values[static_cast<std::size_t>(q)].imag());
            set.ctf[at] = static_cast<Real>(ctf.values[static_cast<std::size_t>(q)]);
        }
    });
    set.mask.assign(static_cast<std::size_t>(p), Real{0});
    for (std::int64_t i = 1; i < side; ++i)
        for (std::int64_t j = 1; j < side; ++j)
            set.mask[static_cast<std::size_t>(i * side + j)] = Real{1};
    set.mask_count = static_cast<Real>((side - 1) * (side - 1));
    set.gt_poses = data.gt_poses;
    if (!data.gt_poses.empty())
        set.gt_volume = io::ground_truth_volume(data.spec);
    return set;
}

double TrainingSet::spectrum_rms() const {
    double acc = 0.0;
    const auto p = pixels();
    for (std::int64_t n = 0; n < count; ++n)
        for (std::int64_t q = 0; q < p; ++q) {
            const auto at = static_cast<std::size_t>(n * p + q);
            acc += mask[static_cast<std::size_t>(q)] *
                   (static_cast<double>(spectrum_re[at]) * spectrum_re[at] + static_cast<double>(spectrum_im[at]) * spectrum_im[at]);
        }
    return std::sqrt(acc / (static_cast<double>(count) * mask_count));
}

SymmetricLossOutput symmetric_loss(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                   const pose::PoseEncoder& encoder, const implicit::ImplicitVolume& volume,
                                   LossMode mode) {
    check<ShapeError>(!indices.empty(), "symmetric_loss: empty batch");
    const auto b = indices.size();
    SymmetricLossOutput out;
    if (mode == LossMode::PlainL2) {
        const auto pass = run_branches(set, indices, std::vector<Branch>(b, Branch::Original), encoder, volume);
        out.loss = diff::mean(pass.residuals);
        out.branch_won.assign(b, Branch::Original);
        for (std::size_t i = 0; i < b; ++i)
            out.residual_original.push_back(pass.residuals.at(static_cast<std::int64_t>(i)));
        out.residual_rotated.assign(b, kNaN);
        out.value = out.plain_value = mean_of(out.residual_original);
        return out;
    }
    auto scored = score_both(set, indices, encoder, volume);
    std::vector<double> best(b);
    for (std::size_t i = 0; i < b; ++i) {
        const bool rotated = scored.rotated[i] < scored.original[i];
        out.branch_won.push_back(rotated ? Branch::Rotated : Branch::Original);
        best[i] = rotated ? scored.rotated[i] : scored.original[i];
    }
    out.value = mean_of(best);
    out.plain_value = mean_of(scored.original);
    out.residual_original = std::move(scored.original);
    out.residual_rotated = std::move(scored.rotated);
    out.loss = diff::mean(run_branches(set, indices, out.branch_won, encoder, volume).residuals);
    return out;
}

std::vector<double> pose_residuals(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                   const std::vector<forward::Pose>& poses, const implicit::ImplicitVolume& volume) {
    check<ShapeError>(indices.size() == poses.size(), "pose_residuals: {} indices for {} poses", indices.size(),
                      poses.size());
    diff::NoGradGuard guard;
    const auto b = static_cast<std::int64_t>(indices.size());
    const auto p = set.pixels();
    std::vector<Real> rot, shift, ctf(static_cast<std::size_t>(b * p));
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& pose = poses[static_cast<std::size_t>(i)];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                rot.push_back(static_cast<Real>(pose.rotation(r, c)));
        shift.push_back(static_cast<Real>(pose.translation.x()));
        shift.push_back(static_cast<Real>(pose.translation.y()));
        std::copy_n(set.ctf.begin() + indices[static_cast<std::size_t>(i)] * p, p, ctf.begin() + i * p);
    }
    const auto slice = implicit::slice_query(volume, Tensor(Shape{b, 3, 3}, std::move(rot)), set.plan);
    const auto x = forward::synthesize(slice, Tensor(Shape{b, p}, std::move(ctf)), Tensor(Shape{b, 2}, std::move(shift)),
                                       set.freqs);
    std::vector<double> out;
    for (std::int64_t i = 0; i < b; ++i) {
        const auto n = indices[static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (std::int64_t q = 0; q < p; ++q) {
            const double dr = x.re.at(i * p + q) - set.spectrum_re[static_cast<std::size_t>(n * p + q)];
            const double di = x.im.at(i * p + q) - set.spectrum_im[static_cast<std::size_t>(n * p + q)];
            acc += set.mask[static_cast<std::size_t>(q)] * (dr * dr + di * di);
        }
        out.push_back(acc / set.mask_count);
    }
    return out;
}

PoseEvaluation evaluate_poses(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                              const pose::PoseEncoder& encoder, const implicit::ImplicitVolume& volume) {
    const auto start = std::chrono::steady_clock::now();
    PoseEvaluation out;
    for (std::size_t begin = 0; begin < indices.size(); begin += kEvalChunk) {
        const auto end = std::min(indices.size(), begin + kEvalChunk);
        const std::vector<std::int64_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                              indices.begin() + static_cast<std::ptrdiff_t>(end));
        const auto s = score_both(set, chunk, encoder, volume);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const auto branch = s.rotated[i] < s.original[i] ? Branch::Rotated : Branch::Original;
            out.branches.push_back(branch);
            out.poses.push_back(resolve_pose(branch == Branch::Rotated ? s.pose_rotated[i] : s.pose_original[i], branch));
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.images_per_second = secs > 0.0 ? static_cast<double>(indices.size()) / secs : 0.0;
    return out;
}

std::vector<std::int64_t> eval_indices(const TrainingSet& set, std::int64_t n) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(std::min(n, set.count)));
    for (std::size_t i = 0; i < idx.size(); ++i)
        idx[i] = static_cast<std::int64_t>(i);
    return idx;
}

Evaluation evaluate_reconstruction(const TrainingSet& set, const std::vector<std::int64_t>& indices,
                                   const pose::PoseEncoder& encoder, const implicit::ImplicitVolume& volume,
                                   LossMode mode) {
    check<ShapeError>(!indices.empty(), "evaluate_reconstruction: no images");
    Evaluation eval;
    const auto start = std::chrono::steady_clock::now();
    std::vector<forward::Pose> poses;
    double loss = 0.0;
    for (std::size_t begin = 0; begin < indices.size(); begin += kEvalChunk) {
        const auto end = std::min(indices.size(), begin + kEvalChunk);
        const std::vector<std::int64_t> chunk(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                              indices.begin() + static_cast<std::ptrdiff_t>(end));
        const auto s = score_both(set, chunk, encoder, volume);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            const bool rotated = s.rotated[i] < s.original[i];
            loss += mode == LossMode::Symmetric ? std::min(s.original[i], s.rotated[i]) : s.original[i];
            poses.push_back(rotated ? resolve_pose(s.pose_rotated[i], Branch::Rotated) : s.pose_original[i]);
        }
    }
    eval.loss = loss / static_cast<double>(indices.size());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    eval.images_per_second = secs > 0.0 ? static_cast<double>(indices.size()) / secs : 0.0;
    if (set.gt_poses.empty())
        return eval;

    std::vector<Mat3> pred, gt;
    std::vector<Vec2> tp, tg;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto& g = set.gt_poses[static_cast<std::size_t>(indices[i])];
        pred.push_back(poses[i].rotation);
        gt.push_back(g.rotation);
        tp.push_back(poses[i].translation);
        tg.push_back(g.translation);
    }
    const auto align = metrics::align_rotations(pred, gt);
    eval.rot_err_median = align.median;
    eval.hand = align.hand;
    eval.gauge = align.gauge;
    eval.trans_err_mean = metrics::translation_error(tp, tg, set.grid.pixel_size).mean_sq_pixels;
    eval.trans_err_fitted = metrics::translation_error_fitted(tp, tg, set.grid.pixel_size).mean_sq_pixels;
    if (!set.gt_volume)
        return eval;
    const Mat3 transform = align.hand == metrics::Hand::Same ? align.gauge : Mat3(align.gauge * z_mirror());
    const auto rough = implicit::extract_volume(volume, set.side(), set.grid.pixel_size, transform);
    eval.volume_shift = metrics::fit_volume_shift(*set.gt_volume, rough, set.grid.pixel_size);
    const auto aligned = aligned_volume(set, volume, eval);
    eval.fsc = metrics::fsc(*set.gt_volume, aligned, set.grid.pixel_size);
    eval.resolution_05 = metrics::resolution_at(*eval.fsc, 0.5);
    eval.resolution_0143 = metrics::resolution_at(*eval.fsc, 0.143);
    return eval;
}

spectral::RealVolume aligned_volume(const TrainingSet& set, const implicit::ImplicitVolume& volume,
                                    const Evaluation& eval) {
    const Mat3 transform = eval.hand == metrics::Hand::Same ? eval.gauge : Mat3(eval.gauge * z_mirror());
    return implicit::extract_volume(volume, set.side(), set.grid.pixel_size, transform, -eval.volume_shift);
}

void TrainConfig::validate() const {
    check(batch_size >= 1, "train: batch size must be >= 1, got {}", batch_size);
    check(learning_rate > 0.0 && std::isfinite(learning_rate), "train: learning rate must be positive, got {}",
          learning_rate);
    check(max_iters >= 0, "train: max_iters must be >= 0, got {}", max_iters);
    check(eval_every >= 0 && checkpoint_every >= 0, "train: intervals must be >= 0");
    check(eval_subset >= 1, "train: eval subset must be >= 1, got {}", eval_subset);
}

TrainState initial_state(const pose::EncoderConfig& encoder, const implicit::VolumeConfig& volume,
                         const TrainingSet& set, std::uint64_t seed) {
    check<ShapeError>(encoder.input_side == set.side(), "encoder side {} does not match the data side {}",
                      encoder.input_side, set.side());
    TrainState state;
    state.encoder = pose::PoseEncoder(encoder, splitmix64(2 * seed + 1));
    state.volume = implicit::ImplicitVolume(volume, splitmix64(2 * seed + 2));
    if (volume.kind == implicit::Kind::FourierNet && volume.zero_output_init)
        state.volume.set_exp_bias(std::log(std::max(set.spectrum_rms(), 1e-30)));
    state.rng.seed(splitmix64(seed ^ 0x5851F42D4C957F2DULL));
    return state;
}

MetricsRow metrics_row(std::int64_t iter, const Evaluation& eval, double wall_seconds) {
    MetricsRow row;
    row.iter = iter;
    row.loss = eval.loss;
    row.fsc_resolution_px = eval.fsc ? eval.resolution_05.pixels : kNaN;
    row.rot_err_median = eval.rot_err_median;
    row.trans_err_mean = eval.trans_err_mean;
    row.wall_seconds = wall_seconds;
    return row;
}

std::string metrics_csv_header() { return "iter,loss,fsc_resolution_px,rot_err_median,trans_err_mean,wall_seconds"; }

std::string metrics_csv_line(const MetricsRow& row) {
    return fmt::format("{},{},{},{},{},{:.3f}", row.iter, csv_number(row.loss), csv_number(row.fsc_resolution_px),
                       csv_number(row.rot_err_median), csv_number(row.trans_err_mean), row.wall_seconds);
}

TrainResult train(const TrainingSet& set, TrainState& state, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
    config.validate();
    check(set.count >= 1, "train: empty dataset");
    check(config.batch_size <= set.count, "train: batch size {} exceeds the {} available images", config.batch_size,
          set.count);
    std::vector<Tensor> params = state.encoder.parameters();
    for (const auto& p : state.volume.parameters())
        params.push_back(p);
    state.adam.learning_rate = config.learning_rate;
    const auto hash = config_hash(config, state.encoder.config(), state.volume.config());
    const auto subset = eval_indices(set, config.eval_subset);
    const auto start = std::chrono::steady_clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    TrainResult result;
    const auto emit_row = [&] {
        const auto eval = evaluate_reconstruction(set, subset, state.encoder, state.volume, config.loss_mode);
        result.rows.push_back(metrics_row(state.iteration, eval, elapsed()));
        if (callbacks.on_metrics)
            callbacks.on_metrics(result.rows.back());
    };
    const auto checkpoint = [&](const char* name) {
        if (config.checkpoint_dir.empty())
            return std::filesystem::path();
        std::filesystem::create_directories(config.checkpoint_dir);
        const auto path = config.checkpoint_dir / name;
        save_checkpoint(path, state, hash);
        return path;
    };

    emit_row();
    while (state.iteration < config.max_iters) {
        const auto batch = next_batch(state, config.batch_size, set.count);
        for (auto& p : params)
            p.zero_grad();
        const auto out = symmetric_loss(set, batch, state.encoder, state.volume, config.loss_mode);
        if (!std::isfinite(out.value) || !std::isfinite(out.loss.item())) {
            const auto path = checkpoint("nan_abort.ckpt");
            throw NumericalError(fmt::format("train: non-finite loss at iteration {}{}", state.iteration,
                                             path.empty() ? std::string() : "; diagnostic checkpoint " + path.string()));
        }
        diff::backward(out.loss);
        diff::adam_step(params, state.adam);
        ++state.iteration;

        StepRecord step{state.iteration, out.value, out.plain_value, 0.0};
        for (auto b : out.branch_won)
            step.rotated_fraction += b == Branch::Rotated ? 1.0 : 0.0;
        step.rotated_fraction /= static_cast<double>(out.branch_won.size());
        result.steps.push_back(step);
        if (callbacks.on_step)
            callbacks.on_step(step);

        const bool last = state.iteration == config.max_iters;
        if (last || (config.eval_every > 0 && state.iteration % config.eval_every == 0))
            emit_row();
        if (!last && config.checkpoint_every > 0 && state.iteration % config.checkpoint_every == 0)
            checkpoint("checkpoint.ckpt");
    }
    checkpoint("checkpoint.ckpt");
    return result;
}

std::uint64_t config_hash(const TrainConfig& c, const pose::EncoderConfig& e, const implicit::VolumeConfig& v) {
    std::string text = fmt::format("train:{}:{}:{}:{}:{}:{}:{};", c.batch_size, c.learning_rate, c.max_iters, c.seed,
                                   c.eval_every, c.eval_subset, to_string(c.loss_mode));
    text += fmt::format("encoder:{}:{}:{}:{}:{};", e.input_side, fmt::join(e.filter_sigmas, ","),
                        fmt::join(e.conv_channels, ","), e.fc_width, e.translation_range);
    text += fmt::format("volume:{}:{}:{}:{}:{}:{}:{}:{}:{}:{};", implicit::to_string(v.kind), v.input_dim,
                        v.hidden_width, fmt::join(v.layer_counts, ","), v.coord_scale, v.omega0, v.exp_clamp,
                        v.pe_frequencies, v.voxel_side, v.zero_output_init);
    return fnv1a(text);
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, std::uint64_t hash) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        check<IoError>(static_cast<bool>(out), "cannot open {} for writing", tmp.string());
        out.write(kMagic, sizeof kMagic);
        binary::write<std::uint32_t>(out, kFormatVersion);
        binary::write<std::int64_t>(out, state.iteration);
        binary::write<std::uint64_t>(out, hash);
        std::ostringstream rng;
        rng << state.rng;
        binary::write_string(out, rng.str());
        binary::write<std::int64_t>(out, state.cursor);
        binary::write_doubles(out, std::vector<double>(state.order.begin(), state.order.end()));
        const auto& a = state.adam;
        binary::write<std::int64_t>(out, a.step_count);
        for (double x : {a.learning_rate, a.beta1, a.beta2, a.epsilon})
            binary::write<double>(out, x);
        binary::write<std::uint64_t>(out, a.first_moment.size());
        for (std::size_t i = 0; i < a.first_moment.size(); ++i) {
            binary::write_doubles(out, std::vector<double>(a.first_moment[i].begin(), a.first_moment[i].end()));
            binary::write_doubles(out, std::vector<double>(a.second_moment[i].begin(), a.second_moment[i].end()));
        }
        state.encoder.save(out);
        state.volume.save(out);
        check<IoError>(static_cast<bool>(out), "write to {} failed", tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<IoError>(static_cast<bool>(in), "cannot open checkpoint {}", path.string());
    char magic[sizeof kMagic] = {};
    in.read(magic, sizeof magic);
    check<IoError>(in && std::equal(magic, magic + sizeof magic, kMagic), "{}: not a training checkpoint",
                   path.string());
    const auto version = binary::read<std::uint32_t>(in, "checkpoint version");
    check<IoError>(version == kFormatVersion, "{}: unsupported checkpoint version {}", path.string(), version);
    LoadedCheckpoint out;
    auto& s = out.state;
    s.iteration = binary::read<std::int64_t>(in, "iteration");
    out.hash = binary::read<std::uint64_t>(in, "config hash");
    std::istringstream rng(binary::read_string(in, "rng state"));
    rng >> s.rng;
    check<IoError>(!rng.fail(), "{}: corrupt rng state", path.string());
    s.cursor = binary::read<std::int64_t>(in, "batch cursor");
    for (double x : binary::read_doubles(in, "epoch order"))
        s.order.push_back(static_cast<std::int64_t>(x));
    auto& a = s.adam;
    a.step_count = binary::read<std::int64_t>(in, "adam step");
    a.learning_rate = binary::read<double>(in, "adam learning rate");
    a.beta1 = binary::read<double>(in, "adam beta1");
    a.beta2 = binary::read<double>(in, "adam beta2");
    a.epsilon = binary::read<double>(in, "adam epsilon");
    const auto moments = binary::read<std::uint64_t>(in, "adam buffer count");
    check<IoError>(moments < 4096, "{}: implausible moment count {}", path.string(), moments);
    for (std::uint64_t i = 0; i < moments; ++i) {
        const auto m = binary::read_doubles(in, "adam first moment");
        const auto v = binary::read_doubles(in, "adam second moment");
        a.first_moment.emplace_back(m.begin(), m.end());
        a.second_moment.emplace_back(v.begin(), v.end());
    }
    s.encoder = pose::PoseEncoder::load(in);
    s.volume = implicit::ImplicitVolume::load(in);
    return out;
}

} // namespace cryoforge::train
