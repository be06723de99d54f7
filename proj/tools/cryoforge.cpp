#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "cryoforge/dataio/dataset.hpp"
#include "cryoforge/dataio/mrc.hpp"
#include "cryoforge/spectral/fft.hpp"
#include "cryoforge/trainer/trainer.hpp"
#include "image_io.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cryoforge;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
    if (!ok)
        throw UsageError(message);
}

double parse_snr(const std::string& text) {
    if (text == "off")
        return forward::kNoiseOff;
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        require(used == text.size() && std::isfinite(v), "");
        return v;
    } catch (const std::exception&) {
        throw UsageError(fmt::format("--snr-db: expected a number or 'off', got '{}'", text));
    }
}

std::string snr_text(double snr) { return std::isfinite(snr) ? fmt::format("{}", snr) : "off"; }

// CSV with a manifest comment line before the header.
class CsvWriter {
public:
    CsvWriter(const fs::path& path, const std::string& hash, const std::string& header) : m_out(path) {
        check<IoError>(static_cast<bool>(m_out), "cannot write {}", path.string());
        m_out << "# manifest " << hash << '\n' << header << '\n';
    }
    void row(const std::string& line) { m_out << line << '\n' << std::flush; }

private:
    std::ofstream m_out;
};

std::string num(double v) { return std::isfinite(v) ? fmt::format("{:.9g}", v) : std::isinf(v) && v > 0 ? "inf" : "nan"; }

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void finish(tools::RunManifest& manifest, const fs::path& dir) {
    manifest.finished_at = tools::utc_now();
    manifest.write(dir);
}

// ------------------------------------------------------------------ simulate

struct SimulateArgs {
    fs::path out;
    std::int64_t n{1000};
    std::int64_t size{32};
    double apix{4.0};
    std::string snr{"off"};
    std::optional<double> shift_sigma;
    std::uint64_t seed{0};
    std::string inplane{"full"};
    std::string phantom{"default"};
    bool dry_run{false};
};

json spec_json(const io::DatasetSpec& s) {
    return {{"n_particles", s.n_particles},
            {"side", s.side},
            {"pixel_size", s.pixel_size},
            {"phantom", s.mrc_path.empty() ? "default" : "mrc:" + s.mrc_path},
            {"shift_sigma", s.shift_sigma},
            {"snr_db", snr_text(s.snr_db)},
            {"defocus_mu_ln", s.defocus_mu_ln},
            {"defocus_sigma_ln", s.defocus_sigma_ln},
            {"astigmatism_sigma", s.astigmatism_sigma},
            {"voltage_kv", s.voltage_kv},
            {"cs_mm", s.cs_mm},
            {"amplitude_contrast", s.amplitude_contrast},
            {"seed", s.seed},
            {"inplane", s.inplane == io::InplaneRange::Half ? "half" : "full"}};
}

int cmd_simulate(const SimulateArgs& a) {
    require(a.size > 0 && a.size % 2 == 0, fmt::format("--size: must be a positive even number, got {}", a.size));
    require(a.apix > 0, fmt::format("--apix: must be positive, got {}", a.apix));
    require(a.n >= 1, fmt::format("--n: must be at least 1, got {}", a.n));
    auto spec = io::default_spec(a.size, a.apix);
    spec.n_particles = a.n;
    spec.seed = a.seed;
    spec.snr_db = parse_snr(a.snr);
    spec.shift_sigma = a.shift_sigma.value_or(a.apix);
    require(spec.shift_sigma >= 0, "--shift-sigma: must be non-negative");
    require(a.inplane == "full" || a.inplane == "half", fmt::format("--inplane: expected full or half, got '{}'", a.inplane));
    spec.inplane = a.inplane == "half" ? io::InplaneRange::Half : io::InplaneRange::Full;
    if (a.phantom.rfind("mrc:", 0) == 0) {
        spec.mrc_path = a.phantom.substr(4);
        require(!spec.mrc_path.empty(), "--phantom: mrc: needs a path");
    } else {
        require(a.phantom == "default", fmt::format("--phantom: expected default or mrc:PATH, got '{}'", a.phantom));
    }
    spec.validate();

    tools::RunManifest manifest;
    manifest.command = "simulate";
    manifest.config = spec_json(spec);
    manifest.seed = spec.seed;
    manifest.outputs = {"meta.json", "particles.f32", "ctf.csv", "gt_poses.csv", "gt_volume.mrc"};
    if (a.dry_run) {
        fmt::print("{}\n", json{{"command", manifest.command}, {"config", manifest.config}, {"hash", manifest.hash()}}.dump(2));
        return 0;
    }
    manifest.started_at = tools::utc_now();
    const auto data = io::generate_dataset(spec);
    fs::create_directories(a.out);
    io::dataset_save(data, a.out);
    io::mrc_write(io::ground_truth_volume(spec), spec.pixel_size, a.out / "gt_volume.mrc");
    finish(manifest, a.out);
    fmt::print("wrote {} particles ({}x{}) to {}\n", data.size(), spec.side, spec.side, a.out.string());
    return 0;
}

// ------------------------------------------------------------------ shared training setup

struct ModelArgs {
    std::string rep{"fouriernet"};
    int hidden{64};
    std::int64_t budget{0};
    std::vector<std::int64_t> channels{32, 64, 128, 256};
    std::int64_t fc_width{256};
};

implicit::VolumeConfig volume_config(const ModelArgs& m, double apix, std::int64_t side) {
    implicit::Kind kind;
    try {
        kind = implicit::parse_kind(m.rep);
    } catch (const DomainError&) {
        throw UsageError(fmt::format("--rep: expected fouriernet, siren, pe_mlp or voxel, got '{}'", m.rep));
    }
    require(m.hidden >= 1, "--hidden: must be positive");
    auto reference = implicit::default_config(implicit::Kind::FourierNet, apix);
    reference.hidden_width = m.hidden;
    const auto target = m.budget > 0 ? m.budget : implicit::analytic_parameter_count(reference);
    if (kind == implicit::Kind::FourierNet && m.budget <= 0)
        return reference;
    auto base = implicit::default_config(kind, apix);
    if (kind == implicit::Kind::Voxel) {
        base.voxel_side = static_cast<int>(side);
        return base;
    }
    try {
        return implicit::match_budget(base, target);
    } catch (const DomainError& e) {
        throw UsageError(fmt::format("--budget: {}", e.what()));
    }
}

pose::EncoderConfig encoder_config(const ModelArgs& m, const io::ParticleDataset& data) {
    pose::EncoderConfig e;
    e.input_side = data.side();
    e.translation_range = data.spec.shift_sigma > 0.0 ? 3.0 * data.spec.shift_sigma : data.spec.pixel_size;
    e.conv_channels = m.channels;
    e.fc_width = m.fc_width;
    try {
        e.validate();
    } catch (const DomainError& err) {
        throw UsageError(fmt::format("--channels/--fc-width: {}", err.what()));
    }
    return e;
}

json volume_json(const implicit::VolumeConfig& v) {
    return {{"kind", implicit::to_string(v.kind)}, {"hidden_width", v.hidden_width}, {"layer_counts", v.layer_counts},
            {"coord_scale", v.coord_scale},       {"omega0", v.omega0},             {"exp_clamp", v.exp_clamp},
            {"pe_frequencies", v.pe_frequencies}, {"voxel_side", v.voxel_side},
            {"parameters", implicit::analytic_parameter_count(v)}};
}

json encoder_json(const pose::EncoderConfig& e) {
    return {{"input_side", e.input_side}, {"filter_sigmas", e.filter_sigmas}, {"conv_channels", e.conv_channels},
            {"fc_width", e.fc_width},     {"translation_range", e.translation_range}};
}

// Even (a) or odd (b) particles; "all" keeps everything.
io::ParticleDataset select_half(const io::ParticleDataset& data, const std::string& half) {
    if (half == "all")
        return data;
    require(half == "a" || half == "b", fmt::format("--half: expected a, b or all, got '{}'", half));
    const std::int64_t first = half == "a" ? 0 : 1;
    io::ParticleDataset out;
    out.spec = data.spec;
    const auto p = static_cast<std::size_t>(data.side() * data.side());
    for (std::int64_t i = first; i < data.size(); i += 2) {
        const auto at = static_cast<std::size_t>(i) * p;
        out.images.insert(out.images.end(), data.images.begin() + static_cast<std::ptrdiff_t>(at),
                          data.images.begin() + static_cast<std::ptrdiff_t>(at + p));
        out.ctfs.push_back(data.ctfs[static_cast<std::size_t>(i)]);
        if (!data.gt_poses.empty())
            out.gt_poses.push_back(data.gt_poses[static_cast<std::size_t>(i)]);
    }
    out.spec.n_particles = out.size();
    require(out.size() >= 1, "--half: the selected half is empty");
    return out;
}

io::ParticleDataset load_data(const fs::path& dir) {
    require(!dir.empty(), "--data: a dataset directory is required");
    require(fs::is_directory(dir), fmt::format("--data: '{}' is not a directory", dir.string()));
    return io::dataset_load(dir);
}

std::vector<double> smoothed(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= window)
            acc -= v[i - window];
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    fs::path data, out, resume;
    std::string loss{"symmetric"};
    ModelArgs model;
    std::int64_t iters{1000};
    std::int64_t batch{32};
    double lr{1e-4};
    std::uint64_t seed{0};
    std::string half{"all"};
    std::int64_t eval_every{500};
    std::int64_t eval_subset{256};
    std::int64_t checkpoint_every{0};
    bool dry_run{false};
};

int cmd_train(const TrainArgs& a) {
    require(!a.out.empty(), "--out: a run directory is required");
    train::LossMode mode;
    try {
        mode = train::parse_loss_mode(a.loss);
    } catch (const DomainError&) {
        throw UsageError(fmt::format("--loss: expected symmetric or l2, got '{}'", a.loss));
    }
    const auto full = load_data(a.data);
    const auto data = select_half(full, a.half);
    const auto apix = data.spec.pixel_size;
    const auto vcfg = volume_config(a.model, apix, data.side());
    const auto ecfg = encoder_config(a.model, data);

    train::TrainConfig cfg;
    cfg.batch_size = a.batch;
    cfg.learning_rate = a.lr;
    cfg.max_iters = a.iters;
    cfg.seed = a.seed;
    cfg.eval_every = a.eval_every;
    cfg.eval_subset = a.eval_subset;
    cfg.loss_mode = mode;
    cfg.checkpoint_every = a.checkpoint_every;
    cfg.checkpoint_dir = a.out;
    try {
        cfg.validate();
    } catch (const DomainError& e) {
        throw UsageError(e.what());
    }
    require(cfg.batch_size <= data.size(),
            fmt::format("--batch: {} exceeds the {} available images", cfg.batch_size, data.size()));

    const auto dataset_manifest = tools::read_manifest(a.data);
    tools::RunManifest manifest;
    manifest.command = "train";
    manifest.seed = a.seed;
    manifest.config = {{"data", fs::absolute(a.data).lexically_normal().string()},
                       {"dataset_hash", dataset_manifest.is_null() ? json(nullptr) : dataset_manifest.value("hash", json(nullptr))},
                       {"half", a.half},
                       {"loss", std::string(train::to_string(mode))},
                       {"iters", cfg.max_iters},
                       {"batch", cfg.batch_size},
                       {"lr", cfg.learning_rate},
                       {"eval_every", cfg.eval_every},
                       {"eval_subset", cfg.eval_subset},
                       {"checkpoint_every", cfg.checkpoint_every},
                       {"resume", a.resume.empty() ? json(nullptr) : json(a.resume.string())},
                       {"encoder", encoder_json(ecfg)},
                       {"volume", volume_json(vcfg)}};
    manifest.outputs = {"metrics.csv", "steps.csv", "checkpoint.ckpt", "loss.png", "resolution.png", "rot_err.png"};
    if (a.dry_run) {
        fmt::print("{}\n", json{{"command", manifest.command}, {"config", manifest.config}, {"hash", manifest.hash()}}.dump(2));
        return 0;
    }

    manifest.started_at = tools::utc_now();
    fs::create_directories(a.out);
    const auto set = train::TrainingSet::from(data);
    train::TrainState state;
    const auto hash = train::config_hash(cfg, ecfg, vcfg);
    if (!a.resume.empty()) {
        auto loaded = train::load_checkpoint(a.resume);
        require(loaded.hash == hash || loaded.state.encoder.config() == ecfg,
                fmt::format("--resume: checkpoint {} was written with a different configuration", a.resume.string()));
        require(loaded.state.volume.config() == vcfg,
                fmt::format("--resume: checkpoint {} has a different volume configuration", a.resume.string()));
        state = std::move(loaded.state);
    } else {
        state = train::initial_state(ecfg, vcfg, set, a.seed);
    }
    manifest.write(a.out);

    const auto mhash = manifest.hash();
    CsvWriter metrics(a.out / "metrics.csv", mhash, train::metrics_csv_header());
    CsvWriter steps(a.out / "steps.csv", mhash, "iter,loss,plain_loss,rotated_fraction");
    std::vector<double> it, ev_loss, res, rot, step_it, step_loss;
    train::TrainCallbacks callbacks;
    callbacks.on_metrics = [&](const train::MetricsRow& row) {
        metrics.row(train::metrics_csv_line(row));
        it.push_back(static_cast<double>(row.iter));
        ev_loss.push_back(row.loss);
        res.push_back(row.fsc_resolution_px);
        rot.push_back(row.rot_err_median);
        fmt::print(stderr, "iter {:>6}  loss {:.4e}  fsc0.5 {:>6.3f} px  rot {:.4f}  trans {:.3f} px2  {:.0f} s\n",
                   row.iter, row.loss, row.fsc_resolution_px, row.rot_err_median, row.trans_err_mean, row.wall_seconds);
    };
    callbacks.on_step = [&](const train::StepRecord& s) {
        steps.row(fmt::format("{},{},{},{}", s.iter, num(s.loss), num(s.plain_loss), num(s.rotated_fraction)));
        step_it.push_back(static_cast<double>(s.iter));
        step_loss.push_back(s.loss);
    };
    const auto result = train::train(set, state, cfg, callbacks);

    tools::write_line_plot({{"step loss (window 100)", step_it, smoothed(step_loss, 100), {31, 119, 180}},
                            {"eval loss", it, ev_loss, {214, 39, 40}}},
                           a.out / "loss.png", {720, 420, true});
    tools::write_line_plot({{"fsc 0.5 resolution (px)", it, res, {44, 160, 44}}}, a.out / "resolution.png");
    tools::write_line_plot({{"median rotation error", it, rot, {148, 103, 189}}}, a.out / "rot_err.png",
                           {720, 420, true});
    const auto& last = result.rows.back();
    manifest.results = {{"iterations", state.iteration},
                        {"loss", number_or_null(last.loss)},
                        {"fsc_resolution_px", number_or_null(last.fsc_resolution_px)},
                        {"rot_err_median", number_or_null(last.rot_err_median)},
                        {"trans_err_mean", number_or_null(last.trans_err_mean)},
                        {"wall_seconds", last.wall_seconds},
                        {"encoder_parameters", state.encoder.parameter_count()},
                        {"volume_parameters", state.volume.parameter_count()}};
    finish(manifest, a.out);
    return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    fs::path ckpt, ckpt_b, data, out;
    std::optional<std::int64_t> subset;
    std::optional<std::string> loss, half;
    bool dry_run{false};
};

json resolution_json(const metrics::Resolution& r) {
    return {{"pixels", number_or_null(r.pixels)}, {"angstrom", number_or_null(r.angstrom)}, {"saturated", r.saturated}};
}

void write_fsc(const metrics::FscCurve& curve, const fs::path& path, const std::string& hash) {
    std::ofstream out(path);
    check<IoError>(static_cast<bool>(out), "cannot write {}", path.string());
    out << "# manifest " << hash << '\n' << metrics::fsc_csv(curve);
}

int cmd_eval(const EvalArgs& a) {
    require(!a.ckpt.empty(), "--ckpt: a checkpoint is required");
    require(fs::exists(a.ckpt), fmt::format("--ckpt: '{}' does not exist", a.ckpt.string()));
    const auto run = tools::read_manifest(a.ckpt.parent_path());
    const auto run_cfg = run.is_null() ? json::object() : run.value("config", json::object());
    const auto subset = a.subset.value_or(run_cfg.value("eval_subset", std::int64_t{256}));
    const auto loss = a.loss.value_or(run_cfg.value("loss", std::string("symmetric")));
    const auto half = a.half.value_or(run_cfg.value("half", std::string("all")));
    fs::path data_dir = a.data;
    if (data_dir.empty() && run_cfg.contains("data"))
        data_dir = run_cfg["data"].get<std::string>();
    const bool half_mode = !a.ckpt_b.empty();
    require(subset >= 1, "--subset: must be at least 1");
    train::LossMode mode;
    try {
        mode = train::parse_loss_mode(loss);
    } catch (const DomainError&) {
        throw UsageError(fmt::format("--loss: expected symmetric or l2, got '{}'", loss));
    }
    const fs::path out = a.out.empty() ? a.ckpt.parent_path() / (half_mode ? "eval_half" : "eval") : a.out;

    tools::RunManifest manifest;
    manifest.command = "eval";
    manifest.config = {{"ckpt", fs::absolute(a.ckpt).lexically_normal().string()},
                       {"ckpt_b", half_mode ? json(fs::absolute(a.ckpt_b).lexically_normal().string()) : json(nullptr)},
                       {"data", fs::absolute(data_dir).lexically_normal().string()},
                       {"subset", subset},
                       {"loss", loss},
                       {"half", half_mode ? json("all") : json(half)},
                       {"mode", half_mode ? "half" : "gt"}};
    manifest.outputs = {"metrics.json", "fsc.csv", "poses.csv", half_mode ? "volume_b_aligned.mrc" : "volume_aligned.mrc"};
    if (a.dry_run) {
        fmt::print("{}\n", json{{"command", manifest.command}, {"config", manifest.config}, {"hash", manifest.hash()}}.dump(2));
        return 0;
    }
    manifest.started_at = tools::utc_now();
    const auto full = load_data(data_dir);
    const auto data = half_mode ? full : select_half(full, half);
    const auto set = train::TrainingSet::from(data);
    const auto first = train::load_checkpoint(a.ckpt).state;
    require(first.encoder.config().input_side == set.side(), "--ckpt: checkpoint and dataset sides differ");
    fs::create_directories(out);
    const auto mhash = manifest.hash();
    json result;

    if (!half_mode) {
        require(!set.gt_poses.empty(), "--data: ground-truth mode needs a dataset with ground-truth poses");
        const auto idx = train::eval_indices(set, subset);
        const auto eval = train::evaluate_reconstruction(set, idx, first.encoder, first.volume, mode);
        result = {{"mode", "gt"},
                  {"iteration", first.iteration},
                  {"images", idx.size()},
                  {"loss", number_or_null(eval.loss)},
                  {"fsc_resolution_px", number_or_null(eval.resolution_05.pixels)},
                  {"resolution_0.5", resolution_json(eval.resolution_05)},
                  {"resolution_0.143", resolution_json(eval.resolution_0143)},
                  {"rot_err_median", number_or_null(eval.rot_err_median)},
                  {"trans_err_mean", number_or_null(eval.trans_err_mean)},
                  {"trans_err_fitted", number_or_null(eval.trans_err_fitted)},
                  {"hand", eval.hand == metrics::Hand::Same ? "same" : "mirrored"},
                  {"volume_shift", {eval.volume_shift.x(), eval.volume_shift.y(), eval.volume_shift.z()}}};
        if (eval.fsc) {
            write_fsc(*eval.fsc, out / "fsc.csv", mhash);
            io::mrc_write(train::aligned_volume(set, first.volume, eval), set.grid.pixel_size, out / "volume_aligned.mrc");
        }
    } else {
        require(fs::exists(a.ckpt_b), fmt::format("--ckpt-b: '{}' does not exist", a.ckpt_b.string()));
        const auto second = train::load_checkpoint(a.ckpt_b).state;
        const auto idx = train::eval_indices(set, std::min(subset, set.count));
        const auto pa = train::evaluate_poses(set, idx, first.encoder, first.volume);
        const auto pb = train::evaluate_poses(set, idx, second.encoder, second.volume);
        std::vector<Mat3> ra, rb;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            ra.push_back(pa.poses[i].rotation);
            rb.push_back(pb.poses[i].rotation);
        }
        // Half b in the frame of half a, then the usual shift fit.
        const auto align = metrics::align_rotations(rb, ra);
        const Mat3 transform = align.hand == metrics::Hand::Same ? align.gauge : Mat3(align.gauge * z_mirror());
        const auto va = implicit::extract_volume(first.volume, set.side(), set.grid.pixel_size);
        const auto rough = implicit::extract_volume(second.volume, set.side(), set.grid.pixel_size, transform);
        const Vec3 shift = metrics::fit_volume_shift(va, rough, set.grid.pixel_size);
        const auto vb = implicit::extract_volume(second.volume, set.side(), set.grid.pixel_size, transform, -shift);
        const auto curve = metrics::fsc(va, vb, set.grid.pixel_size);
        write_fsc(curve, out / "fsc.csv", mhash);
        io::mrc_write(vb, set.grid.pixel_size, out / "volume_b_aligned.mrc");
        result = {{"mode", "half"},
                  {"images", idx.size()},
                  {"resolution_0.143", resolution_json(metrics::resolution_at(curve, 0.143))},
                  {"resolution_0.5", resolution_json(metrics::resolution_at(curve, 0.5))},
                  {"half_rotation_agreement_median", number_or_null(align.median)},
                  {"hand", align.hand == metrics::Hand::Same ? "same" : "mirrored"}};
    }

    const auto poses = train::evaluate_poses(set, train::eval_indices(set, set.count), first.encoder, first.volume);
    {
        CsvWriter csv(out / "poses.csv", mhash, "index,branch,r00,r01,r02,r10,r11,r12,r20,r21,r22,t_x,t_y");
        for (std::size_t i = 0; i < poses.poses.size(); ++i) {
            const auto& p = poses.poses[i];
            std::string line = fmt::format("{},{}", i, poses.branches[i] == train::Branch::Rotated ? "rotated" : "original");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    line += fmt::format(",{}", p.rotation(r, c));
            line += fmt::format(",{},{}", p.translation.x(), p.translation.y());
            csv.row(line);
        }
    }
    std::ofstream(out / "metrics.json") << result.dump(2) << '\n';
    manifest.results = {{"images_per_second", poses.images_per_second}};
    finish(manifest, out);
    fmt::print("{}\nevaluate_poses throughput: {:.1f} images/s\n", result.dump(2), poses.images_per_second);
    return 0;
}

// ------------------------------------------------------------------ fit2d

struct Fit2dArgs {
    fs::path out, image;
    std::int64_t size{64};
    double apix{1.0};
    std::int64_t budget{300000};
    int iters{1000};
    double lr{1e-4};
    std::uint64_t seed{0};
    bool dry_run{false};
};

// Projection of a phantom with sharp and broad blobs: a spectrum spanning many decades.
spectral::RealImage builtin_target(std::int64_t side, double apix) {
    const double box = static_cast<double>(side) * apix;
    auto phantom = spectral::default_phantom(box);
    for (std::size_t i = 0; i < phantom.blobs.size(); i += 2)
        phantom.blobs[i].width *= 0.35;
    spectral::GaussianBlob halo;
    halo.amplitude = 0.05;
    halo.width = 0.18 * box;
    phantom.blobs.push_back(halo);
    const auto grid = spectral::FreqGrid2D::make(side, apix);
    return spectral::phantom_projection_real(phantom, euler_zyz(0.4, 1.1, -0.7), grid);
}

double dynamic_range(const spectral::ComplexImage& s) {
    double hi = 0.0, lo = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 1; i < s.side; ++i)
        for (std::int64_t j = 1; j < s.side; ++j) {
            const double m = std::abs(s(i, j));
            hi = std::max(hi, m);
            if (m > 0)
                lo = std::min(lo, m);
        }
    return std::log10(hi / lo);
}

int cmd_fit2d(const Fit2dArgs& a) {
    require(!a.out.empty(), "--out: an output directory is required");
    require(a.budget > 0, "--budget: must be positive");
    require(a.iters >= 0, "--iters: must be non-negative");
    require(a.lr > 0, "--lr: must be positive");
    require(a.apix > 0, "--apix: must be positive");
    require(a.image.empty() || fs::exists(a.image), fmt::format("--image: '{}' does not exist", a.image.string()));
    if (a.image.empty())
        require(a.size > 0 && a.size % 2 == 0, "--size: must be a positive even number");
    std::map<std::string, implicit::VolumeConfig> configs;
    for (auto kind : {implicit::Kind::FourierNet, implicit::Kind::Siren}) {
        try {
            configs[std::string(implicit::to_string(kind))] =
                    implicit::match_budget(implicit::default_config(kind, a.apix, 2), a.budget);
        } catch (const DomainError& e) {
            throw UsageError(fmt::format("--budget: {}", e.what()));
        }
    }
    tools::RunManifest manifest;
    manifest.command = "fit2d";
    manifest.seed = a.seed;
    manifest.config = {{"image", a.image.empty() ? json("builtin") : json(a.image.string())},
                       {"size", a.image.empty() ? json(a.size) : json(nullptr)},
                       {"apix", a.apix},
                       {"budget", a.budget},
                       {"iters", a.iters},
                       {"lr", a.lr},
                       {"models", {{"fouriernet", volume_json(configs["fouriernet"])}, {"siren", volume_json(configs["siren"])}}}};
    manifest.outputs = {"fit2d.csv", "loss_trace.csv", "target.png", "fouriernet.png", "siren.png", "loss.png"};
    if (a.dry_run) {
        fmt::print("{}\n", json{{"command", manifest.command}, {"config", manifest.config}, {"hash", manifest.hash()}}.dump(2));
        return 0;
    }
    manifest.started_at = tools::utc_now();
    const auto image = a.image.empty() ? builtin_target(a.size, a.apix) : tools::read_gray_image(a.image);
    const auto target = spectral::fft2_centered(image);
    const double decades = dynamic_range(target);
    fs::create_directories(a.out);
    const auto mhash = manifest.hash();

    implicit::Fit2dOptions options;
    options.iterations = a.iters;
    options.learning_rate = a.lr;
    options.seed = a.seed;
    CsvWriter summary(a.out / "fit2d.csv", mhash, "model,parameters,image_mse,spectrum_mse,final_loss");
    std::map<std::string, implicit::Fit2dResult> results;
    for (const auto& [name, cfg] : configs) {
        auto r = implicit::fit2d(target, a.apix, cfg, options);
        summary.row(fmt::format("{},{},{},{},{}", name, r.model.parameter_count(), num(r.image_mse), num(r.spectrum_mse),
                                num(r.loss_trace.empty() ? r.spectrum_mse : r.loss_trace.back())));
        tools::write_gray_png(r.reconstructed_image, a.out / (name + ".png"));
        fmt::print("{:<11} params {:>7}  image mse {:.4e}  spectrum mse {:.4e}\n", name, r.model.parameter_count(),
                   r.image_mse, r.spectrum_mse);
        results.emplace(name, std::move(r));
    }
    tools::write_gray_png(image, a.out / "target.png");
    const auto& fn = results.at("fouriernet");
    const auto& sn = results.at("siren");
    {
        CsvWriter trace(a.out / "loss_trace.csv", mhash, "iter,fouriernet,siren");
        for (std::size_t i = 0; i < fn.loss_trace.size(); ++i)
            trace.row(fmt::format("{},{},{}", i, num(fn.loss_trace[i]), num(sn.loss_trace[i])));
    }
    std::vector<double> xs(fn.loss_trace.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        xs[i] = static_cast<double>(i);
    tools::write_line_plot({{"fouriernet", xs, fn.loss_trace, {214, 39, 40}}, {"siren", xs, sn.loss_trace, {31, 119, 180}}},
                           a.out / "loss.png", {720, 420, true});
    manifest.results = {{"spectrum_decades", decades},
                        {"fouriernet_image_mse", fn.image_mse},
                        {"siren_image_mse", sn.image_mse},
                        {"mse_ratio_siren_over_fouriernet", sn.image_mse / fn.image_mse}};
    finish(manifest, a.out);
    fmt::print("target spectrum spans {:.1f} decades; siren / fouriernet image mse = {:.3g}\n", decades,
               sn.image_mse / fn.image_mse);
    return 0;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, const char* flag) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw UsageError(fmt::format("{}: '{}' is not a comma-separated list of integers", flag, text));
        }
    }
    require(!out.empty(), fmt::format("{}: empty list", flag));
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cryoforge: amortized ab initio reconstruction on synthetic cryo-EM data"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic particle dataset");
    simulate->add_option("--out", sim.out, "Dataset directory")->required();
    simulate->add_option("--n", sim.n, "Number of particles")->capture_default_str();
    simulate->add_option("--size", sim.size, "Image side L (even)")->capture_default_str();
    simulate->add_option("--apix", sim.apix, "Pixel size in Å")->capture_default_str();
    simulate->add_option("--snr-db", sim.snr, "Noise level in dB, or 'off'")->capture_default_str();
    simulate->add_option("--shift-sigma", sim.shift_sigma, "Translation spread in Å (default: one pixel)");
    simulate->add_option("--seed", sim.seed)->capture_default_str();
    simulate->add_option("--inplane", sim.inplane, "full or half")->capture_default_str();
    simulate->add_option("--phantom", sim.phantom, "default or mrc:PATH")->capture_default_str();
    simulate->add_flag("--dry-run", sim.dry_run, "Print the resolved configuration and exit");

    TrainArgs tr;
    std::string train_channels = "32,64,128,256";
    auto* trainc = app.add_subcommand("train", "Train encoder and implicit volume");
    trainc->add_option("--data", tr.data, "Dataset directory")->required();
    trainc->add_option("--out", tr.out, "Run directory")->required();
    trainc->add_option("--loss", tr.loss, "symmetric or l2")->capture_default_str();
    trainc->add_option("--rep", tr.model.rep, "fouriernet, siren, pe_mlp or voxel")->capture_default_str();
    trainc->add_option("--hidden", tr.model.hidden, "FourierNet hidden width (sets the shared budget)")->capture_default_str();
    trainc->add_option("--budget", tr.model.budget, "Volume parameter budget (default: FourierNet's count)");
    trainc->add_option("--channels", train_channels, "Encoder conv widths")->capture_default_str();
    trainc->add_option("--fc-width", tr.model.fc_width)->capture_default_str();
    trainc->add_option("--iters", tr.iters)->capture_default_str();
    trainc->add_option("--batch", tr.batch)->capture_default_str();
    trainc->add_option("--lr", tr.lr)->capture_default_str();
    trainc->add_option("--seed", tr.seed)->capture_default_str();
    trainc->add_option("--half", tr.half, "a (even particles), b (odd) or all")->capture_default_str();
    trainc->add_option("--eval-every", tr.eval_every)->capture_default_str();
    trainc->add_option("--eval-subset", tr.eval_subset)->capture_default_str();
    trainc->add_option("--checkpoint-every", tr.checkpoint_every)->capture_default_str();
    trainc->add_option("--resume", tr.resume, "Continue from a checkpoint");
    trainc->add_flag("--dry-run", tr.dry_run);

    EvalArgs ev;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth or a second half");
    evalc->add_option("--ckpt", ev.ckpt)->required();
    evalc->add_option("--ckpt-b", ev.ckpt_b, "Second half checkpoint (half/half FSC at 0.143)");
    evalc->add_option("--data", ev.data, "Dataset directory (default: from the run manifest)");
    evalc->add_option("--out", ev.out);
    evalc->add_option("--subset", ev.subset, "Images used for the metrics (default: the run's eval subset)");
    evalc->add_option("--loss", ev.loss);
    evalc->add_option("--half", ev.half);
    evalc->add_flag("--dry-run", ev.dry_run);

    Fit2dArgs ft;
    auto* fit = app.add_subcommand("fit2d", "Fit FourierNet and SIREN to a 2D spectrum at equal budgets");
    fit->add_option("--out", ft.out)->required();
    fit->add_option("--image", ft.image, "PNG or PGM (default: built-in target)");
    fit->add_option("--size", ft.size, "Built-in target side")->capture_default_str();
    fit->add_option("--apix", ft.apix)->capture_default_str();
    fit->add_option("--budget", ft.budget)->capture_default_str();
    fit->add_option("--iters", ft.iters)->capture_default_str();
    fit->add_option("--lr", ft.lr)->capture_default_str();
    fit->add_option("--seed", ft.seed)->capture_default_str();
    fit->add_flag("--dry-run", ft.dry_run);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (simulate->parsed())
            return cmd_simulate(sim);
        if (trainc->parsed()) {
            tr.model.channels = parse_int_list(train_channels, "--channels");
            return cmd_train(tr);
        }
        if (evalc->parsed())
            return cmd_eval(ev);
        return cmd_fit2d(ft);
    } catch (const UsageError& e) {
        fmt::print(stderr, "usage error: {}\n", e.what());
        return kExitUsage;
    } catch (const DomainError& e) {
        fmt::print(stderr, "invalid configuration: {}\n", e.what());
        return kExitUsage;
    } catch (const NumericalError& e) {
        fmt::print(stderr, "numerical abort: {}\n", e.what());
        return kExitNumerical;
    } catch (const IoError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const ShapeError& e) {
        fmt::print(stderr, "data error: {}\n", e.what());
        return kExitData;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
