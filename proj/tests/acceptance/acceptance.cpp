// Acceptance suite: one PASS/FAIL line per criterion.
//
// Criteria 1-5 and 9 run in-process at 64-bit. Criteria 6-8 drive the cryoforge
// CLI; finished runs are kept under the runs directory and reused while the CLI
// binary and the arguments are unchanged.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "../unit/gradcheck.hpp"
#include "cryoforge/dataio/dataset.hpp"
#include "cryoforge/dataio/mrc.hpp"
#include "cryoforge/metrics/metrics.hpp"
#include "cryoforge/spectral/fft.hpp"
#include "cryoforge/spectral/phantom.hpp"
#include "cryoforge/trainer/trainer.hpp"
#include "cryoforge/util/hash.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cryoforge;
using gradcheck::probe;
using gradcheck::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass{false};
    std::string detail;
};

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return quaternion_to_matrix(n(rng), n(rng), n(rng), n(rng));
}

double relative_l2(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / den);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ------------------------------------------------------------------ criterion 1

Outcome fourier_slice_oracle() {
    const auto start = Clock::now();
    const auto grid = spectral::FreqGrid2D::make(64, 2.0);
    const auto phantom = spectral::default_phantom(64 * 2.0);
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Mat3 r = random_rotation(rng);
        const auto via_fourier = spectral::real_part(spectral::ifft2_centered(spectral::phantom_slice(phantom, r, grid)));
        const auto direct = spectral::phantom_projection_real(phantom, r, grid);
        worst = std::max(worst, relative_l2(via_fourier.values, direct.values));
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-6 && elapsed < 10.0,
            fmt::format("worst rel. L2 {:.2e} (< 1e-6) over 20 rotations at L=64, {:.2f} s (< 10 s)", worst, elapsed)};
}

// ------------------------------------------------------------------ criterion 2

struct GradCase {
    std::string name;
    std::function<diff::Tensor(const std::vector<diff::Tensor>&)> f;
    std::vector<diff::Tensor> inputs;
};

std::vector<GradCase> op_cases() {
    using namespace diff;
    std::mt19937_64 rng(202);
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    auto row = random_tensor({4}, rng), col = random_tensor({3, 1}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    auto c = random_tensor({2, 1, 4}, rng), d = random_tensor({3, 1}, rng);
    // Keep relu and clamp_max inputs away from their kinks.
    auto away = random_tensor({3, 4}, rng, 0.1, 1.0);
    {
        auto v = away.mutable_data();
        for (std::size_t i = 0; i < v.size(); i += 2)
            v[i] = -v[i];
    }
    auto m = random_tensor({3, 4}, rng), mb = random_tensor({4, 2}, rng);
    auto ba = random_tensor({2, 3, 4}, rng), bb = random_tensor({2, 4, 2}, rng);
    auto x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng), bias = random_tensor({3}, rng);
    auto img = random_tensor({2, 2, 6, 6}, rng), kern = random_tensor({3, 2, 3, 3}, rng), kb = random_tensor({3}, rng);
    auto r3 = random_tensor({3, 4, 2}, rng), r3b = random_tensor({3, 2, 2}, rng);
    auto ar = random_tensor({6}, rng), ai = random_tensor({6}, rng), br = random_tensor({6}, rng),
         bi = random_tensor({6}, rng), s = random_tensor({6}, rng);
    auto complex_probe = [](const ComplexPair& p) { return add(probe(p.re, 1), probe(p.im, 2)); };

    return {
            {"add", [](const auto& v) { return probe(add(v[0], v[1])); }, {a, b}},
            {"sub", [](const auto& v) { return probe(sub(v[0], v[1])); }, {a, b}},
            {"mul", [](const auto& v) { return probe(mul(v[0], v[1])); }, {a, b}},
            {"div", [](const auto& v) { return probe(div(v[0], v[1])); }, {a, pos}},
            {"mul broadcast suffix", [](const auto& v) { return probe(mul(v[0], v[1])); }, {a, row}},
            {"sub broadcast prefix", [](const auto& v) { return probe(sub(v[0], v[1])); }, {a, col}},
            {"div broadcast", [](const auto& v) { return probe(div(v[1], v[0])); }, {pos, col}},
            {"mul general broadcast", [](const auto& v) { return probe(mul(v[0], v[1])); }, {c, d}},
            {"add_scalar", [](const auto& v) { return probe(add_scalar(v[0], 0.3)); }, {a}},
            {"mul_scalar", [](const auto& v) { return probe(mul_scalar(v[0], -1.7)); }, {a}},
            {"neg", [](const auto& v) { return probe(neg(v[0])); }, {a}},
            {"sin", [](const auto& v) { return probe(sin(v[0])); }, {a}},
            {"sine", [](const auto& v) { return probe(sine(v[0], 30.0)); }, {a}},
            {"cos", [](const auto& v) { return probe(cos(v[0])); }, {a}},
            {"exp", [](const auto& v) { return probe(exp(v[0])); }, {a}},
            {"relu", [](const auto& v) { return probe(relu(v[0])); }, {away}},
            {"tanh", [](const auto& v) { return probe(tanh(v[0])); }, {a}},
            {"sqrt", [](const auto& v) { return probe(sqrt(v[0])); }, {pos}},
            {"square", [](const auto& v) { return probe(square(v[0])); }, {a}},
            {"clamp_max", [](const auto& v) { return probe(clamp_max(v[0], 0.05)); }, {away}},
            {"matmul", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {m, mb}},
            {"matmul batched", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {ba, bb}},
            {"matmul shared left", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {m, bb}},
            {"matmul shared right", [](const auto& v) { return probe(matmul(v[0], v[1])); }, {ba, mb}},
            {"transpose", [](const auto& v) { return probe(transpose(v[0])); }, {ba}},
            {"linear", [](const auto& v) { return probe(linear(v[0], v[1], v[2])); }, {x, w, bias}},
            {"conv2d", [](const auto& v) { return probe(conv2d(v[0], v[1], v[2])); }, {img, kern, kb}},
            {"conv2d stride 2", [](const auto& v) { return probe(conv2d(v[0], v[1], v[2], 2)); }, {img, kern, kb}},
            {"max_pool2x2", [](const auto& v) { return probe(max_pool2x2(v[0])); }, {img}},
            {"sum", [](const auto& v) { return sum(mul(v[0], v[0])); }, {r3}},
            {"sum axis", [](const auto& v) { return probe(sum(v[0], 1)); }, {r3}},
            {"mean", [](const auto& v) { return mean(square(v[0])); }, {r3}},
            {"mean axis", [](const auto& v) { return probe(mean(v[0], 0, true)); }, {r3}},
            {"l2_norm_squared", [](const auto& v) { return l2_norm_squared(v[0]); }, {r3}},
            {"reshape", [](const auto& v) { return probe(reshape(v[0], {4, 6})); }, {r3}},
            {"concat", [](const auto& v) { return probe(concat({v[0], v[1]}, 1)); }, {r3, r3b}},
            {"narrow", [](const auto& v) { return probe(narrow(v[0], 1, 1, 2)); }, {r3}},
            {"gather_rows", [](const auto& v) { return probe(gather_rows(v[0], {2, 0, 2, 1})); }, {r3}},
            {"complex_mul", [=](const auto& v) { return complex_probe(complex_mul({v[0], v[1]}, {v[2], v[3]})); },
             {ar, ai, br, bi}},
            {"complex_scale", [=](const auto& v) { return complex_probe(complex_scale({v[0], v[1]}, v[2])); },
             {ar, ai, s}},
            {"conj", [=](const auto& v) { return complex_probe(conj({v[0], v[1]})); }, {ar, ai}},
            {"abs_squared", [](const auto& v) { return probe(abs_squared({v[0], v[1]})); }, {ar, ai}},
    };
}

pose::EncoderConfig toy_encoder(std::int64_t side) {
    pose::EncoderConfig c;
    c.input_side = side;
    c.filter_sigmas = {1.5};
    c.conv_channels = {3, 4};
    c.fc_width = 8;
    return c;
}

implicit::VolumeConfig toy_volume(implicit::Kind kind, double apix, bool zero_init) {
    auto v = implicit::default_config(kind, apix);
    v.hidden_width = 8;
    v.layer_counts = kind == implicit::Kind::FourierNet ? std::vector<int>{1, 1} : std::vector<int>{1};
    v.zero_output_init = zero_init;
    return v;
}

io::ParticleDataset toy_dataset(std::int64_t n, std::uint64_t seed, double snr_db = forward::kNoiseOff) {
    auto spec = io::default_spec(16, 4.0);
    spec.n_particles = n;
    spec.seed = seed;
    spec.snr_db = snr_db;
    return io::generate_dataset(spec);
}

Outcome gradient_suite() {
    const auto start = Clock::now();
    double worst = 0.0;
    std::string worst_name;
    int checked = 0;
    auto record = [&](const std::string& name, double err) {
        ++checked;
        if (!(err <= worst)) {
            worst = err;
            worst_name = name;
        }
    };
    for (auto& c : op_cases())
        record(c.name, gradcheck::max_relative_error(c.f, c.inputs));

    const auto set = train::TrainingSet::from(toy_dataset(2, 3));
    for (auto kind : {implicit::Kind::FourierNet, implicit::Kind::Siren, implicit::Kind::PeMlp}) {
        auto state = train::initial_state(toy_encoder(16), toy_volume(kind, 4.0, false), set, 5);
        std::vector<diff::Tensor> inputs = state.encoder.parameters();
        for (const auto& p : state.volume.parameters())
            inputs.push_back(p);
        for (auto mode : {train::LossMode::Symmetric, train::LossMode::PlainL2}) {
            const auto err = gradcheck::max_relative_error(
                    [&](const std::vector<diff::Tensor>&) {
                        return train::symmetric_loss(set, {0, 1}, state.encoder, state.volume, mode).loss;
                    },
                    inputs, 1e-6);
            record(fmt::format("encoder->slice->synthesize->{} loss ({})", train::to_string(mode),
                               implicit::to_string(kind)),
                   err);
        }
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-4 && elapsed < 120.0,
            fmt::format("{} checks, worst rel. error {:.2e} ({}) (< 1e-4), {:.1f} s (< 120 s)", checked, worst,
                        worst_name, elapsed)};
}

// ------------------------------------------------------------------ criterion 3

Outcome handedness_algebra() {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi), tilt(0.0, std::numbers::pi);
    const Mat3 f = z_mirror();
    double identity = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const double a = ang(rng), b = tilt(rng), g = ang(rng);
        identity = std::max(identity, (f * euler_zyz(a, b, g) - metrics::mirror_rotation(a, b, g) * f).cwiseAbs().maxCoeff());
    }
    const auto grid = spectral::FreqGrid2D::make(32, 2.0);
    const auto phantom = spectral::default_phantom(32 * 2.0);
    double analytic = 0.0, voxel = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Mat3 r = random_rotation(rng);
        analytic = std::max(analytic, metrics::mirror_projection_check(phantom, r, grid));
        if (i < 3)
            voxel = std::max(voxel, metrics::mirror_projection_check_voxel(phantom, r, grid));
    }
    return {identity < 1e-12 && analytic < 1e-10 && voxel < 5e-2,
            fmt::format("F R = R~ F max dev {:.1e} over 1000 triples (< 1e-12); mirror projection analytic {:.1e} "
                        "(< 1e-10), voxel path {:.2e} (< 5e-2)",
                        identity, analytic, voxel)};
}

// ------------------------------------------------------------------ criterion 4

Outcome hermitian_reality() {
    double worst = 0.0;
    for (auto kind : {implicit::Kind::FourierNet, implicit::Kind::Siren, implicit::Kind::PeMlp}) {
        auto cfg = implicit::default_config(kind, 4.0);
        cfg.hidden_width = 16;
        cfg.zero_output_init = false;
        for (std::uint64_t trial = 0; trial < 50; ++trial) {
            const implicit::ImplicitVolume vol(cfg, 1000 + trial);
            auto spectrum = implicit::sample_spectrum(vol, 16, 4.0);
            spectral::clear_unpaired_bins(spectrum);
            worst = std::max(worst, spectral::imaginary_leakage(spectral::ifft3_centered(spectrum)));
        }
    }
    return {worst < 1e-5, fmt::format("max imaginary leakage {:.2e} (< 1e-5) over 3 kinds x 50 random inits", worst)};
}

// ------------------------------------------------------------------ criterion 5

// Half-turns image n of the set in place (pixels and spectrum).
void flip_image(train::TrainingSet& set, std::int64_t n) {
    const auto perm = train::rot180_permutation(set.side());
    const auto p = static_cast<std::size_t>(set.pixels());
    const auto base = static_cast<std::size_t>(n) * p;
    for (auto* v : {&set.images, &set.spectrum_re, &set.spectrum_im}) {
        std::vector<Real> copy(v->begin() + static_cast<std::ptrdiff_t>(base),
                               v->begin() + static_cast<std::ptrdiff_t>(base + p));
        for (std::size_t q = 0; q < p; ++q)
            (*v)[base + static_cast<std::size_t>(perm[q])] = copy[q];
    }
}

std::vector<double> gradients(train::TrainState& s) {
    std::vector<double> out;
    for (auto* list : {&s.encoder.parameters(), &s.volume.parameters()})
        for (const auto& t : *list)
            out.insert(out.end(), t.grad().begin(), t.grad().end());
    return out;
}

void zero_gradients(train::TrainState& s) {
    for (auto* list : {&s.encoder.parameters(), &s.volume.parameters()})
        for (auto& t : *list)
            t.zero_grad();
}

Outcome symmetric_loss_contracts() {
    // (a) L_sym <= L_plain on every batch of a 500-iteration run.
    const auto set = train::TrainingSet::from(toy_dataset(64, 21));
    auto state = train::initial_state(toy_encoder(16), toy_volume(implicit::Kind::FourierNet, 4.0, true), set, 1);
    train::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.max_iters = 500;
    cfg.eval_every = 0;
    const auto run = train::train(set, state, cfg);
    std::int64_t violations = 0;
    for (const auto& s : run.steps)
        violations += s.loss > s.plain_loss ? 1 : 0;

    // (b) invariance under half-turning a single image, and (c) routing on 1-image probes.
    std::mt19937_64 rng(505);
    const auto pool = toy_dataset(100, 22);
    double invariance = 0.0;
    std::int64_t nonzero_routing = 0, rotated_wins = 0;
    const auto one = train::TrainingSet::from(pool);
    for (int c = 0; c < 100; ++c) {
        auto probe_state = train::initial_state(toy_encoder(16), toy_volume(implicit::Kind::FourierNet, 4.0, false),
                                                one, rng());
        const std::vector<std::int64_t> idx{c};
        const auto before = train::symmetric_loss(one, idx, probe_state.encoder, probe_state.volume);
        auto turned = one;
        flip_image(turned, c);
        const auto after = train::symmetric_loss(turned, idx, probe_state.encoder, probe_state.volume);
        invariance = std::max(invariance, std::abs(after.value - before.value) / std::max(std::abs(before.value), 1e-300));

        // Gradients of the symmetric loss must equal plain L2 on the winning branch alone,
        // which leaves nothing for the losing branch.
        zero_gradients(probe_state);
        diff::backward(before.loss);
        const auto sym = gradients(probe_state);
        auto winner = one;
        if (before.branch_won[0] == train::Branch::Rotated) {
            flip_image(winner, c);
            ++rotated_wins;
        }
        zero_gradients(probe_state);
        diff::backward(
                train::symmetric_loss(winner, idx, probe_state.encoder, probe_state.volume, train::LossMode::PlainL2).loss);
        const auto plain = gradients(probe_state);
        for (std::size_t i = 0; i < sym.size(); ++i)
            nonzero_routing += sym[i] != plain[i] ? 1 : 0;
    }

    // (d) render consistency of resolve_pose on random volumes and poses.
    const auto grid = spectral::FreqGrid2D::make(16, 4.0);
    forward::CtfParams ctf;
    ctf.defocus_u = 9000.0;
    ctf.defocus_v = 10500.0;
    ctf.astigmatism_angle = 0.7;
    const auto c = forward::ctf_eval(ctf, grid);
    std::normal_distribution<double> shift(0.0, 4.0);
    double render = 0.0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const implicit::ImplicitVolume vol(toy_volume(implicit::Kind::FourierNet, 4.0, false), 77 + trial);
        const forward::Pose p{random_rotation(rng), Vec2(shift(rng), shift(rng))};
        const auto q = train::resolve_pose(p, train::Branch::Rotated);
        const auto y = train::rot180(forward::synthesize(implicit::slice_query(vol, p.rotation, grid), c, p.translation, grid));
        const auto z = forward::synthesize(implicit::slice_query(vol, q.rotation, grid), c, q.translation, grid);
        double num = 0.0, den = 0.0;
        for (std::int64_t i = 1; i < 16; ++i)
            for (std::int64_t j = 1; j < 16; ++j) {
                num += std::norm(z(i, j) - y(i, j));
                den += std::norm(y(i, j));
            }
        render = std::max(render, std::sqrt(num / den));
    }

    const bool pass = violations == 0 && invariance < 1e-10 && nonzero_routing == 0 && rotated_wins > 0 && render < 1e-6;
    return {pass, fmt::format("L_sym > L_plain on {} of {} batches; rot180 invariance {:.1e} (< 1e-10, 100 cases); "
                              "{} gradient entries differ from winner-only routing ({} rotated winners); "
                              "render consistency {:.1e} (< 1e-6)",
                              violations, run.steps.size(), invariance, nonzero_routing, rotated_wins, render)};
}

// ------------------------------------------------------------------ CLI runs

struct Cli {
    fs::path binary;
    fs::path runs;
    std::uint64_t binary_hash{0};

    // Runs the CLI unless a finished run with the same key exists. Returns the exit code.
    int run(const std::string& name, const std::vector<std::string>& args, bool cache = true) const {
        const auto dir = runs / name;
        std::string joined;
        for (const auto& a : args)
            joined += a + '\x1f';
        const auto key = hex_digest(fnv1a(joined, binary_hash));
        if (cache && read_file(dir / "acceptance.key") == key)
            return 0;
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::string cmd = "'" + binary.string() + "'";
        for (const auto& a : args)
            cmd += " '" + a + "'";
        cmd += " > '" + (dir / "cli.log").string() + "' 2>&1";
        fmt::print("  running {} ...\n", name);
        std::cout.flush();
        const auto start = Clock::now();
        const int status = std::system(cmd.c_str());
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128;
        fmt::print("  {} finished with exit code {} after {:.1f} min\n", name, code, seconds_since(start) / 60.0);
        if (code == 0)
            std::ofstream(dir / "acceptance.key") << key;
        return code;
    }

    [[nodiscard]] fs::path dir(const std::string& name) const { return runs / name; }
};

struct Row {
    std::int64_t iter{0};
    double loss{0.0}, fsc_px{0.0}, rot{0.0}, trans{0.0}, wall{0.0};
};

std::vector<Row> read_metrics(const fs::path& path) {
    std::ifstream in(path);
    std::vector<Row> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("iter", 0) == 0)
            continue;
        std::vector<double> v;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');)
            v.push_back(std::strtod(cell.c_str(), nullptr));
        if (v.size() == 6)
            rows.push_back({static_cast<std::int64_t>(v[0]), v[1], v[2], v[3], v[4], v[5]});
    }
    return rows;
}

std::optional<Row> row_at(const std::vector<Row>& rows, std::int64_t iter) {
    for (const auto& r : rows)
        if (r.iter == iter)
            return r;
    return std::nullopt;
}

std::string fmt_px(double v) { return std::isfinite(v) ? fmt::format("{:.2f} px", v) : fmt::format("{} px", v); }

struct Training {
    json cfg;
    std::vector<std::string> train_args(const fs::path& data, const fs::path& out, const std::string& loss,
                                        const std::string& rep, std::int64_t iters) const {
        return {"train",
                "--data", data.string(),
                "--out", out.string(),
                "--loss", loss,
                "--rep", rep,
                "--iters", std::to_string(iters),
                "--batch", std::to_string(cfg["batch"].get<int>()),
                "--lr", fmt::format("{}", cfg["lr"].get<double>()),
                "--seed", std::to_string(cfg["seed"].get<int>()),
                "--channels", cfg["channels"].get<std::string>(),
                "--fc-width", std::to_string(cfg["fc_width"].get<int>()),
                "--hidden", std::to_string(cfg["hidden"].get<int>()),
                "--eval-every", std::to_string(cfg["eval_every"].get<int>()),
                "--eval-subset", std::to_string(cfg["eval_subset"].get<int>())};
    }
    std::vector<std::string> simulate_args(const fs::path& out, const std::string& snr, const std::string& inplane) const {
        return {"simulate",
                "--out", out.string(),
                "--n", std::to_string(cfg["particles"].get<int>()),
                "--size", std::to_string(cfg["size"].get<int>()),
                "--apix", fmt::format("{}", cfg["apix"].get<double>()),
                "--snr-db", snr,
                "--seed", std::to_string(cfg["dataset_seed"].get<int>()),
                "--inplane", inplane};
    }
};

// Dataset directory for one noise level and in-plane range; simulated on demand.
fs::path dataset(const Cli& cli, const Training& t, const std::string& snr, const std::string& inplane) {
    const auto name = fmt::format("data_snr{}_{}", snr, inplane);
    const int code = cli.run(name, t.simulate_args(cli.dir(name) / "d", snr, inplane));
    if (code != 0)
        throw std::runtime_error(fmt::format("simulate {} failed with exit code {}", name, code));
    return cli.dir(name) / "d";
}

std::vector<Row> training_run(const Cli& cli, const Training& t, const std::string& name, const fs::path& data,
                              const std::string& loss, const std::string& rep, std::int64_t iters) {
    const int code = cli.run(name, t.train_args(data, cli.dir(name) / "run", loss, rep, iters));
    if (code != 0)
        throw std::runtime_error(fmt::format("training run {} failed with exit code {} (see {})", name, code,
                                             (cli.dir(name) / "cli.log").string()));
    return read_metrics(cli.dir(name) / "run" / "metrics.csv");
}

std::optional<Row> first_reaching(const std::vector<Row>& rows, double fsc_px, double rot = INFINITY) {
    for (const auto& r : rows)
        if (r.fsc_px <= fsc_px && r.rot < rot)
            return r;
    return std::nullopt;
}

// ------------------------------------------------------------------ criterion 6

Outcome reconstruction(const Cli& cli, const Training& t, const json& th, std::vector<Row>& reference) {
    const auto data = dataset(cli, t, "off", "full");
    reference = training_run(cli, t, "reconstruction", data, "symmetric", "fouriernet", th["max_iters"].get<int>());
    const double fsc_px = th["fsc_px"], rot = th["rot_err_median"], minutes = th["minutes"];
    const auto hit = first_reaching(reference, fsc_px, rot);
    const auto& last = reference.back();
    if (!hit)
        return {false, fmt::format("not reached in {} iterations (final: FSC-0.5 {}, rot err {:.4f}; "
                                   "need <= {} px and < {})",
                                   last.iter, fmt_px(last.fsc_px), last.rot, fsc_px, rot)};
    const double used = hit->wall / 60.0;
    return {used < minutes,
            fmt::format("FSC-0.5 {} and rot err {:.4f} at iteration {} (<= {} px, < {}), {:.1f} min on 1 core "
                        "(< {} min); final {} / {:.4f}",
                        fmt_px(hit->fsc_px), hit->rot, hit->iter, fsc_px, rot, used, minutes, fmt_px(last.fsc_px),
                        last.rot)};
}

// ------------------------------------------------------------------ criterion 7

Outcome ablations(const Cli& cli, const Training& t, const json& th, const std::vector<Row>& reference) {
    std::vector<std::string> parts;
    bool pass = true;
    const auto data = dataset(cli, t, "off", "full");

    // (a) iterations to the representation threshold.
    const double threshold = th["representation_threshold_px"];
    const auto fourier = first_reaching(reference, threshold);
    if (!fourier) {
        pass = false;
        parts.push_back(fmt::format("(a) FAIL: FourierNet never reached {} px", threshold));
    } else {
        std::string a = fmt::format("(a) FourierNet reaches {} px at iter {}", threshold, fourier->iter);
        bool ok = true;
        for (const std::string rep : {"siren", "pe_mlp"}) {
            const auto rows = training_run(cli, t, "rep_" + rep, data, "symmetric", rep, fourier->iter);
            const auto hit = first_reaching(rows, threshold);
            ok = ok && !hit;
            a += hit ? fmt::format(", {} at iter {}", rep, hit->iter)
                     : fmt::format(", {} not by iter {} (best {})", rep, fourier->iter,
                                   fmt_px(std::min_element(rows.begin(), rows.end(), [](auto& x, auto& y) {
                                              return x.fsc_px < y.fsc_px;
                                          })->fsc_px));
        }
        pass = pass && ok;
        parts.push_back((ok ? "" : "FAIL ") + a);
    }

    // (b) symmetric vs plain L2 on full in-plane data.
    const std::int64_t budget = th["loss_budget"];
    const auto sym = row_at(reference, budget);
    const auto l2 = training_run(cli, t, "loss_l2_full", data, "l2", "fouriernet", budget);
    if (!sym || l2.empty()) {
        pass = false;
        parts.push_back(fmt::format("(b) FAIL: no rows at iteration {}", budget));
    } else {
        const bool ok = sym->fsc_px < l2.back().fsc_px;
        pass = pass && ok;
        parts.push_back(fmt::format("(b) {}at iter {}: symmetric {} vs plain L2 {}", ok ? "" : "FAIL ", budget,
                                    fmt_px(sym->fsc_px), fmt_px(l2.back().fsc_px)));
    }

    // (c) plain L2 on half in-plane data succeeds.
    const auto half = training_run(cli, t, "loss_l2_half", dataset(cli, t, "off", "half"), "l2", "fouriernet", budget);
    const double ratio_max = th["half_inplane_loss_ratio"];
    if (!sym || half.empty()) {
        pass = false;
        parts.push_back("(c) FAIL: missing rows");
    } else {
        const double ratio = half.back().loss / sym->loss;
        const bool ok = ratio <= ratio_max;
        pass = pass && ok;
        parts.push_back(fmt::format("(c) {}half-inplane L2 final loss {:.3g} = {:.2f}x symmetric (<= {}x), {}",
                                    ok ? "" : "FAIL ", half.back().loss, ratio, ratio_max, fmt_px(half.back().fsc_px)));
    }

    // (d) resolution degrades with noise.
    const std::int64_t snr_budget = th["snr_budget"];
    std::vector<double> res;
    std::string d = "(d) ";
    for (const auto& snr : th["snr_db"]) {
        const auto level = snr.get<std::string>();
        double r = NAN;
        if (level == "off") {
            if (const auto row = row_at(reference, snr_budget))
                r = row->fsc_px;
        } else {
            const auto rows = training_run(cli, t, "snr_" + level, dataset(cli, t, level, "full"), "symmetric",
                                           "fouriernet", snr_budget);
            if (!rows.empty())
                r = rows.back().fsc_px;
        }
        res.push_back(r);
        d += fmt::format("{}{} dB {}", res.size() > 1 ? ", " : "", level, fmt_px(r));
    }
    bool monotone = !std::isnan(res[0]);
    for (std::size_t i = 1; i < res.size(); ++i)
        monotone = monotone && !std::isnan(res[i]) && res[i] > res[i - 1];
    pass = pass && monotone;
    parts.push_back((monotone ? "" : "FAIL ") + d + fmt::format(" at iter {}", snr_budget));

    std::string detail;
    for (const auto& p : parts)
        detail += (detail.empty() ? "" : "; ") + p;
    return {pass, detail};
}

// ------------------------------------------------------------------ criterion 8

Outcome fit2d(const Cli& cli, const json& th) {
    const auto out = cli.dir("fit2d") / "out";
    const auto start = Clock::now();
    const int code = cli.run("fit2d", {"fit2d", "--out", out.string(), "--budget", std::to_string(th["budget"].get<int>()),
                                       "--iters", std::to_string(th["iters"].get<int>()), "--lr",
                                       fmt::format("{}", th["lr"].get<double>())});
    if (code != 0)
        return {false, fmt::format("fit2d exited with code {}", code)};
    const auto manifest = json::parse(read_file(out / "manifest.json"));
    const auto& r = manifest["results"];
    const double decades = r["spectrum_decades"], ratio = r["mse_ratio_siren_over_fouriernet"];
    // A reused run reports the duration recorded in its manifest.
    double minutes = seconds_since(start) / 60.0;
    if (minutes < 0.05) {
        std::tm a{}, b{};
        std::istringstream(manifest["started_at"].get<std::string>()) >> std::get_time(&a, "%Y-%m-%dT%H:%M:%SZ");
        std::istringstream(manifest["finished_at"].get<std::string>()) >> std::get_time(&b, "%Y-%m-%dT%H:%M:%SZ");
        minutes = std::difftime(timegm(&b), timegm(&a)) / 60.0;
    }
    const double min_decades = th["min_decades"], min_ratio = th["min_ratio"], max_minutes = th["minutes"];
    return {decades >= min_decades && ratio >= min_ratio && minutes < max_minutes,
            fmt::format("target spans {:.1f} decades (>= {}); SIREN / FourierNet image MSE = {:.2f} (>= {}); "
                        "{:.1f} min (< {} min)",
                        decades, min_decades, ratio, min_ratio, minutes, max_minutes)};
}

// ------------------------------------------------------------------ criterion 9

// Metrics CSV without the wall_seconds column.
std::string without_wall_time(const std::string& csv) {
    std::stringstream in(csv);
    std::string out;
    for (std::string line; std::getline(in, line);)
        out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

Outcome io_determinism(const Cli& cli) {
    const auto tmp = cli.dir("io");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    std::vector<std::string> failures;

    std::mt19937_64 rng(909);
    std::normal_distribution<float> n(0.0f, 1.0f);
    spectral::RealVolume vol(24);
    for (auto& v : vol.values)
        v = n(rng);
    io::mrc_write(vol, 1.75, tmp / "v.mrc");
    const auto back = io::mrc_read(tmp / "v.mrc");
    if (!(back.volume == vol && back.pixel_size == 1.75))
        failures.push_back("MRC round trip");

    const auto d1 = toy_dataset(40, 7, 0.0), d2 = toy_dataset(40, 7, 0.0);
    if (!(d1 == d2))
        failures.push_back("in-process dataset generation");
    io::dataset_save(d1, tmp / "ds");
    if (!(io::dataset_load(tmp / "ds") == d1))
        failures.push_back("dataset round trip");

    const auto set = train::TrainingSet::from(d1);
    train::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.max_iters = 20;
    cfg.eval_every = 5;
    cfg.eval_subset = 16;
    std::vector<std::string> traces;
    for (int rep = 0; rep < 2; ++rep) {
        auto s = train::initial_state(toy_encoder(16), toy_volume(implicit::Kind::FourierNet, 4.0, true), set, 3);
        std::string trace;
        for (const auto& row : train::train(set, s, cfg).rows)
            trace += train::metrics_csv_line(row).substr(0, train::metrics_csv_line(row).rfind(',')) + '\n';
        traces.push_back(trace);
    }
    if (traces[0] != traces[1])
        failures.push_back("in-process metric trace");

    // Through the CLI: two simulations and two trainings with identical seeds.
    const std::vector<std::string> sim{"simulate", "--n", "64", "--size", "16", "--snr-db", "0", "--seed", "4"};
    for (const std::string name : {"sim_a", "sim_b"}) {
        auto args = sim;
        args.insert(args.end(), {"--out", (cli.dir("io") / name / "d").string()});
        if (cli.run("io/" + name, args, false) != 0)
            failures.push_back("CLI simulate " + name);
    }
    for (const std::string file : {"meta.json", "particles.f32", "ctf.csv", "gt_poses.csv", "gt_volume.mrc"})
        if (read_file(tmp / "sim_a" / "d" / file) != read_file(tmp / "sim_b" / "d" / file))
            failures.push_back("CLI dataset " + file);
    for (const std::string name : {"train_a", "train_b"}) {
        const std::vector<std::string> args{"train", "--data", (tmp / "sim_a" / "d").string(), "--out",
                                            (tmp / name / "run").string(), "--iters", "30", "--batch", "8",
                                            "--eval-every", "10", "--eval-subset", "32", "--channels", "4,8",
                                            "--fc-width", "16", "--hidden", "8", "--lr", "1e-3"};
        if (cli.run("io/" + name, args, false) != 0)
            failures.push_back("CLI train " + name);
    }
    const auto ma = read_file(tmp / "train_a" / "run" / "metrics.csv");
    const auto mb = read_file(tmp / "train_b" / "run" / "metrics.csv");
    if (ma.empty() || without_wall_time(ma) != without_wall_time(mb))
        failures.push_back("CLI metrics.csv");
    if (read_file(tmp / "train_a" / "run" / "steps.csv") != read_file(tmp / "train_b" / "run" / "steps.csv"))
        failures.push_back("CLI steps.csv");

    std::string detail = "MRC and dataset round trips bit-exact; identical seeds give identical datasets and metric "
                         "traces in-process and through the CLI (wall_seconds excluded)";
    if (!failures.empty()) {
        detail = "mismatch in:";
        for (const auto& f : failures)
            detail += " [" + f + "]";
    }
    return {failures.empty(), detail};
}

} // namespace

int main(int argc, char** argv) {
    fs::path runs = CRYOFORGE_ACCEPTANCE_RUNS;
    fs::path thresholds_path = CRYOFORGE_ACCEPTANCE_THRESHOLDS;
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--runs" && i + 1 < argc) {
            runs = argv[++i];
        } else if (arg == "--thresholds" && i + 1 < argc) {
            thresholds_path = argv[++i];
        } else if (arg == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string item; std::getline(ss, item, ',');)
                only.push_back(std::stoi(item));
        } else {
            fmt::print(stderr, "usage: acceptance [--runs DIR] [--thresholds FILE] [--only 1,2,...]\n");
            return 2;
        }
    }
    const auto th = json::parse(read_file(thresholds_path));
    Cli cli{CRYOFORGE_CLI, fs::absolute(runs), 0};
    cli.binary_hash = fnv1a(read_file(cli.binary));
    fs::create_directories(cli.runs);
    const Training training{th["training"]};
    std::vector<Row> reference;

    const std::vector<std::pair<int, std::string>> names{
            {1, "Fourier-slice oracle"},     {2, "gradient suite"},
            {3, "handedness algebra"},       {4, "Hermitian/reality"},
            {5, "symmetric-loss contracts"}, {6, "desk-scale reconstruction"},
            {7, "ablation orderings"},       {8, "fit2d FourierNet vs SIREN"},
            {9, "I/O and determinism"}};
    int failed = 0;
    for (const auto& [id, name] : names) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end())
            continue;
        Outcome out;
        const auto start = Clock::now();
        try {
            switch (id) {
            case 1: out = fourier_slice_oracle(); break;
            case 2: out = gradient_suite(); break;
            case 3: out = handedness_algebra(); break;
            case 4: out = hermitian_reality(); break;
            case 5: out = symmetric_loss_contracts(); break;
            case 6: out = reconstruction(cli, training, th["reconstruction"], reference); break;
            case 7:
                if (reference.empty())
                    out = reconstruction(cli, training, th["reconstruction"], reference);
                out = ablations(cli, training, th["ablations"], reference);
                break;
            case 8: out = fit2d(cli, th["fit2d"]); break;
            default: out = io_determinism(cli); break;
            }
        } catch (const std::exception& e) {
            out = {false, fmt::format("error: {}", e.what())};
        }
        failed += out.pass ? 0 : 1;
        fmt::print("[{}] criterion {} ({}): {} [{:.1f} s]\n", out.pass ? "PASS" : "FAIL", id, name, out.detail,
                   seconds_since(start));
        std::cout.flush();
    }
    return failed == 0 ? 0 : 1;
}
