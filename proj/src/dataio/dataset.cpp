#include "cryoforge/dataio/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "cryoforge/dataio/mrc.hpp"
#include "cryoforge/spectral/fft.hpp"
#include "cryoforge/util/parallel.hpp"

namespace cryoforge::io {

namespace {

constexpr int kFormatVersion = 1;
constexpr double kPi = std::numbers::pi;
using json = nlohmann::json;

// Spectrum (continuous units) of an MRC ground truth, oversampled for slicing.
struct MrcSource {
    spectral::ComplexVolume spectrum;
    spectral::RealVolume volume;
};

MrcSource load_mrc_source(const DatasetSpec& spec) {
    auto m = mrc_read(spec.mrc_path);
    check(m.volume.side == spec.side, "dataset: MRC side {} does not match image side {}", m.volume.side, spec.side);
    return {spectral::volume_to_spectrum(m.volume, spec.pixel_size, 3), std::move(m.volume)};
}

spectral::ComplexImage slice_from(const DatasetSpec& spec, const MrcSource* mrc, const Mat3& r,
                                  const spectral::FreqGrid2D& grid) {
    if (!mrc)
        return spectral::phantom_slice(spec.phantom, r, grid);
    auto s = spectral::voxel_slice_interp(mrc->spectrum, r, grid);
    const double scale = 1.0 / (static_cast<double>(spec.side) * spec.pixel_size * spec.pixel_size);
    for (auto& v : s.values)
        v *= scale;
    return s;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

double parse_double(const std::string& s, const std::filesystem::path& file, std::size_t row) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    check<IoError>(ec == std::errc() && ptr == s.data() + s.size(), "{}: row {}: cannot parse '{}' as a number",
                   file.string(), row, s);
    return v;
}

// Data rows of a CSV with the given column count; the header row is checked.
std::vector<std::vector<double>> read_csv(const std::filesystem::path& file, const std::string& header) {
    std::ifstream in(file);
    check<IoError>(static_cast<bool>(in), "cannot open {}", file.string());
    std::string line;
    check<IoError>(static_cast<bool>(std::getline(in, line)) && line == header,
                   "{}: expected header '{}'", file.string(), header);
    const auto columns = split(header).size();
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto cells = split(line);
        check<IoError>(cells.size() == columns, "{}: row {} has {} columns, expected {}", file.string(),
                       rows.size() + 1, cells.size(), columns);
        std::vector<double> row;
        for (const auto& c : cells)
            row.push_back(parse_double(c, file, rows.size() + 1));
        rows.push_back(std::move(row));
    }
    return rows;
}

json phantom_json(const spectral::GaussianPhantom& p) {
    json blobs = json::array();
    for (const auto& b : p.blobs)
        blobs.push_back({{"amplitude", b.amplitude},
                         {"center", {b.center.x(), b.center.y(), b.center.z()}},
                         {"width", b.width}});
    return blobs;
}

spectral::GaussianPhantom phantom_from(const json& blobs) {
    spectral::GaussianPhantom p;
    for (const auto& b : blobs) {
        spectral::GaussianBlob blob;
        blob.amplitude = b.at("amplitude").get<double>();
        const auto c = b.at("center").get<std::vector<double>>();
        check<IoError>(c.size() == 3, "meta.json: blob center needs 3 coordinates");
        blob.center = Vec3(c[0], c[1], c[2]);
        blob.width = b.at("width").get<double>();
        p.blobs.push_back(blob);
    }
    return p;
}

// Non-finite SNR (noise off) is stored as null.
json snr_json(double snr) { return std::isfinite(snr) ? json(snr) : json(nullptr); }

} // namespace

Mat3 sample_rotation_uniform(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (;;) {
        const double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
        if (w * w + x * x + y * y + z * z > 1e-12)
            return quaternion_to_matrix(w, x, y, z);
    }
}

Mat3 sample_rotation_restricted(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double alpha = kPi * (2.0 * u(rng) - 1.0);
    const double beta = std::acos(2.0 * u(rng) - 1.0);
    const double gamma = kPi * (u(rng) - 0.5);
    return euler_zyz(alpha, beta, gamma);
}

double inplane_angle(const Mat3& r) { return zyz_angles(r)[2]; }

void DatasetSpec::validate() const {
    check(n_particles >= 1, "dataset: need at least one particle, got {}", n_particles);
    spectral::require_even_side(side, "dataset");
    check(pixel_size > 0.0 && std::isfinite(pixel_size), "dataset: pixel size must be positive, got {}", pixel_size);
    check(shift_sigma >= 0.0 && std::isfinite(shift_sigma), "dataset: shift sigma must be >= 0, got {}", shift_sigma);
    check(!std::isnan(snr_db) && snr_db != -forward::kNoiseOff, "dataset: SNR must be finite or off");
    check(defocus_sigma_ln >= 0.0 && astigmatism_sigma >= 0.0, "dataset: spreads must be non-negative");
    if (mrc_path.empty())
        phantom.validate();
    forward::CtfParams ctf;
    ctf.voltage_kv = voltage_kv;
    ctf.spherical_aberration_mm = cs_mm;
    ctf.amplitude_contrast = amplitude_contrast;
    ctf.validate();
}

DatasetSpec default_spec(std::int64_t side, double pixel_size) {
    DatasetSpec s;
    s.side = side;
    s.pixel_size = pixel_size;
    s.shift_sigma = pixel_size;
    s.phantom = spectral::default_phantom(static_cast<double>(side) * pixel_size);
    return s;
}

spectral::RealImage ParticleDataset::image(std::int64_t i) const {
    check<ShapeError>(i >= 0 && i < size(), "dataset: particle {} out of range [0, {})", i, size());
    spectral::RealImage img(spec.side);
    const auto plane = spec.side * spec.side;
    std::copy_n(images.begin() + i * plane, plane, img.values.begin());
    return img;
}

void ParticleDataset::validate() const {
    const auto n = static_cast<std::int64_t>(ctfs.size());
    check<ShapeError>(n == spec.n_particles, "dataset: {} CTF rows for {} particles", n, spec.n_particles);
    check<ShapeError>(static_cast<std::int64_t>(images.size()) == n * spec.side * spec.side,
                      "dataset: image stack holds {} values, expected {}", images.size(), n * spec.side * spec.side);
    check<ShapeError>(gt_poses.empty() || static_cast<std::int64_t>(gt_poses.size()) == n,
                      "dataset: {} poses for {} particles", gt_poses.size(), n);
}

spectral::ComplexImage ground_truth_slice(const DatasetSpec& spec, const Mat3& r) {
    const auto grid = spectral::FreqGrid2D::make(spec.side, spec.pixel_size);
    if (spec.mrc_path.empty())
        return slice_from(spec, nullptr, r, grid);
    const auto src = load_mrc_source(spec);
    return slice_from(spec, &src, r, grid);
}

spectral::RealVolume ground_truth_volume(const DatasetSpec& spec) {
    if (!spec.mrc_path.empty())
        return mrc_read(spec.mrc_path).volume;
    return spectral::spectrum_to_volume(spectral::phantom_volume_ft(spec.phantom, spec.side, spec.pixel_size),
                                        spec.pixel_size);
}

ParticleDataset generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    ParticleDataset data;
    data.spec = spec;
    const auto n = spec.n_particles, plane = spec.side * spec.side;
    data.images.resize(static_cast<std::size_t>(n * plane));
    data.ctfs.resize(static_cast<std::size_t>(n));
    data.gt_poses.resize(static_cast<std::size_t>(n));
    const auto grid = spectral::FreqGrid2D::make(spec.side, spec.pixel_size);
    std::optional<MrcSource> mrc;
    if (!spec.mrc_path.empty())
        mrc = load_mrc_source(spec);

    parallel_for(n, [&](std::int64_t i) {
        std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(i))));
        forward::Pose pose;
        if (spec.identity_poses)
            pose.rotation = Mat3::Identity();
        else
            pose.rotation = spec.inplane == InplaneRange::Half ? sample_rotation_restricted(rng)
                                                               : sample_rotation_uniform(rng);
        std::normal_distribution<double> shift(0.0, 1.0);
        pose.translation = spec.shift_sigma * Vec2(shift(rng), shift(rng));

        forward::CtfParams ctf;
        std::normal_distribution<double> normal(0.0, 1.0);
        const double mean_defocus = std::exp(spec.defocus_mu_ln + spec.defocus_sigma_ln * normal(rng));
        const double astig = spec.astigmatism_sigma * normal(rng);
        std::uniform_real_distribution<double> angle(0.0, kPi);
        ctf.defocus_u = mean_defocus + 0.5 * astig;
        ctf.defocus_v = mean_defocus - 0.5 * astig;
        ctf.astigmatism_angle = angle(rng);
        ctf.voltage_kv = spec.voltage_kv;
        ctf.spherical_aberration_mm = spec.cs_mm;
        ctf.amplitude_contrast = spec.amplitude_contrast;

        auto spectrum = forward::synthesize(slice_from(spec, mrc ? &*mrc : nullptr, pose.rotation, grid),
                                            forward::ctf_eval(ctf, grid), pose.translation, grid);
        spectral::clear_unpaired_bins(spectrum);
        const auto field = spectral::ifft2_centered(spectrum);
        const double leak = spectral::imaginary_leakage(field);
        check<NumericalError>(leak <= 1e-6, "generate_dataset: particle {} has imaginary leakage {:.3g}", i, leak);
        auto image = spectral::real_part(field);
        if (std::isfinite(spec.snr_db))
            image = forward::add_noise_snr(image, spec.snr_db, rng);
        std::transform(image.values.begin(), image.values.end(), data.images.begin() + i * plane,
                       [](double v) { return static_cast<float>(v); });
        data.ctfs[static_cast<std::size_t>(i)] = ctf;
        data.gt_poses[static_cast<std::size_t>(i)] = pose;
    });
    return data;
}

void dataset_save(const ParticleDataset& data, const std::filesystem::path& dir) {
    data.validate();
    std::filesystem::create_directories(dir);
    const auto& s = data.spec;
    json meta = {
            {"format_version", kFormatVersion},
            {"n_particles", s.n_particles},
            {"side", s.side},
            {"pixel_size", s.pixel_size},
            {"phantom", phantom_json(s.phantom)},
            {"mrc_path", s.mrc_path},
            {"shift_sigma", s.shift_sigma},
            {"snr_db", snr_json(s.snr_db)},
            {"defocus_lognormal", {s.defocus_mu_ln, s.defocus_sigma_ln}},
            {"astigmatism_sigma", s.astigmatism_sigma},
            {"voltage_kv", s.voltage_kv},
            {"cs_mm", s.cs_mm},
            {"amplitude_contrast", s.amplitude_contrast},
            {"seed", s.seed},
            {"inplane_range", s.inplane == InplaneRange::Half ? "half" : "full"},
            {"identity_poses", s.identity_poses},
            {"has_gt_poses", !data.gt_poses.empty()},
            {"decisions",
             {{"defocus", "log-normal, mu_ln = ln(10000 A), sigma_ln = 0.25 unless overridden"},
              {"astigmatism", "defocus_u - defocus_v ~ N(0, astigmatism_sigma^2) A, angle uniform on [0, pi)"},
              {"inplane", "half range restricts gamma of Rz(alpha) Ry(beta) Rz(gamma) to [-pi/2, pi/2]"}}},
    };
    std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

    std::ofstream particles(dir / "particles.f32", std::ios::binary);
    particles.write(reinterpret_cast<const char*>(data.images.data()),
                    static_cast<std::streamsize>(data.images.size() * sizeof(float)));
    check<IoError>(static_cast<bool>(particles), "cannot write {}", (dir / "particles.f32").string());

    std::ofstream ctf(dir / "ctf.csv");
    ctf << "defocus_u,defocus_v,astigmatism_angle,voltage_kv,cs_mm,amplitude_contrast\n";
    for (const auto& c : data.ctfs)
        ctf << fmt::format("{},{},{},{},{},{}\n", c.defocus_u, c.defocus_v, c.astigmatism_angle, c.voltage_kv,
                           c.spherical_aberration_mm, c.amplitude_contrast);
    if (!data.gt_poses.empty()) {
        std::ofstream poses(dir / "gt_poses.csv");
        poses << "r00,r01,r02,r10,r11,r12,r20,r21,r22,t_x,t_y\n";
        for (const auto& p : data.gt_poses) {
            const auto& r = p.rotation;
            poses << fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1),
                                 r(1, 2), r(2, 0), r(2, 1), r(2, 2), p.translation.x(), p.translation.y());
        }
    }
}

ParticleDataset dataset_load(const std::filesystem::path& dir) {
    const auto meta_path = dir / "meta.json";
    std::ifstream meta_in(meta_path);
    check<IoError>(static_cast<bool>(meta_in), "cannot open {}", meta_path.string());
    json meta;
    try {
        meta = json::parse(meta_in);
    } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: {}", meta_path.string(), e.what()));
    }
    ParticleDataset data;
    bool has_poses = false;
    try {
        const int version = meta.at("format_version").get<int>();
        check<IoError>(version == kFormatVersion, "{}: format version {} is not supported (expected {})",
                       meta_path.string(), version, kFormatVersion);
        auto& s = data.spec;
        s.n_particles = meta.at("n_particles").get<std::int64_t>();
        s.side = meta.at("side").get<std::int64_t>();
        s.pixel_size = meta.at("pixel_size").get<double>();
        s.phantom = phantom_from(meta.at("phantom"));
        s.mrc_path = meta.at("mrc_path").get<std::string>();
        s.shift_sigma = meta.at("shift_sigma").get<double>();
        s.snr_db = meta.at("snr_db").is_null() ? forward::kNoiseOff : meta.at("snr_db").get<double>();
        const auto defocus = meta.at("defocus_lognormal").get<std::vector<double>>();
        check<IoError>(defocus.size() == 2, "{}: defocus_lognormal needs two values", meta_path.string());
        s.defocus_mu_ln = defocus[0];
        s.defocus_sigma_ln = defocus[1];
        s.astigmatism_sigma = meta.at("astigmatism_sigma").get<double>();
        s.voltage_kv = meta.at("voltage_kv").get<double>();
        s.cs_mm = meta.at("cs_mm").get<double>();
        s.amplitude_contrast = meta.at("amplitude_contrast").get<double>();
        s.seed = meta.at("seed").get<std::uint64_t>();
        s.inplane = meta.at("inplane_range").get<std::string>() == "half" ? InplaneRange::Half : InplaneRange::Full;
        s.identity_poses = meta.at("identity_poses").get<bool>();
        has_poses = meta.at("has_gt_poses").get<bool>();
    } catch (const json::exception& e) {
        throw IoError(fmt::format("{}: {}", meta_path.string(), e.what()));
    }
    const auto n = data.spec.n_particles, plane = data.spec.side * data.spec.side;
    check<IoError>(n >= 1 && data.spec.side > 0, "{}: invalid particle count or side", meta_path.string());

    const auto stack_path = dir / "particles.f32";
    check<IoError>(std::filesystem::exists(stack_path), "cannot open {}", stack_path.string());
    const auto expected = static_cast<std::uintmax_t>(n * plane) * sizeof(float);
    const auto actual = std::filesystem::file_size(stack_path);
    check<IoError>(actual == expected, "{}: expected {} bytes, found {}", stack_path.string(), expected, actual);
    data.images.resize(static_cast<std::size_t>(n * plane));
    std::ifstream stack(stack_path, std::ios::binary);
    stack.read(reinterpret_cast<char*>(data.images.data()), static_cast<std::streamsize>(expected));
    check<IoError>(static_cast<bool>(stack), "{}: read failed", stack_path.string());

    const auto ctf_path = dir / "ctf.csv";
    const auto ctf_rows = read_csv(ctf_path, "defocus_u,defocus_v,astigmatism_angle,voltage_kv,cs_mm,amplitude_contrast");
    check<IoError>(static_cast<std::int64_t>(ctf_rows.size()) == n, "{}: {} rows, expected {}", ctf_path.string(),
                   ctf_rows.size(), n);
    for (const auto& r : ctf_rows) {
        forward::CtfParams c;
        c.defocus_u = r[0];
        c.defocus_v = r[1];
        c.astigmatism_angle = r[2];
        c.voltage_kv = r[3];
        c.spherical_aberration_mm = r[4];
        c.amplitude_contrast = r[5];
        data.ctfs.push_back(c);
    }

    if (has_poses) {
        const auto pose_path = dir / "gt_poses.csv";
        const auto rows = read_csv(pose_path, "r00,r01,r02,r10,r11,r12,r20,r21,r22,t_x,t_y");
        check<IoError>(static_cast<std::int64_t>(rows.size()) == n, "{}: {} rows, expected {}", pose_path.string(),
                       rows.size(), n);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            forward::Pose p;
            p.rotation << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
            const double drift = orthonormality_drift(p.rotation);
            check<IoError>(drift <= 1e-3, "{}: row {} is not a rotation (drift {:.3g})", pose_path.string(), i + 1,
                           drift);
            if (drift > 1e-6)
                p.rotation = nearest_rotation(p.rotation);
            p.translation = Vec2(r[9], r[10]);
            data.gt_poses.push_back(p);
        }
    }
    data.validate();
    return data;
}

} // namespace cryoforge::io
