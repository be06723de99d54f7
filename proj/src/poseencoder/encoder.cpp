#include "cryoforge/poseencoder/encoder.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "cryoforge/diffcore/ops.hpp"
#include "cryoforge/util/binary.hpp"

namespace cryoforge::pose {

using diff::Shape;
using diff::Tensor;

namespace {

constexpr char kMagic[8] = {'C', 'F', 'P', 'O', 'S', 'E', 'N', 'C'};
constexpr std::uint32_t kFormatVersion = 1;

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::int64_t i = -radius; i <= radius; ++i) {
        const double x = static_cast<double>(i);
        total += k[static_cast<std::size_t>(i + radius)] = std::exp(-x * x / (2.0 * sigma * sigma));
    }
    for (auto& v : k)
        v /= total;
    return k;
}

// Separable zero-padded convolution of a side x side plane.
void blur(const double* src, double* dst, std::int64_t side, const std::vector<double>& kernel) {
    const auto radius = static_cast<std::int64_t>(kernel.size() / 2);
    std::vector<double> tmp(static_cast<std::size_t>(side * side), 0.0);
    for (std::int64_t i = 0; i < side; ++i)
        for (std::int64_t j = 0; j < side; ++j) {
            double acc = 0.0;
            for (std::int64_t d = std::max<std::int64_t>(-radius, -j); d <= std::min(radius, side - 1 - j); ++d)
                acc += kernel[static_cast<std::size_t>(d + radius)] * src[i * side + j + d];
            tmp[static_cast<std::size_t>(i * side + j)] = acc;
        }
    for (std::int64_t i = 0; i < side; ++i)
        for (std::int64_t j = 0; j < side; ++j) {
            double acc = 0.0;
            for (std::int64_t d = std::max<std::int64_t>(-radius, -i); d <= std::min(radius, side - 1 - i); ++d)
                acc += kernel[static_cast<std::size_t>(d + radius)] * tmp[static_cast<std::size_t>((i + d) * side + j)];
            dst[i * side + j] = acc;
        }
}

void standardize_in_place(double* v, std::int64_t n) {
    double mean = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        mean += v[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<double>(n);
    const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        v[i] = (v[i] - mean) * scale;
}

Tensor column(const Tensor& v, std::int64_t c) { return diff::narrow(v, 1, c, 1); }

} // namespace

void EncoderConfig::validate() const {
    check(input_side > 0 && input_side % 2 == 0, "encoder: input side must be a positive even number, got {}",
          input_side);
    for (double s : filter_sigmas)
        check(s > 0.0 && std::isfinite(s), "encoder: filter sigma must be positive, got {}", s);
    check(!conv_channels.empty(), "encoder: needs at least one conv block");
    for (auto c : conv_channels)
        check(c > 0, "encoder: conv channel count must be positive, got {}", c);
    check(input_side >> conv_channels.size() >= 1 && input_side % (std::int64_t{1} << conv_channels.size()) == 0,
          "encoder: side {} cannot be halved {} times", input_side, conv_channels.size());
    check(fc_width > 0, "encoder: fc width must be positive, got {}", fc_width);
    check(translation_range > 0.0 && std::isfinite(translation_range),
          "encoder: translation range must be positive, got {}", translation_range);
}

std::vector<spectral::RealImage> gaussian_filter_bank(const spectral::RealImage& image,
                                                      const std::vector<double>& sigmas) {
    check<ShapeError>(image.consistent(), "gaussian_filter_bank: malformed image");
    for (double s : sigmas)
        check(s > 0.0 && std::isfinite(s), "gaussian_filter_bank: sigma must be positive, got {}", s);
    std::vector<spectral::RealImage> out{image};
    for (double s : sigmas) {
        spectral::RealImage f(image.side);
        blur(image.values.data(), f.values.data(), image.side, gaussian_kernel(s));
        out.push_back(std::move(f));
    }
    return out;
}

spectral::RealImage standardize(const spectral::RealImage& image) {
    auto out = image;
    standardize_in_place(out.values.data(), static_cast<std::int64_t>(out.values.size()));
    return out;
}

Mat3 s2s2_to_rotation(const std::array<double, 6>& v) {
    const Vec3 a(v[0], v[1], v[2]), b(v[3], v[4], v[5]);
    check(a.allFinite() && b.allFinite(), "s2s2_to_rotation: non-finite input");
    check(a.norm() > 1e-12, "s2s2_to_rotation: first vector is zero");
    const Vec3 c1 = a.normalized();
    const Vec3 u = b - b.dot(c1) * c1;
    check(u.norm() > 1e-9 * std::max(b.norm(), 1e-300) && b.norm() > 1e-12,
          "s2s2_to_rotation: vectors are zero or parallel");
    const Vec3 c2 = u.normalized();
    Mat3 r;
    r << c1, c2, c1.cross(c2);
    return r;
}

Tensor s2s2_to_rotation(const Tensor& v) {
    check<ShapeError>(v.dim() == 2 && v.size(1) == 6, "s2s2_to_rotation: expected [B, 6], got {}",
                      diff::to_string(v.shape()));
    const auto b = v.size(0);
    const auto d = v.data();
    for (std::int64_t i = 0; i < b; ++i) {
        const Vec3 x(d[6 * i], d[6 * i + 1], d[6 * i + 2]), y(d[6 * i + 3], d[6 * i + 4], d[6 * i + 5]);
        check(x.allFinite() && y.allFinite(), "s2s2_to_rotation: non-finite input in row {}", i);
        const double n = x.norm();
        check(n > 1e-12 && y.norm() > 1e-12 && (y - y.dot(x) / (n * n) * x).norm() > 1e-9 * y.norm(),
              "s2s2_to_rotation: row {} is zero or parallel", i);
    }
    const Tensor a = diff::narrow(v, 1, 0, 3), c = diff::narrow(v, 1, 3, 3);
    const Tensor c1 = a / diff::sqrt(diff::sum(diff::square(a), 1, true));
    const Tensor u = c - c1 * diff::sum(c * c1, 1, true);
    const Tensor c2 = u / diff::sqrt(diff::sum(diff::square(u), 1, true));
    const Tensor x1 = column(c1, 0), y1 = column(c1, 1), z1 = column(c1, 2);
    const Tensor x2 = column(c2, 0), y2 = column(c2, 1), z2 = column(c2, 2);
    const Tensor x3 = y1 * z2 - z1 * y2, y3 = z1 * x2 - x1 * z2, z3 = x1 * y2 - y1 * x2;
    return diff::reshape(diff::concat({x1, x2, x3, y1, y2, y3, z1, z2, z3}, 1), {b, 3, 3});
}

PoseEncoder::PoseEncoder(const EncoderConfig& config, std::uint64_t seed) : m_config(config) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto uniform = [&](Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<Real> v(static_cast<std::size_t>(diff::shape_numel(shape)));
        for (auto& x : v)
            x = static_cast<Real>(dist(rng));
        return Tensor(std::move(shape), std::move(v), true);
    };
    auto in = config.filter_channels();
    for (auto out : config.conv_channels) {
        m_params.push_back(uniform({out, in, 3, 3}, std::sqrt(6.0 / static_cast<double>(9 * in))));
        m_params.push_back(Tensor(Shape{out}, Real{0}, true));
        in = out;
    }
    m_params.push_back(uniform({in, config.fc_width}, std::sqrt(6.0 / static_cast<double>(in))));
    m_params.push_back(Tensor(Shape{config.fc_width}, Real{0}, true));
    const double head = 1.0 / std::sqrt(static_cast<double>(config.fc_width));
    m_params.push_back(uniform({config.fc_width, 6}, head));
    m_params.push_back(uniform({6}, head));
    m_params.push_back(uniform({config.fc_width, 2}, head));
    m_params.push_back(Tensor(Shape{2}, Real{0}, true));
}

std::int64_t PoseEncoder::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : m_params)
        n += p.numel();
    return n;
}

Tensor PoseEncoder::preprocess(const Tensor& images) const {
    const auto side = m_config.input_side;
    check<ShapeError>(images.dim() == 3 && images.size(1) == side && images.size(2) == side,
                      "encoder: images {} do not match input side {}", diff::to_string(images.shape()), side);
    const auto b = images.size(0), k = m_config.filter_channels(), plane = side * side;
    std::vector<std::vector<double>> kernels;
    for (double s : m_config.filter_sigmas)
        kernels.push_back(gaussian_kernel(s));
    std::vector<Real> out(static_cast<std::size_t>(b * k * plane));
    std::vector<double> src(static_cast<std::size_t>(plane)), dst(static_cast<std::size_t>(plane));
    const auto in = images.data();
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t p = 0; p < plane; ++p)
            src[static_cast<std::size_t>(p)] = in[i * plane + p];
        standardize_in_place(src.data(), plane);
        for (std::int64_t c = 0; c < k; ++c) {
            if (c == 0)
                dst = src;
            else
                blur(src.data(), dst.data(), side, kernels[static_cast<std::size_t>(c - 1)]);
            for (std::int64_t p = 0; p < plane; ++p)
                out[static_cast<std::size_t>((i * k + c) * plane + p)] = static_cast<Real>(dst[static_cast<std::size_t>(p)]);
        }
    }
    return Tensor(Shape{b, k, side, side}, std::move(out));
}

EncoderOutput PoseEncoder::forward(const Tensor& stack) const {
    check<ShapeError>(stack.dim() == 4 && stack.size(1) == m_config.filter_channels() &&
                              stack.size(2) == m_config.input_side && stack.size(3) == m_config.input_side,
                      "encoder: stack {} does not match the configuration", diff::to_string(stack.shape()));
    const auto b = stack.size(0);
    Tensor x = stack;
    std::size_t p = 0;
    for (std::size_t blk = 0; blk < m_config.conv_channels.size(); ++blk, p += 2)
        x = diff::max_pool2x2(diff::relu(diff::conv2d(x, m_params[p], m_params[p + 1])));
    x = diff::mean(diff::reshape(x, {b, x.size(1), x.size(2) * x.size(3)}), 2);
    const Tensor h = diff::relu(diff::linear(x, m_params[p], m_params[p + 1]));
    EncoderOutput out;
    out.rotations = s2s2_to_rotation(diff::linear(h, m_params[p + 2], m_params[p + 3]));
    out.translations = diff::tanh(diff::linear(h, m_params[p + 4], m_params[p + 5])) *
                       static_cast<Real>(m_config.translation_range);
    return out;
}

EncoderOutput PoseEncoder::encode(const Tensor& images) const { return forward(preprocess(images)); }

forward::Pose PoseEncoder::encode(const spectral::RealImage& image) const {
    check<ShapeError>(image.consistent() && image.side == m_config.input_side,
                      "encoder: image side {} does not match input side {}", image.side, m_config.input_side);
    diff::NoGradGuard guard;
    std::vector<Real> v(image.values.begin(), image.values.end());
    const auto out = encode(Tensor(Shape{1, image.side, image.side}, std::move(v)));
    forward::Pose pose;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            pose.rotation(i, j) = out.rotations.at(3 * i + j);
    pose.translation = Vec2(out.translations.at(0), out.translations.at(1));
    return pose;
}

std::vector<double> PoseEncoder::flat_parameters() const {
    std::vector<double> out;
    for (const auto& p : m_params)
        out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
}

void PoseEncoder::set_flat_parameters(const std::vector<double>& values) {
    check<ShapeError>(static_cast<std::int64_t>(values.size()) == parameter_count(),
                      "encoder: expected {} parameters, got {}", parameter_count(), values.size());
    std::size_t at = 0;
    for (auto& p : m_params)
        for (auto& x : p.mutable_data())
            x = static_cast<Real>(values[at++]);
}

void PoseEncoder::save(std::ostream& out) const {
    out.write(kMagic, sizeof kMagic);
    binary::write<std::uint32_t>(out, kFormatVersion);
    binary::write<std::int64_t>(out, m_config.input_side);
    binary::write_doubles(out, m_config.filter_sigmas);
    binary::write<std::uint64_t>(out, m_config.conv_channels.size());
    for (auto c : m_config.conv_channels)
        binary::write<std::int64_t>(out, c);
    binary::write<std::int64_t>(out, m_config.fc_width);
    binary::write<double>(out, m_config.translation_range);
    binary::write_doubles(out, flat_parameters());
    check<IoError>(static_cast<bool>(out), "encoder: write failed");
}

PoseEncoder PoseEncoder::load(std::istream& in) {
    char magic[sizeof kMagic] = {};
    in.read(magic, sizeof magic);
    check<IoError>(in && std::equal(magic, magic + sizeof magic, kMagic), "encoder: bad magic");
    const auto version = binary::read<std::uint32_t>(in, "encoder version");
    check<IoError>(version == kFormatVersion, "encoder: unsupported format version {}", version);
    EncoderConfig c;
    c.input_side = binary::read<std::int64_t>(in, "encoder side");
    c.filter_sigmas = binary::read_doubles(in, "encoder sigmas");
    const auto blocks = binary::read<std::uint64_t>(in, "encoder block count");
    check<IoError>(blocks < 64, "encoder: implausible block count {}", blocks);
    c.conv_channels.clear();
    for (std::uint64_t i = 0; i < blocks; ++i)
        c.conv_channels.push_back(binary::read<std::int64_t>(in, "encoder channels"));
    c.fc_width = binary::read<std::int64_t>(in, "encoder fc width");
    c.translation_range = binary::read<double>(in, "encoder translation range");
    PoseEncoder enc(c, 0);
    enc.set_flat_parameters(binary::read_doubles(in, "encoder parameters"));
    return enc;
}

} // namespace cryoforge::pose
