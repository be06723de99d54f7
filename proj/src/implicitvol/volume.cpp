#include "cryoforge/implicitvol/volume.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>

#include "cryoforge/diffcore/ops.hpp"
#include "cryoforge/util/binary.hpp"

namespace cryoforge::implicit {

using diff::Shape;
using diff::Tensor;

namespace {

constexpr char kMagic[8] = {'C', 'F', 'I', 'M', 'P', 'V', 'O', 'L'};
constexpr std::uint32_t kFormatVersion = 1;

int branch_count(Kind kind) {
    switch (kind) {
    case Kind::FourierNet: return 2;
    case Kind::Siren:
    case Kind::PeMlp: return 1;
    case Kind::Voxel: return 0;
    }
    return 0;
}

std::int64_t network_input_dim(const VolumeConfig& c) {
    return c.kind == Kind::PeMlp ? c.input_dim * (1 + 2 * c.pe_frequencies) : c.input_dim;
}

// Sign that maps a point into the canonical half-space: the first nonzero
// coordinate must be positive. Zero for the origin.
int canonical_sign(const Real* k, int dim) {
    for (int d = 0; d < dim; ++d) {
        if (k[d] > 0)
            return 1;
        if (k[d] < 0)
            return -1;
    }
    return 0;
}

// Trilinear lookup into a [M^3, 2] grid at scaled points in [-1, 1]^3.
Tensor trilinear_field(const Tensor& grid, const Tensor& x, std::int64_t m) {
    const auto n = x.size(0);
    const Real half = static_cast<Real>(m) / 2;
    struct Stencil {
        std::int64_t idx[8];
        Real w[8];
        Real t[3];
        std::int64_t base[3];
        bool inside;
    };
    std::vector<Stencil> st(static_cast<std::size_t>(n));
    std::vector<Real> out(static_cast<std::size_t>(2 * n), Real{0});
    const auto xv = x.data();
    const auto gv = grid.data();
    for (std::int64_t i = 0; i < n; ++i) {
        auto& s = st[static_cast<std::size_t>(i)];
        s.inside = true;
        std::int64_t lo[3], hi[3];
        for (int d = 0; d < 3; ++d) {
            const Real u = xv[i * 3 + d] * half + half;
            const Real f = std::floor(u);
            s.t[d] = u - f;
            lo[d] = static_cast<std::int64_t>(f);
            hi[d] = s.t[d] > 0 ? lo[d] + 1 : lo[d];
            s.base[d] = lo[d];
            if (lo[d] < 0 || hi[d] >= m)
                s.inside = false;
        }
        if (!s.inside)
            continue;
        for (int c = 0; c < 8; ++c) {
            const std::int64_t ix = (c & 1) ? hi[0] : lo[0];
            const std::int64_t iy = (c & 2) ? hi[1] : lo[1];
            const std::int64_t iz = (c & 4) ? hi[2] : lo[2];
            s.idx[c] = (iz * m + iy) * m + ix;
            s.w[c] = ((c & 1) ? s.t[0] : 1 - s.t[0]) * ((c & 2) ? s.t[1] : 1 - s.t[1]) *
                     ((c & 4) ? s.t[2] : 1 - s.t[2]);
            out[static_cast<std::size_t>(2 * i)] += s.w[c] * gv[s.idx[c] * 2];
            out[static_cast<std::size_t>(2 * i + 1)] += s.w[c] * gv[s.idx[c] * 2 + 1];
        }
    }
    return diff::detail::make_result(
            "trilinear_field", Shape{n, 2}, std::move(out), {grid.node_ptr(), x.node_ptr()},
            [st = std::move(st), half, n](diff::detail::Node& self) {
                auto& g = *self.parents[0];
                auto& p = *self.parents[1];
                for (std::int64_t i = 0; i < n; ++i) {
                    const auto& s = st[static_cast<std::size_t>(i)];
                    if (!s.inside)
                        continue;
                    const Real gr = self.grad[2 * i], gi = self.grad[2 * i + 1];
                    if (g.requires_grad) {
                        auto& gg = g.ensure_grad();
                        for (int c = 0; c < 8; ++c) {
                            gg[s.idx[c] * 2] += s.w[c] * gr;
                            gg[s.idx[c] * 2 + 1] += s.w[c] * gi;
                        }
                    }
                    if (p.requires_grad) {
                        auto& gp = p.ensure_grad();
                        for (int d = 0; d < 3; ++d) {
                            Real acc = 0;
                            for (int c = 0; c < 8; ++c) {
                                Real dw = (c >> d) & 1 ? Real{1} : Real{-1};
                                for (int e = 0; e < 3; ++e)
                                    if (e != d)
                                        dw *= (c >> e) & 1 ? s.t[e] : 1 - s.t[e];
                                acc += dw * (gr * g.value[s.idx[c] * 2] + gi * g.value[s.idx[c] * 2 + 1]);
                            }
                            gp[i * 3 + d] += acc * half;
                        }
                    }
                }
            });
}

struct DepthSolution {
    VolumeConfig config;
    std::int64_t count;
};

std::optional<DepthSolution> solve_width(VolumeConfig c, std::int64_t target, double tolerance) {
    const double t = static_cast<double>(target);
    double estimate;
    if (c.kind == Kind::Voxel) {
        estimate = std::cbrt(t / 2.0);
    } else {
        const double d = static_cast<double>(network_input_dim(c));
        double a = 0, b = 0, k = 0;
        for (int h : c.layer_counts) {
            a += h;
            b += d + 3 + h;
            k += 2;
        }
        estimate = a > 0 ? (-b + std::sqrt(b * b - 4 * a * (k - t))) / (2 * a) : (t - k) / b;
    }
    std::optional<DepthSolution> best;
    for (auto w = static_cast<std::int64_t>(std::floor(estimate)) - 1; w <= static_cast<std::int64_t>(estimate) + 2; ++w) {
        if (w < 1)
            continue;
        if (c.kind == Kind::Voxel)
            c.voxel_side = static_cast<int>(w);
        else
            c.hidden_width = static_cast<int>(w);
        const auto n = analytic_parameter_count(c);
        if (std::abs(static_cast<double>(n) - t) > tolerance * t)
            continue;
        if (!best || std::abs(n - target) < std::abs(best->count - target))
            best = DepthSolution{c, n};
    }
    return best;
}

} // namespace

std::string_view to_string(Kind kind) {
    switch (kind) {
    case Kind::FourierNet: return "fouriernet";
    case Kind::Siren: return "siren";
    case Kind::PeMlp: return "pe_mlp";
    case Kind::Voxel: return "voxel";
    }
    return "unknown";
}

Kind parse_kind(std::string_view name) {
    for (auto k : {Kind::FourierNet, Kind::Siren, Kind::PeMlp, Kind::Voxel})
        if (name == to_string(k))
            return k;
    throw DomainError(fmt::format("unknown representation '{}' (expected fouriernet, siren, pe_mlp or voxel)", name));
}

void VolumeConfig::validate() const {
    check(input_dim == 2 || input_dim == 3, "volume config: input_dim must be 2 or 3, got {}", input_dim);
    check(static_cast<int>(layer_counts.size()) == branch_count(kind),
          "volume config: {} needs {} layer counts, got {}", to_string(kind), branch_count(kind), layer_counts.size());
    for (int h : layer_counts)
        check(h >= 0, "volume config: negative layer count {}", h);
    check(coord_scale > 0.0, "volume config: coord_scale must be positive, got {}", coord_scale);
    if (kind == Kind::Voxel) {
        check(input_dim == 3, "volume config: the voxel grid is 3D only");
        check(voxel_side >= 2, "volume config: voxel side must be >= 2, got {}", voxel_side);
    } else {
        check(hidden_width >= 1, "volume config: hidden width must be >= 1, got {}", hidden_width);
    }
    if (kind == Kind::PeMlp)
        check(pe_frequencies >= 0, "volume config: pe_frequencies must be >= 0, got {}", pe_frequencies);
    check(omega0 > 0.0, "volume config: omega0 must be positive");
}

VolumeConfig default_config(Kind kind, double pixel_size, int input_dim) {
    check(pixel_size > 0.0, "default_config: pixel size must be positive, got {}", pixel_size);
    VolumeConfig c;
    c.kind = kind;
    c.input_dim = input_dim;
    c.coord_scale = 2.0 * pixel_size;
    switch (kind) {
    case Kind::FourierNet: c.layer_counts = {2, 3}; break;
    case Kind::Siren: c.layer_counts = {3}; break;
    case Kind::PeMlp: c.layer_counts = {3}; break;
    case Kind::Voxel: c.layer_counts = {}; break;
    }
    return c;
}

std::int64_t analytic_parameter_count(const VolumeConfig& c) {
    c.validate();
    if (c.kind == Kind::Voxel)
        return 2 * static_cast<std::int64_t>(c.voxel_side) * c.voxel_side * c.voxel_side;
    const std::int64_t d = network_input_dim(c), w = c.hidden_width;
    std::int64_t total = 0;
    for (int h : c.layer_counts)
        total += (d * w + w) + h * (w * w + w) + (2 * w + 2);
    return total;
}

std::int64_t analytic_weight_count(const VolumeConfig& c) {
    c.validate();
    if (c.kind == Kind::Voxel)
        return analytic_parameter_count(c);
    const std::int64_t d = network_input_dim(c), w = c.hidden_width;
    std::int64_t total = 0;
    for (int h : c.layer_counts)
        total += d * w + h * w * w + 2 * w;
    return total;
}

VolumeConfig match_budget(VolumeConfig base, std::int64_t target, double tolerance) {
    base.validate();
    check(target > 0, "match_budget: target must be positive, got {}", target);
    if (auto s = solve_width(base, target, tolerance))
        return s->config;
    // Fall back to nearby depths: fewest changed layers first, then closest count.
    std::optional<DepthSolution> best;
    int best_distance = 0;
    const auto nb = base.layer_counts.size();
    std::vector<int> depths(nb, 1);
    while (nb > 0) {
        VolumeConfig c = base;
        c.layer_counts = depths;
        if (auto s = solve_width(c, target, tolerance)) {
            int distance = 0;
            for (std::size_t i = 0; i < nb; ++i)
                distance += std::abs(depths[i] - base.layer_counts[i]);
            if (!best || distance < best_distance ||
                (distance == best_distance && std::abs(s->count - target) < std::abs(best->count - target))) {
                best = s;
                best_distance = distance;
            }
        }
        std::size_t i = 0;
        while (i < nb && ++depths[i] > 6)
            depths[i++] = 1;
        if (i == nb)
            break;
    }
    check(best.has_value(), "match_budget: no {} configuration within {:.1f}% of {} parameters",
          to_string(base.kind), 100 * tolerance, target);
    return best->config;
}

ImplicitVolume::ImplicitVolume(const VolumeConfig& config, std::uint64_t seed) : m_config(config) {
    config.validate();
    std::mt19937_64 rng(seed);
    auto uniform = [&](Shape shape, double bound) {
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<Real> v(static_cast<std::size_t>(diff::shape_numel(shape)));
        for (auto& x : v)
            x = static_cast<Real>(u(rng));
        return Tensor(std::move(shape), std::move(v), true);
    };
    if (config.kind == Kind::Voxel) {
        const std::int64_t m = config.voxel_side;
        m_params.push_back(config.zero_output_init ? Tensor(Shape{m * m * m, 2}, 0.0, true)
                                                   : uniform({m * m * m, 2}, 1.0));
        return;
    }
    const bool sine = config.kind != Kind::PeMlp;
    const std::int64_t w = config.hidden_width;
    for (int hidden : config.layer_counts) {
        std::int64_t in = network_input_dim(config);
        for (int layer = 0; layer < hidden + 2; ++layer) {
            const bool last = layer == hidden + 1;
            const std::int64_t out = last ? 2 : w;
            double bound;
            if (sine)
                bound = layer == 0 ? 1.0 / static_cast<double>(in)
                                   : std::sqrt(6.0 / static_cast<double>(in)) / config.omega0;
            else
                bound = std::sqrt(6.0 / static_cast<double>(in));
            const double bias_bound = 1.0 / std::sqrt(static_cast<double>(in));
            if (last && config.zero_output_init) {
                m_params.emplace_back(Shape{in, out}, 0.0, true);
                m_params.emplace_back(Shape{out}, 0.0, true);
            } else {
                m_params.push_back(uniform({in, out}, bound));
                m_params.push_back(uniform({out}, bias_bound));
            }
            in = out;
        }
    }
}

std::int64_t ImplicitVolume::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : m_params)
        n += p.numel();
    return n;
}

Tensor ImplicitVolume::mlp(std::size_t first, int hidden_layers, const Tensor& x, bool sine) const {
    Tensor h = x;
    for (int layer = 0; layer < hidden_layers + 2; ++layer) {
        const auto& w = m_params[first + 2 * static_cast<std::size_t>(layer)];
        const auto& b = m_params[first + 2 * static_cast<std::size_t>(layer) + 1];
        h = diff::linear(h, w, b);
        if (layer == hidden_layers + 1)
            break;
        h = sine ? diff::sine(h, static_cast<Real>(m_config.omega0)) : diff::relu(h);
    }
    return h;
}

Tensor ImplicitVolume::positional_encoding(const Tensor& x) const {
    std::vector<Tensor> parts{x};
    for (int l = 0; l < m_config.pe_frequencies; ++l) {
        const Tensor scaled = diff::mul_scalar(x, static_cast<Real>(std::ldexp(std::numbers::pi, l)));
        parts.push_back(diff::sin(scaled));
        parts.push_back(diff::cos(scaled));
    }
    return diff::concat(parts, 1);
}

Tensor ImplicitVolume::raw(const Tensor& x) const {
    check<ShapeError>(x.dim() == 2 && x.size(1) == m_config.input_dim, "implicit volume: points {} must be [N, {}]",
                      diff::to_string(x.shape()), m_config.input_dim);
    switch (m_config.kind) {
    case Kind::FourierNet: {
        const auto hidden_a = m_config.layer_counts[0];
        const auto a = mlp(0, hidden_a, x, true);
        const auto b = mlp(2 * static_cast<std::size_t>(hidden_a + 2), m_config.layer_counts[1], x, true);
        return diff::mul(diff::exp(diff::clamp_max(a, static_cast<Real>(m_config.exp_clamp))), b);
    }
    case Kind::Siren: return mlp(0, m_config.layer_counts[0], x, true);
    case Kind::PeMlp: return mlp(0, m_config.layer_counts[0], positional_encoding(x), false);
    case Kind::Voxel: return trilinear_field(m_params[0], x, m_config.voxel_side);
    }
    throw DomainError("implicit volume: unknown kind");
}

diff::ComplexPair ImplicitVolume::evaluate(const Tensor& points) const {
    const int dim = m_config.input_dim;
    check<ShapeError>(points.dim() == 2 && points.size(1) == dim, "implicit volume: points {} must be [N, {}]",
                      diff::to_string(points.shape()), dim);
    const auto n = points.size(0);
    std::vector<Real> sign(static_cast<std::size_t>(n)), imag_factor(static_cast<std::size_t>(n));
    const auto pv = points.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const int s = canonical_sign(pv.data() + i * dim, dim);
        sign[static_cast<std::size_t>(i)] = s == 0 ? Real{1} : static_cast<Real>(s);
        imag_factor[static_cast<std::size_t>(i)] = static_cast<Real>(s);
    }
    const Tensor sign_t(Shape{n, 1}, std::move(sign));
    const Tensor canonical = diff::mul_scalar(diff::mul(points, sign_t), static_cast<Real>(m_config.coord_scale));
    const Tensor out = raw(canonical);
    const Tensor re = diff::reshape(diff::narrow(out, 1, 0, 1), {n});
    const Tensor im = diff::mul(diff::reshape(diff::narrow(out, 1, 1, 1), {n}), Tensor(Shape{n}, std::move(imag_factor)));
    return {re, im};
}

void ImplicitVolume::set_exp_bias(double value) {
    check(m_config.kind == Kind::FourierNet, "set_exp_bias: only FourierNet has an exponentiated branch");
    const auto last_bias = 2 * static_cast<std::size_t>(m_config.layer_counts[0] + 2) - 1;
    for (auto& v : m_params[last_bias].mutable_data())
        v = static_cast<Real>(value);
}

std::vector<double> ImplicitVolume::flat_parameters() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(parameter_count()));
    for (const auto& p : m_params)
        out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
}

void ImplicitVolume::set_flat_parameters(const std::vector<double>& values) {
    check<ShapeError>(static_cast<std::int64_t>(values.size()) == parameter_count(),
                      "implicit volume: {} values for {} parameters", values.size(), parameter_count());
    std::size_t offset = 0;
    for (auto& p : m_params)
        for (auto& v : p.mutable_data())
            v = static_cast<Real>(values[offset++]);
}

void ImplicitVolume::save(std::ostream& out) const {
    out.write(kMagic, sizeof kMagic);
    binary::write<std::uint32_t>(out, kFormatVersion);
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.kind));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.input_dim));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.hidden_width));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.layer_counts.size()));
    for (int h : m_config.layer_counts)
        binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(h));
    binary::write<double>(out, m_config.coord_scale);
    binary::write<double>(out, m_config.omega0);
    binary::write<double>(out, m_config.exp_clamp);
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.pe_frequencies));
    binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(m_config.voxel_side));
    binary::write<std::uint8_t>(out, m_config.zero_output_init ? 1 : 0);
    binary::write_doubles(out, flat_parameters());
}

ImplicitVolume ImplicitVolume::load(std::istream& in) {
    char magic[sizeof kMagic];
    in.read(magic, sizeof magic);
    check<IoError>(in.gcount() == sizeof magic && std::equal(magic, magic + sizeof magic, kMagic),
                   "volume checkpoint: bad magic");
    const auto version = binary::read<std::uint32_t>(in, "volume version");
    check<IoError>(version == kFormatVersion, "volume checkpoint: version {} is not supported (expected {})", version,
                   kFormatVersion);
    VolumeConfig c;
    const auto kind = binary::read<std::uint32_t>(in, "volume kind");
    check<IoError>(kind <= 3, "volume checkpoint: unknown kind {}", kind);
    c.kind = static_cast<Kind>(kind);
    c.input_dim = static_cast<int>(binary::read<std::uint32_t>(in, "input_dim"));
    c.hidden_width = static_cast<int>(binary::read<std::uint32_t>(in, "hidden_width"));
    const auto nb = binary::read<std::uint32_t>(in, "layer count length");
    check<IoError>(nb <= 2, "volume checkpoint: {} branches", nb);
    c.layer_counts.clear();
    for (std::uint32_t i = 0; i < nb; ++i)
        c.layer_counts.push_back(static_cast<int>(binary::read<std::uint32_t>(in, "layer count")));
    c.coord_scale = binary::read<double>(in, "coord_scale");
    c.omega0 = binary::read<double>(in, "omega0");
    c.exp_clamp = binary::read<double>(in, "exp_clamp");
    c.pe_frequencies = static_cast<int>(binary::read<std::uint32_t>(in, "pe_frequencies"));
    c.voxel_side = static_cast<int>(binary::read<std::uint32_t>(in, "voxel_side"));
    c.zero_output_init = binary::read<std::uint8_t>(in, "zero_output_init") != 0;
    ImplicitVolume vol(c, 0);
    const auto values = binary::read_doubles(in, "volume parameters");
    check<IoError>(static_cast<std::int64_t>(values.size()) == vol.parameter_count(),
                   "volume checkpoint: {} parameters stored, layer map needs {}", values.size(), vol.parameter_count());
    vol.set_flat_parameters(values);
    return vol;
}

diff::ComplexPair fouriernet_eval(const ImplicitVolume& vol, const Tensor& points) {
    check(vol.kind() == Kind::FourierNet, "fouriernet_eval called on a {} volume", to_string(vol.kind()));
    return vol.evaluate(points);
}

diff::ComplexPair siren_eval(const ImplicitVolume& vol, const Tensor& points) {
    check(vol.kind() == Kind::Siren, "siren_eval called on a {} volume", to_string(vol.kind()));
    return vol.evaluate(points);
}

diff::ComplexPair pemlp_eval(const ImplicitVolume& vol, const Tensor& points) {
    check(vol.kind() == Kind::PeMlp, "pemlp_eval called on a {} volume", to_string(vol.kind()));
    return vol.evaluate(points);
}

} // namespace cryoforge::implicit
