#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "cryoforge/diffcore/tensor.hpp"
#include "cryoforge/forwardmodel/forward.hpp"
#include "cryoforge/spectral/grid.hpp"

namespace cryoforge::pose {

/// Encoder architecture. Channel 0 of the filter bank is always the identity copy;
/// filter_sigmas lists the Gaussian channels after it (pixels).
struct EncoderConfig {
    std::int64_t input_side{32};
    std::vector<double> filter_sigmas{1.0, 2.5, 5.0};
    std::vector<std::int64_t> conv_channels{32, 64, 128, 256};
    std::int64_t fc_width{256};
    /// Translation head output is tanh(.) * translation_range (Å).
    double translation_range{3.0};

    [[nodiscard]] std::int64_t filter_channels() const {
        return 1 + static_cast<std::int64_t>(filter_sigmas.size());
    }
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

/// Identity channel followed by one normalized Gaussian blur per sigma
/// (radius ceil(3 sigma), zero padding). Returns filter_channels images.
[[nodiscard]] std::vector<spectral::RealImage> gaussian_filter_bank(const spectral::RealImage& image,
                                                                    const std::vector<double>& sigmas);

/// Zero mean, unit variance copy. A constant image maps to zeros.
[[nodiscard]] spectral::RealImage standardize(const spectral::RealImage& image);

/// Gram-Schmidt on the two 3-vectors of v; columns (c1, c2, c1 x c2).
/// Throws DomainError for a zero or parallel pair.
[[nodiscard]] Mat3 s2s2_to_rotation(const std::array<double, 6>& v);
/// Batched and differentiable: [B, 6] -> [B, 3, 3].
[[nodiscard]] diff::Tensor s2s2_to_rotation(const diff::Tensor& v);

struct EncoderOutput {
    diff::Tensor rotations;     // [B, 3, 3]
    diff::Tensor translations;  // [B, 2], Å
};

class PoseEncoder {
public:
    PoseEncoder() = default;
    PoseEncoder(const EncoderConfig& config, std::uint64_t seed);

    [[nodiscard]] const EncoderConfig& config() const { return m_config; }
    [[nodiscard]] std::vector<diff::Tensor>& parameters() { return m_params; }
    [[nodiscard]] const std::vector<diff::Tensor>& parameters() const { return m_params; }
    [[nodiscard]] std::int64_t parameter_count() const;

    /// Standardized filter-bank stack [B, K, L, L] for raw images [B, L, L]. Not taped.
    [[nodiscard]] diff::Tensor preprocess(const diff::Tensor& images) const;
    /// Network on a preprocessed stack.
    [[nodiscard]] EncoderOutput forward(const diff::Tensor& stack) const;
    /// preprocess followed by forward.
    [[nodiscard]] EncoderOutput encode(const diff::Tensor& images) const;
    /// Single image, no tape.
    [[nodiscard]] forward::Pose encode(const spectral::RealImage& image) const;

    [[nodiscard]] std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& values);

    void save(std::ostream& out) const;
    [[nodiscard]] static PoseEncoder load(std::istream& in);

private:
    EncoderConfig m_config;
    std::vector<diff::Tensor> m_params;
};

} // namespace cryoforge::pose
