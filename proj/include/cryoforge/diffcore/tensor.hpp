#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cryoforge/common.hpp"

namespace cryoforge::diff {

using Shape = std::vector<std::int64_t>;

[[nodiscard]] std::int64_t shape_numel(const Shape& shape);
[[nodiscard]] std::string to_string(const Shape& shape);

namespace detail {
    /// One vertex of the define-by-run tape. Op outputs keep their parents alive
    /// until the last Tensor referring to the output is dropped.
    struct Node {
        Shape shape;
        std::vector<Real> value;
        std::vector<Real> grad;  // empty until a backward pass touches it
        bool requires_grad{false};
        const char* op{"leaf"};
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        std::vector<Real>& ensure_grad() {
            if (grad.size() != value.size())
                grad.assign(value.size(), Real{0});
            return grad;
        }
    };
} // namespace detail

/// Dense row-major n-dimensional array of Real. A Tensor is a cheap handle:
/// copies share the same storage and tape node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<detail::Node> node) : m_node(std::move(node)) {}

    [[nodiscard]] static Tensor scalar(Real value, bool requires_grad = false);

    [[nodiscard]] bool defined() const noexcept { return static_cast<bool>(m_node); }
    [[nodiscard]] const Shape& shape() const;
    [[nodiscard]] std::int64_t dim() const { return static_cast<std::int64_t>(shape().size()); }
    [[nodiscard]] std::int64_t size(std::int64_t axis) const;
    [[nodiscard]] std::int64_t numel() const { return static_cast<std::int64_t>(node().value.size()); }

    [[nodiscard]] std::span<const Real> data() const { return node().value; }
    /// Direct write access, used by optimizers and initializers on leaves.
    [[nodiscard]] std::span<Real> mutable_data() { return node().value; }
    [[nodiscard]] Real item() const;
    [[nodiscard]] Real at(std::int64_t flat_index) const { return node().value.at(static_cast<std::size_t>(flat_index)); }

    [[nodiscard]] bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool flag);
    [[nodiscard]] bool has_grad() const { return !node().grad.empty(); }
    [[nodiscard]] std::span<const Real> grad() const { return node().grad; }
    [[nodiscard]] std::span<Real> mutable_grad() { return node().ensure_grad(); }
    void zero_grad();

    /// Copy of the values with no tape history.
    [[nodiscard]] Tensor detach() const;
    [[nodiscard]] const char* op_name() const { return node().op; }
    [[nodiscard]] const std::shared_ptr<detail::Node>& node_ptr() const { return m_node; }

private:
    [[nodiscard]] detail::Node& node() const;

    std::shared_ptr<detail::Node> m_node;
};

/// Complex field stored as two real tensors of identical shape.
struct ComplexPair {
    Tensor re;
    Tensor im;

    ComplexPair() = default;
    ComplexPair(Tensor real, Tensor imag);

    [[nodiscard]] const Shape& shape() const { return re.shape(); }
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across calls;
/// intermediate gradients are reset at the start of every sweep.
void backward(const Tensor& root);

[[nodiscard]] bool grad_enabled() noexcept;

/// While alive, ops on this thread record nothing on the tape.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool m_previous;
};

namespace detail {
    /// Creates an op output. The backward closure is kept only when grad mode is on
    /// and at least one parent participates in the tape.
    Tensor make_result(const char* op, Shape shape, std::vector<Real> value,
                       std::vector<std::shared_ptr<Node>> parents,
                       std::function<void(Node&)> backward);
} // namespace detail

} // namespace cryoforge::diff
