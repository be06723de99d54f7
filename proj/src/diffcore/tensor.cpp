#include "cryoforge/diffcore/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace cryoforge::diff {

namespace {
    thread_local bool g_grad_enabled = true;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto extent : shape) {
        check<ShapeError>(extent >= 0, "negative extent in shape {}", to_string(shape));
        n *= extent;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

Tensor::Tensor(Shape shape, Real fill, bool requires_grad) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    m_node = std::make_shared<detail::Node>();
    m_node->shape = std::move(shape);
    m_node->value.assign(n, fill);
    m_node->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
    auto n = shape_numel(shape);
    check<ShapeError>(static_cast<std::int64_t>(values.size()) == n,
                      "tensor: {} values do not fill shape {}", values.size(), to_string(shape));
    m_node = std::make_shared<detail::Node>();
    m_node->shape = std::move(shape);
    m_node->value = std::move(values);
    m_node->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<Real>{value}, requires_grad);
}

detail::Node& Tensor::node() const {
    check(m_node != nullptr, "use of an undefined tensor");
    return *m_node;
}

const Shape& Tensor::shape() const { return node().shape; }

std::int64_t Tensor::size(std::int64_t axis) const {
    const auto d = dim();
    if (axis < 0)
        axis += d;
    check<ShapeError>(axis >= 0 && axis < d, "axis {} out of range for shape {}", axis, to_string(shape()));
    return shape()[static_cast<std::size_t>(axis)];
}

Real Tensor::item() const {
    check<ShapeError>(numel() == 1, "item() needs a single-element tensor, got shape {}", to_string(shape()));
    return node().value[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
    node().requires_grad = flag;
    return *this;
}

void Tensor::zero_grad() {
    auto& n = node();
    std::fill(n.grad.begin(), n.grad.end(), Real{0});
}

Tensor Tensor::detach() const {
    return Tensor(node().shape, node().value, false);
}

ComplexPair::ComplexPair(Tensor real, Tensor imag) : re(std::move(real)), im(std::move(imag)) {
    check<ShapeError>(re.shape() == im.shape(), "complex pair: real shape {} != imaginary shape {}",
                      to_string(re.shape()), to_string(im.shape()));
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : m_previous(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = m_previous; }

namespace detail {
    Tensor make_result(const char* op, Shape shape, std::vector<Real> value,
                       std::vector<std::shared_ptr<Node>> parents,
                       std::function<void(Node&)> backward_fn) {
        auto node = std::make_shared<Node>();
        node->shape = std::move(shape);
        node->value = std::move(value);
        node->op = op;
        if (g_grad_enabled) {
            const bool any = std::any_of(parents.begin(), parents.end(),
                                         [](const auto& p) { return p && p->requires_grad; });
            if (any) {
                node->requires_grad = true;
                node->parents = std::move(parents);
                node->backward = std::move(backward_fn);
            }
        }
        return Tensor(std::move(node));
    }
} // namespace detail

void backward(const Tensor& root) {
    check<ShapeError>(root.defined() && root.numel() == 1,
                      "backward: root must be a scalar, got shape {}",
                      root.defined() ? to_string(root.shape()) : std::string("<undefined>"));
    check(root.requires_grad(), "backward: root does not depend on any tensor requiring grad");

    // Iterative post-order DFS gives a topological order.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node_ptr().get(), 0);
    visited.insert(root.node_ptr().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order)
        if (node->backward)
            node->grad.assign(node->value.size(), Real{0});

    auto* top = root.node_ptr().get();
    top->ensure_grad()[0] += Real{1};

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward)
            continue;
        node->backward(*node);
        std::vector<Real>().swap(node->grad);
    }
}

} // namespace cryoforge::diff
