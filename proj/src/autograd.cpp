#include "fewshot/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "fewshot/error.hpp"
#include "fewshot/kernels.hpp"

namespace fewshot::ag {

namespace {

thread_local bool grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

Var finish(Tensor value, std::vector<Var> inputs, BackwardFn fn)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled)
        for (const Var& v : inputs)
            needs = needs || v.requires_grad();
    if (needs) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const Var& v : inputs)
            node->parents.push_back(v.node());
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

// Gradient sink of parent `i`, or null when that parent is not differentiated.
Tensor* sink(Node& self, std::size_t i)
{
    Node* p = self.parents[i].get();
    if (!p || !p->requires_grad)
        return nullptr;
    return &p->grad_buffer();
}

void expect_same(const Var& a, const Var& b, const char* op)
{
    require(a.value().same_shape(b.value()), ErrorKind::ShapeMismatch,
            std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

void expect_rank(const Var& a, int rank, const char* op)
{
    require(a.value().rank() == rank, ErrorKind::ShapeMismatch,
            std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(a.shape()));
}

}  // namespace

Tensor& Node::grad_buffer()
{
    if (grad.size() != value.size() || grad.shape() != value.shape())
        grad = Tensor(value.shape());
    return grad;
}

bool GradMode::enabled() noexcept
{
    return grad_enabled;
}

void GradMode::set(bool on) noexcept
{
    grad_enabled = on;
}

Var constant(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var variable(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = grad_enabled;
    return Var(std::move(node));
}

Var bind(const Parameter& p)
{
    auto node = std::make_shared<Node>();
    node->value = p.value;
    node->source = &p;
    node->requires_grad = grad_enabled && p.trainable;
    return Var(std::move(node));
}

void backward(const Var& root, GradientMap* grads)
{
    require(root.value().size() == 1, ErrorKind::ShapeMismatch,
            "backward without seed needs a scalar root, got " + shape_string(root.shape()));
    backward(root, Tensor(root.shape(), 1.0), grads);
}

void backward(const Var& root, const Tensor& seed, GradientMap* grads)
{
    require(seed.same_shape(root.value()), ErrorKind::ShapeMismatch, "backward seed shape");
    if (!root.requires_grad())
        return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent && parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer() += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->grad.size() == node->value.size())
            node->backward(*node);
    }

    if (grads) {
        for (Node* node : order) {
            if (!node->source || node->grad.empty())
                continue;
            auto [slot, inserted] = grads->try_emplace(node->source, node->grad);
            if (!inserted)
                slot->second += node->grad;
        }
    }
}

Var add(const Var& a, const Var& b)
{
    expect_same(a, b, "add");
    Tensor out = a.value();
    out += b.value();
    return finish(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t i = 0; i < 2; ++i)
            if (Tensor* g = sink(self, i))
                *g += self.grad;
    });
}

Var sub(const Var& a, const Var& b)
{
    expect_same(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] -= b.value()[i];
    return finish(std::move(out), {a, b}, [](Node& self) {
        if (Tensor* g = sink(self, 0))
            *g += self.grad;
        if (Tensor* g = sink(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] -= self.grad[i];
    });
}

Var mul(const Var& a, const Var& b)
{
    expect_same(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] *= b.value()[i];
    return finish(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[i] * bv[i];
        if (Tensor* g = sink(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[i] * av[i];
    });
}

Var scale(const Var& a, double factor)
{
    Tensor out = a.value();
    out *= factor;
    return finish(std::move(out), {a}, [factor](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += factor * self.grad[i];
    });
}

Var relu(const Var& a)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v = v > 0.0 ? v : 0.0;
    return finish(std::move(out), {a}, [](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                if (self.value[i] > 0.0)
                    (*g)[i] += self.grad[i];
    });
}

Var sigmoid(const Var& a)
{
    Tensor out = a.value();
    for (double& v : out.values())
        v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    return finish(std::move(out), {a}, [](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) {
                const double s = self.value[i];
                (*g)[i] += self.grad[i] * s * (1.0 - s);
            }
    });
}

Var matmul(const Var& a, const Var& b)
{
    expect_rank(a, 2, "matmul");
    expect_rank(b, 2, "matmul");
    const int m = a.dim(0);
    const int k = a.dim(1);
    const int n = b.dim(1);
    require(b.dim(0) == k, ErrorKind::ShapeMismatch,
            "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    Tensor out(Shape{m, n});
    kernels::gemm(false, false, m, n, k, a.value().data(), b.value().data(), out.data());
    return finish(std::move(out), {a, b}, [m, n, k](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        if (Tensor* g = sink(self, 0))  // dA = dC · Bᵀ
            kernels::gemm(false, true, m, k, n, self.grad.data(), bv.data(), g->data(), true);
        if (Tensor* g = sink(self, 1))  // dB = Aᵀ · dC
            kernels::gemm(true, false, k, n, m, av.data(), self.grad.data(), g->data(), true);
    });
}

Var transpose(const Var& a)
{
    expect_rank(a, 2, "transpose");
    const int r = a.dim(0);
    const int c = a.dim(1);
    Tensor out(Shape{c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.at(j, i) = a.value().at(i, j);
    return finish(std::move(out), {a}, [r, c](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    g->at(i, j) += self.grad.at(j, i);
    });
}

Var softmax_columns(const Var& a)
{
    expect_rank(a, 2, "softmax_columns");
    const int rows = a.dim(0);
    const int cols = a.dim(1);
    Tensor out(a.shape());
    kernels::softmax_columns(rows, cols, a.value().data(), out.data());
    return finish(std::move(out), {a}, [rows, cols](Node& self) {
        if (Tensor* g = sink(self, 0))
            kernels::softmax_columns_backward(rows, cols, self.value.data(), self.grad.data(), g->data());
    });
}

Var reshape(const Var& a, Shape shape)
{
    Tensor out = a.value().reshaped(std::move(shape));
    return finish(std::move(out), {a}, [](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[i];
    });
}

Var concat(std::initializer_list<Var> parts)
{
    return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat(std::span<const Var> parts)
{
    require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of nothing");
    Shape trailing(parts[0].shape().begin() + 1, parts[0].shape().end());
    int leading = 0;
    for (const Var& p : parts) {
        require(p.value().rank() >= 1 && Shape(p.shape().begin() + 1, p.shape().end()) == trailing,
                ErrorKind::ShapeMismatch,
                "concat " + shape_string(parts[0].shape()) + " with " + shape_string(p.shape()));
        leading += p.dim(0);
    }
    Shape shape{leading};
    shape.insert(shape.end(), trailing.begin(), trailing.end());
    Tensor out(shape);
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const Var& p : parts) {
        offsets.push_back(offset);
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
        offset += p.value().size();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return finish(std::move(out), std::move(inputs), [offsets](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (Tensor* g = sink(self, i))
                for (std::size_t j = 0; j < g->size(); ++j)
                    (*g)[j] += self.grad[offsets[i] + j];
    });
}

Var mean(std::span<const Var> parts)
{
    require(!parts.empty(), ErrorKind::ShapeMismatch, "mean of nothing");
    Tensor out = parts[0].value();
    for (std::size_t i = 1; i < parts.size(); ++i) {
        expect_same(parts[0], parts[i], "mean");
        out += parts[i].value();
    }
    const double inv = 1.0 / static_cast<double>(parts.size());
    out *= inv;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return finish(std::move(out), std::move(inputs), [inv](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (Tensor* g = sink(self, i))
                for (std::size_t j = 0; j < g->size(); ++j)
                    (*g)[j] += inv * self.grad[j];
    });
}

Var tile_spatial(const Var& v, int height, int width)
{
    const int d = v.dim(0);
    require(v.value().size() == static_cast<std::size_t>(d), ErrorKind::ShapeMismatch,
            "tile_spatial expects a vector, got " + shape_string(v.shape()));
    require(height >= 1 && width >= 1, ErrorKind::ShapeMismatch, "tile_spatial: empty grid");
    const int hw = height * width;
    Tensor out(Shape{d, height, width});
    for (int c = 0; c < d; ++c)
        std::fill(out.data() + static_cast<std::size_t>(c) * hw, out.data() + static_cast<std::size_t>(c + 1) * hw,
                  v.value()[static_cast<std::size_t>(c)]);
    return finish(std::move(out), {v}, [d, hw](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (int c = 0; c < d; ++c) {
                double acc = 0.0;
                for (int s = 0; s < hw; ++s)
                    acc += self.grad[static_cast<std::size_t>(c) * hw + s];
                (*g)[static_cast<std::size_t>(c)] += acc;
            }
    });
}

Var global_avg_pool(const Var& x)
{
    expect_rank(x, 3, "global_avg_pool");
    const int c = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    Tensor out(Shape{c});
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int s = 0; s < hw; ++s)
            acc += x.value()[static_cast<std::size_t>(ch) * hw + s];
        out[static_cast<std::size_t>(ch)] = acc / hw;
    }
    return finish(std::move(out), {x}, [c, hw](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (int ch = 0; ch < c; ++ch)
                for (int s = 0; s < hw; ++s)
                    (*g)[static_cast<std::size_t>(ch) * hw + s] += self.grad[static_cast<std::size_t>(ch)] / hw;
    });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, ConvSpec spec)
{
    expect_rank(x, 3, "conv2d input");
    expect_rank(w, 4, "conv2d weight");
    require(w.dim(2) == w.dim(3), ErrorKind::ShapeMismatch, "conv2d: square kernels only");
    require(w.dim(1) == x.dim(0), ErrorKind::ShapeMismatch,
            "conv2d weight " + shape_string(w.shape()) + " vs input " + shape_string(x.shape()));
    kernels::ConvGeometry g;
    g.in_channels = x.dim(0);
    g.in_height = x.dim(1);
    g.in_width = x.dim(2);
    g.out_channels = w.dim(0);
    g.kernel = w.dim(2);
    g.stride = spec.stride;
    g.padding = spec.padding;
    g.dilation = spec.dilation;
    require(g.out_height() >= 1 && g.out_width() >= 1, ErrorKind::ShapeMismatch,
            "conv2d produces an empty output for " + shape_string(x.shape()));
    const bool has_bias = bias.defined();
    if (has_bias)
        require(bias.value().size() == static_cast<std::size_t>(g.out_channels), ErrorKind::ShapeMismatch,
                "conv2d bias size");
    Tensor out(Shape{g.out_channels, g.out_height(), g.out_width()});
    kernels::conv2d_forward(g, x.value().data(), w.value().data(), has_bias ? bias.value().data() : nullptr,
                            out.data());
    std::vector<Var> inputs{x, w};
    if (has_bias)
        inputs.push_back(bias);
    return finish(std::move(out), std::move(inputs), [g, has_bias](Node& self) {
        Tensor* dx = sink(self, 0);
        Tensor* dw = sink(self, 1);
        Tensor* db = has_bias ? sink(self, 2) : nullptr;
        kernels::conv2d_backward(g, self.parents[0]->value.data(), self.parents[1]->value.data(),
                                 self.grad.data(), dx ? dx->data() : nullptr, dw ? dw->data() : nullptr,
                                 db ? db->data() : nullptr);
    });
}

Var conv1x1(const Var& x, const Var& w, const Var& bias)
{
    expect_rank(w, 2, "conv1x1 weight");
    return conv2d(x, reshape(w, Shape{w.dim(0), w.dim(1), 1, 1}), bias);
}

Var linear(const Var& w, const Var& v, const Var& bias)
{
    expect_rank(w, 2, "linear weight");
    require(v.value().size() == static_cast<std::size_t>(w.dim(1)), ErrorKind::DimensionMismatch,
            "linear: weight " + shape_string(w.shape()) + " applied to vector of size " +
                std::to_string(v.value().size()));
    Var out = reshape(matmul(w, reshape(v, Shape{w.dim(1), 1})), Shape{w.dim(0)});
    if (!bias.defined())
        return out;
    require(bias.value().size() == static_cast<std::size_t>(w.dim(0)), ErrorKind::DimensionMismatch,
            "linear: bias size");
    return add(out, reshape(bias, Shape{w.dim(0)}));
}

Var resize_bilinear(const Var& x, int height, int width)
{
    expect_rank(x, 3, "resize_bilinear");
    const int c = x.dim(0);
    const int ih = x.dim(1);
    const int iw = x.dim(2);
    Tensor out(Shape{c, height, width});
    kernels::resize_bilinear_forward(c, ih, iw, height, width, x.value().data(), out.data());
    return finish(std::move(out), {x}, [c, ih, iw, height, width](Node& self) {
        if (Tensor* g = sink(self, 0))
            kernels::resize_bilinear_backward(c, ih, iw, height, width, self.grad.data(), g->data());
    });
}

Var softmax_channels(const Var& x)
{
    expect_rank(x, 3, "softmax_channels");
    const Shape shape = x.shape();
    return reshape(softmax_columns(reshape(x, Shape{shape[0], shape[1] * shape[2]})), shape);
}

Var sum(const Var& a)
{
    double acc = 0.0;
    for (double v : a.value().values())
        acc += v;
    return finish(Tensor::scalar(acc), {a}, [](Node& self) {
        if (Tensor* g = sink(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i)
                (*g)[i] += self.grad[0];
    });
}

Var cross_entropy(const Var& logits, std::span<const std::uint8_t> labels, std::uint8_t ignore_label)
{
    expect_rank(logits, 3, "cross_entropy");
    const int k = logits.dim(0);
    const int hw = logits.dim(1) * logits.dim(2);
    require(labels.size() == static_cast<std::size_t>(hw), ErrorKind::ShapeMismatch,
            "cross_entropy: " + std::to_string(labels.size()) + " labels for " + shape_string(logits.shape()));
    const Tensor& z = logits.value();
    // Per-pixel softmax probabilities, kept for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(k) * hw);
    std::vector<std::uint8_t> targets(labels.begin(), labels.end());
    double total = 0.0;
    int valid = 0;
    for (int s = 0; s < hw; ++s) {
        double mx = z[static_cast<std::size_t>(s)];
        for (int c = 1; c < k; ++c)
            mx = std::max(mx, z[static_cast<std::size_t>(c) * hw + s]);
        double denom = 0.0;
        for (int c = 0; c < k; ++c)
            denom += std::exp(z[static_cast<std::size_t>(c) * hw + s] - mx);
        for (int c = 0; c < k; ++c)
            (*probs)[static_cast<std::size_t>(c) * hw + s] = std::exp(z[static_cast<std::size_t>(c) * hw + s] - mx) / denom;
        const std::uint8_t t = targets[static_cast<std::size_t>(s)];
        if (t == ignore_label)
            continue;
        require(t < k, ErrorKind::ShapeMismatch, "cross_entropy: label " + std::to_string(t) + " out of range");
        total += -(z[static_cast<std::size_t>(t) * hw + s] - mx - std::log(denom));
        ++valid;
    }
    const double loss = valid ? total / valid : 0.0;
    return finish(Tensor::scalar(loss), {logits},
                  [probs, targets = std::move(targets), k, hw, valid, ignore_label](Node& self) {
                      Tensor* g = sink(self, 0);
                      if (!g || valid == 0)
                          return;
                      const double scale = self.grad[0] / valid;
                      for (int s = 0; s < hw; ++s) {
                          const std::uint8_t t = targets[static_cast<std::size_t>(s)];
                          if (t == ignore_label)
                              continue;
                          for (int c = 0; c < k; ++c) {
                              const std::size_t idx = static_cast<std::size_t>(c) * hw + s;
                              (*g)[idx] += scale * ((*probs)[idx] - (c == t ? 1.0 : 0.0));
                          }
                      }
                  });
}

}  // namespace fewshot::ag
