#include "folio/autodiff.hpp"

#include "folio/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace folio::ad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

double sign_of(double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

[[noreturn]] void shape_error(Op op, std::initializer_list<const Tensor*> inputs,
                              const std::string& detail = {}) {
    std::ostringstream msg;
    msg << op_name(op) << ": incompatible shapes";
    for (const Tensor* t : inputs) {
        msg << ' ' << t->shape_string();
    }
    if (!detail.empty()) {
        msg << " (" << detail << ')';
    }
    throw ShapeError(msg.str());
}

// Elementwise binary op with single-element broadcasting.
template <typename F>
Tensor broadcast_binary(Op op, const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = f(a[i], b[i]);
        }
        return Tensor(a.shape(), std::move(out));
    }
    if (b.size() == 1) {
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = f(a[i], b[0]);
        }
        return Tensor(a.shape(), std::move(out));
    }
    if (a.size() == 1) {
        std::vector<double> out(b.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = f(a[0], b[i]);
        }
        return Tensor(b.shape(), std::move(out));
    }
    shape_error(op, {&a, &b});
}

template <typename F>
Tensor unary(const Tensor& x, F f) {
    std::vector<double> out(x.size());
    std::transform(x.data().begin(), x.data().end(), out.begin(), f);
    return Tensor(x.shape(), std::move(out));
}

// Adds g into the adjoint of an operand that may have been broadcast.
void add_reduced(std::vector<double>& target, const std::vector<double>& g) {
    if (target.size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            target[i] += g[i];
        }
    } else {
        target[0] += std::accumulate(g.begin(), g.end(), 0.0);
    }
}

double broadcast_at(const Tensor& t, std::size_t i) {
    return t.size() == 1 ? t[0] : t[i];
}

}  // namespace

const char* op_name(Op op) noexcept {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::constant: return "constant";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "mul";
        case Op::div: return "div";
        case Op::matvec: return "matvec";
        case Op::exp: return "exp";
        case Op::abs: return "abs";
        case Op::sign: return "sign";
        case Op::sigmoid_shifted: return "sigmoid_shifted";
        case Op::tanh: return "tanh";
        case Op::softmax: return "softmax";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::variance: return "variance";
        case Op::sqrt: return "sqrt";
        case Op::maximum: return "maximum";
        case Op::indicator_greater: return "indicator_greater";
        case Op::indicator_less: return "indicator_less";
        case Op::scale: return "scale";
        case Op::add_scalar: return "add_scalar";
        case Op::dot: return "dot";
        case Op::index: return "index";
        case Op::slice: return "slice";
        case Op::stack: return "stack";
        case Op::reshape: return "reshape";
        case Op::outer: return "outer";
        case Op::outer_sub: return "outer_sub";
        case Op::row_sum: return "row_sum";
        case Op::broadcast_rows: return "broadcast_rows";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_.size() > 2) {
        throw ShapeError("tensor: rank " + std::to_string(shape_.size()) + " not supported");
    }
    if (product(shape_) != data_.size()) {
        throw ShapeError("tensor: shape " + shape_string() + " does not hold " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    const std::size_t n = product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw ShapeError("rows: expected matrix, got " + shape_string());
    }
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw ShapeError("cols: expected matrix, got " + shape_string());
    }
    return shape_[1];
}

double Tensor::at(std::size_t row, std::size_t col) const { return data_[row * cols() + col]; }

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item: expected a single element, got " + shape_string());
    }
    return data_[0];
}

std::string Tensor::shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i > 0) {
            s += 'x';
        }
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Var / Gradients

Tape& Var::tape() const {
    if (tape_ == nullptr) {
        throw ContractError("var: not attached to a tape");
    }
    return *tape_;
}

const Tensor& Var::value() const { return tape().node(id_).value; }

Tensor Gradients::operator[](const Var& x) const {
    const Tensor& v = tape_->node(x.id()).value;
    const auto& adj = adjoints_.at(x.id());
    if (adj.empty()) {
        return Tensor::zeros(v.shape());
    }
    return Tensor(v.shape(), adj);
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::leaf;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::set_value(const Var& input, Tensor value) {
    Node& n = nodes_.at(input.id());
    if (n.op != Op::leaf && n.op != Op::constant) {
        throw ContractError("set_value: node is not an input");
    }
    if (n.value.shape() != value.shape()) {
        throw ShapeError("set_value: shape " + value.shape_string() + " does not match " +
                         n.value.shape_string());
    }
    n.value = std::move(value);
}

Var Tape::record(Op op, std::vector<std::size_t> parents, double param, std::size_t offset,
                 std::vector<std::size_t> shape) {
    for (std::size_t p : parents) {
        if (p >= nodes_.size()) {
            throw ContractError(std::string(op_name(op)) + ": parent not on this tape");
        }
    }
    Node n;
    n.op = op;
    n.parents = std::move(parents);
    n.param = param;
    n.offset = offset;
    n.shape = std::move(shape);
    std::vector<Tensor> dummy;
    n.value = evaluate(n, dummy);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

std::vector<Tensor> Tape::replay() const {
    std::vector<Tensor> values;
    values.reserve(nodes_.size());
    for (const Node& n : nodes_) {
        if (n.op == Op::leaf || n.op == Op::constant) {
            values.push_back(n.value);
        } else {
            values.push_back(evaluate(n, values));
        }
    }
    return values;
}

void Tape::refresh() {
    std::vector<Tensor> values = replay();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        nodes_[i].value = std::move(values[i]);
    }
}

// `values`, when non-empty, overrides stored parent values (replay path).
Tensor Tape::evaluate(const Node& node, const std::vector<Tensor>& values) const {
    auto in = [&](std::size_t k) -> const Tensor& {
        const std::size_t p = node.parents.at(k);
        return values.empty() ? nodes_[p].value : values[p];
    };
    const Op op = node.op;

    switch (op) {
        case Op::leaf:
        case Op::constant:
            return node.value;
        case Op::add:
            return broadcast_binary(op, in(0), in(1), [](double a, double b) { return a + b; });
        case Op::sub:
            return broadcast_binary(op, in(0), in(1), [](double a, double b) { return a - b; });
        case Op::mul:
            return broadcast_binary(op, in(0), in(1), [](double a, double b) { return a * b; });
        case Op::div: {
            const Tensor& b = in(1);
            for (double v : b.data()) {
                if (v == 0.0) {
                    throw DomainError("div: division by zero (divisor shape " + b.shape_string() +
                                      ")");
                }
            }
            return broadcast_binary(op, in(0), b, [](double x, double y) { return x / y; });
        }
        case Op::matvec: {
            const Tensor& m = in(0);
            const Tensor& v = in(1);
            if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.size()) {
                shape_error(op, {&m, &v});
            }
            const std::size_t r = m.rows();
            const std::size_t c = m.cols();
            std::vector<double> out(r, 0.0);
            for (std::size_t i = 0; i < r; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    acc += m[i * c + j] * v[j];
                }
                out[i] = acc;
            }
            return Tensor::vector(std::move(out));
        }
        case Op::exp:
            return unary(in(0), [](double x) { return std::exp(x); });
        case Op::abs:
            return unary(in(0), [](double x) { return std::abs(x); });
        case Op::sign:
            return unary(in(0), sign_of);
        case Op::sigmoid_shifted: {
            const double a = node.param;
            return unary(in(0), [a](double x) { return a + sigmoid(x); });
        }
        case Op::tanh:
            return unary(in(0), [](double x) { return std::tanh(x); });
        case Op::softmax: {
            const Tensor& x = in(0);
            if (x.size() == 0) {
                shape_error(op, {&x}, "empty input");
            }
            const std::size_t width = x.rank() == 0 ? 1 : x.shape().back();
            const std::size_t rows = x.size() / width;
            std::vector<double> out(x.size());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* row = x.data().data() + r * width;
                const double hi = *std::max_element(row, row + width);
                double z = 0.0;
                for (std::size_t j = 0; j < width; ++j) {
                    out[r * width + j] = std::exp(row[j] - hi);
                    z += out[r * width + j];
                }
                for (std::size_t j = 0; j < width; ++j) {
                    out[r * width + j] /= z;
                }
            }
            return Tensor(x.shape(), std::move(out));
        }
        case Op::sum: {
            const Tensor& x = in(0);
            return Tensor::scalar(std::accumulate(x.data().begin(), x.data().end(), 0.0));
        }
        case Op::mean: {
            const Tensor& x = in(0);
            if (x.size() == 0) {
                shape_error(op, {&x}, "empty input");
            }
            return Tensor::scalar(std::accumulate(x.data().begin(), x.data().end(), 0.0) /
                                  static_cast<double>(x.size()));
        }
        case Op::variance: {
            const Tensor& x = in(0);
            if (x.size() == 0) {
                shape_error(op, {&x}, "empty input");
            }
            const double n = static_cast<double>(x.size());
            const double m = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
            double ss = 0.0;
            for (double v : x.data()) {
                ss += (v - m) * (v - m);
            }
            return Tensor::scalar(ss / n);
        }
        case Op::sqrt: {
            const Tensor& x = in(0);
            for (double v : x.data()) {
                if (v < 0.0) {
                    throw DomainError("sqrt: negative argument " + std::to_string(v));
                }
            }
            return unary(x, [](double v) { return std::sqrt(v); });
        }
        case Op::maximum:
            return broadcast_binary(op, in(0), in(1),
                                    [](double a, double b) { return a >= b ? a : b; });
        case Op::indicator_greater:
            if (in(0).size() != in(1).size() && in(1).size() != 1) {
                shape_error(op, {&in(0), &in(1)});
            }
            return broadcast_binary(op, in(0), in(1),
                                    [](double x, double t) { return x > t ? 1.0 : 0.0; });
        case Op::indicator_less:
            if (in(0).size() != in(1).size() && in(1).size() != 1) {
                shape_error(op, {&in(0), &in(1)});
            }
            return broadcast_binary(op, in(0), in(1),
                                    [](double x, double t) { return x < t ? 1.0 : 0.0; });
        case Op::scale: {
            const double c = node.param;
            return unary(in(0), [c](double x) { return c * x; });
        }
        case Op::add_scalar: {
            const double c = node.param;
            return unary(in(0), [c](double x) { return x + c; });
        }
        case Op::dot: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (a.size() != b.size()) {
                shape_error(op, {&a, &b});
            }
            double acc = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                acc += a[i] * b[i];
            }
            return Tensor::scalar(acc);
        }
        case Op::index: {
            const Tensor& x = in(0);
            if (node.offset >= x.size()) {
                shape_error(op, {&x}, "index " + std::to_string(node.offset));
            }
            return Tensor::scalar(x[node.offset]);
        }
        case Op::slice: {
            const Tensor& x = in(0);
            const std::size_t len = node.shape.at(0);
            if (node.offset + len > x.size()) {
                shape_error(op, {&x}, "slice [" + std::to_string(node.offset) + ", " +
                                          std::to_string(node.offset + len) + ")");
            }
            auto first = x.data().begin() + static_cast<std::ptrdiff_t>(node.offset);
            return Tensor::vector(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(len)));
        }
        case Op::stack: {
            std::vector<double> out;
            for (std::size_t k = 0; k < node.parents.size(); ++k) {
                const Tensor& part = in(k);
                out.insert(out.end(), part.data().begin(), part.data().end());
            }
            return Tensor::vector(std::move(out));
        }
        case Op::reshape: {
            const Tensor& x = in(0);
            if (product(node.shape) != x.size()) {
                shape_error(op, {&x}, "target size " + std::to_string(product(node.shape)));
            }
            return Tensor(node.shape, x.values());
        }
        case Op::outer:
        case Op::outer_sub: {
            const Tensor& x = in(0);
            const Tensor& y = in(1);
            if (x.rank() != 1 || y.rank() != 1) {
                shape_error(op, {&x, &y});
            }
            std::vector<double> out(x.size() * y.size());
            for (std::size_t i = 0; i < x.size(); ++i) {
                for (std::size_t j = 0; j < y.size(); ++j) {
                    out[i * y.size() + j] = op == Op::outer ? x[i] * y[j] : x[i] - y[j];
                }
            }
            return Tensor::matrix(x.size(), y.size(), std::move(out));
        }
        case Op::row_sum: {
            const Tensor& m = in(0);
            if (m.rank() != 2) {
                shape_error(op, {&m});
            }
            std::vector<double> out(m.rows(), 0.0);
            for (std::size_t i = 0; i < m.rows(); ++i) {
                for (std::size_t j = 0; j < m.cols(); ++j) {
                    out[i] += m[i * m.cols() + j];
                }
            }
            return Tensor::vector(std::move(out));
        }
        case Op::broadcast_rows: {
            const Tensor& v = in(0);
            if (v.rank() != 1) {
                shape_error(op, {&v});
            }
            const std::size_t rows = node.shape.at(0);
            std::vector<double> out;
            out.reserve(rows * v.size());
            for (std::size_t i = 0; i < rows; ++i) {
                out.insert(out.end(), v.data().begin(), v.data().end());
            }
            return Tensor::matrix(rows, v.size(), std::move(out));
        }
    }
    throw ContractError("evaluate: unknown op");
}

void Tape::accumulate(std::size_t id, const std::vector<double>& g,
                      std::vector<std::vector<double>>& adjoints) const {
    const Node& node = nodes_[id];
    auto grad_of = [&](std::size_t k) -> std::vector<double>& {
        const std::size_t p = node.parents[k];
        auto& adj = adjoints[p];
        if (adj.empty()) {
            adj.assign(nodes_[p].value.size(), 0.0);
        }
        return adj;
    };
    auto val = [&](std::size_t k) -> const Tensor& { return nodes_[node.parents[k]].value; };
    const Tensor& y = node.value;

    switch (node.op) {
        case Op::leaf:
        case Op::constant:
        case Op::sign:
        case Op::indicator_greater:
        case Op::indicator_less:
            return;
        case Op::add:
            add_reduced(grad_of(0), g);
            add_reduced(grad_of(1), g);
            return;
        case Op::sub: {
            add_reduced(grad_of(0), g);
            std::vector<double> neg(g.size());
            std::transform(g.begin(), g.end(), neg.begin(), [](double v) { return -v; });
            add_reduced(grad_of(1), neg);
            return;
        }
        case Op::mul:
        case Op::div: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            std::vector<double> ga(g.size());
            std::vector<double> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double ai = broadcast_at(a, i);
                const double bi = broadcast_at(b, i);
                if (node.op == Op::mul) {
                    ga[i] = g[i] * bi;
                    gb[i] = g[i] * ai;
                } else {
                    ga[i] = g[i] / bi;
                    gb[i] = -g[i] * ai / (bi * bi);
                }
            }
            add_reduced(grad_of(0), ga);
            add_reduced(grad_of(1), gb);
            return;
        }
        case Op::matvec: {
            const Tensor& m = val(0);
            const Tensor& v = val(1);
            const std::size_t r = m.rows();
            const std::size_t c = m.cols();
            // Constant operands (model inputs) are common; skip their adjoints.
            if (nodes_[node.parents[0]].op != Op::constant) {
                auto& gm = grad_of(0);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        gm[i * c + j] += g[i] * v[j];
                    }
                }
            }
            if (nodes_[node.parents[1]].op != Op::constant) {
                auto& gv = grad_of(1);
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < c; ++j) {
                        gv[j] += g[i] * m[i * c + j];
                    }
                }
            }
            return;
        }
        case Op::exp: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * y[i];
            }
            return;
        }
        case Op::abs: {
            auto& gx = grad_of(0);
            const Tensor& x = val(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * sign_of(x[i]);
            }
            return;
        }
        case Op::sigmoid_shifted: {
            auto& gx = grad_of(0);
            const Tensor& x = val(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = sigmoid(x[i]);
                gx[i] += g[i] * s * (1.0 - s);
            }
            return;
        }
        case Op::tanh: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * (1.0 - y[i] * y[i]);
            }
            return;
        }
        case Op::softmax: {
            auto& gx = grad_of(0);
            const std::size_t width = y.rank() == 0 ? 1 : y.shape().back();
            const std::size_t rows = y.size() / width;
            for (std::size_t r = 0; r < rows; ++r) {
                double inner = 0.0;
                for (std::size_t j = 0; j < width; ++j) {
                    inner += g[r * width + j] * y[r * width + j];
                }
                for (std::size_t j = 0; j < width; ++j) {
                    gx[r * width + j] += y[r * width + j] * (g[r * width + j] - inner);
                }
            }
            return;
        }
        case Op::sum: {
            auto& gx = grad_of(0);
            for (double& v : gx) {
                v += g[0];
            }
            return;
        }
        case Op::mean: {
            auto& gx = grad_of(0);
            const double n = static_cast<double>(gx.size());
            for (double& v : gx) {
                v += g[0] / n;
            }
            return;
        }
        case Op::variance: {
            auto& gx = grad_of(0);
            const Tensor& x = val(0);
            const double n = static_cast<double>(x.size());
            const double m = std::accumulate(x.data().begin(), x.data().end(), 0.0) / n;
            for (std::size_t i = 0; i < x.size(); ++i) {
                gx[i] += g[0] * 2.0 * (x[i] - m) / n;
            }
            return;
        }
        case Op::sqrt: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (g[i] == 0.0) {
                    continue;
                }
                if (y[i] == 0.0) {
                    throw DomainError("sqrt: gradient undefined at 0");
                }
                gx[i] += g[i] / (2.0 * y[i]);
            }
            return;
        }
        case Op::maximum: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            std::vector<double> ga(g.size(), 0.0);
            std::vector<double> gb(g.size(), 0.0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (broadcast_at(a, i) >= broadcast_at(b, i)) {
                    ga[i] = g[i];
                } else {
                    gb[i] = g[i];
                }
            }
            add_reduced(grad_of(0), ga);
            add_reduced(grad_of(1), gb);
            return;
        }
        case Op::scale: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * node.param;
            }
            return;
        }
        case Op::add_scalar:
        case Op::reshape: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i];
            }
            return;
        }
        case Op::dot: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            if (nodes_[node.parents[0]].op != Op::constant) {
                auto& ga = grad_of(0);
                for (std::size_t i = 0; i < a.size(); ++i) {
                    ga[i] += g[0] * b[i];
                }
            }
            if (nodes_[node.parents[1]].op != Op::constant) {
                auto& gb = grad_of(1);
                for (std::size_t i = 0; i < b.size(); ++i) {
                    gb[i] += g[0] * a[i];
                }
            }
            return;
        }
        case Op::index:
            grad_of(0)[node.offset] += g[0];
            return;
        case Op::slice: {
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < g.size(); ++i) {
                gx[node.offset + i] += g[i];
            }
            return;
        }
        case Op::stack: {
            std::size_t pos = 0;
            for (std::size_t k = 0; k < node.parents.size(); ++k) {
                auto& gp = grad_of(k);
                for (double& v : gp) {
                    v += g[pos++];
                }
            }
            return;
        }
        case Op::outer:
        case Op::outer_sub: {
            const Tensor& x = val(0);
            const Tensor& z = val(1);
            const std::size_t n = x.size();
            const std::size_t m = z.size();
            auto& gx = grad_of(0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    gx[i] += g[i * m + j] * (node.op == Op::outer ? z[j] : 1.0);
                }
            }
            auto& gz = grad_of(1);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < m; ++j) {
                    gz[j] += g[i * m + j] * (node.op == Op::outer ? x[i] : -1.0);
                }
            }
            return;
        }
        case Op::row_sum: {
            auto& gx = grad_of(0);
            const std::size_t cols = val(0).cols();
            for (std::size_t i = 0; i < g.size(); ++i) {
                for (std::size_t j = 0; j < cols; ++j) {
                    gx[i * cols + j] += g[i];
                }
            }
            return;
        }
        case Op::broadcast_rows: {
            auto& gv = grad_of(0);
            const std::size_t width = gv.size();
            for (std::size_t i = 0; i < g.size(); ++i) {
                gv[i % width] += g[i];
            }
            return;
        }
    }
}

Gradients Tape::backward(const Var& output) const {
    if (&output.tape() != this) {
        throw ContractError("backward: output belongs to a different tape");
    }
    if (nodes_.at(output.id()).value.size() != 1) {
        throw ContractError("backward: output must be a scalar, got shape " +
                            nodes_[output.id()].value.shape_string());
    }
    std::vector<std::vector<double>> adjoints(nodes_.size());
    adjoints[output.id()] = {1.0};
    for (std::size_t id = output.id() + 1; id-- > 0;) {
        if (adjoints[id].empty()) {
            continue;
        }
        accumulate(id, adjoints[id], adjoints);
    }
    return Gradients(std::move(adjoints), this);
}

// ---------------------------------------------------------------------------
// Operator functions

namespace {

Tape& common_tape(const Var& a, const Var& b) {
    Tape& t = a.tape();
    if (&t != &b.tape()) {
        throw ContractError("operands recorded on different tapes");
    }
    return t;
}

Var binary(Op op, const Var& a, const Var& b) {
    return common_tape(a, b).record(op, {a.id(), b.id()});
}

Var unary_op(Op op, const Var& x, double param = 0.0) {
    return x.tape().record(op, {x.id()}, param);
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(Op::add, a, b); }
Var sub(const Var& a, const Var& b) { return binary(Op::sub, a, b); }
Var mul(const Var& a, const Var& b) { return binary(Op::mul, a, b); }
Var div(const Var& a, const Var& b) { return binary(Op::div, a, b); }
Var matvec(const Var& m, const Var& v) { return binary(Op::matvec, m, v); }
Var exp(const Var& x) { return unary_op(Op::exp, x); }
Var abs(const Var& x) { return unary_op(Op::abs, x); }
Var sign(const Var& x) { return unary_op(Op::sign, x); }
Var sigmoid_shifted(const Var& x, double a) { return unary_op(Op::sigmoid_shifted, x, a); }
Var tanh(const Var& x) { return unary_op(Op::tanh, x); }
Var softmax(const Var& x) { return unary_op(Op::softmax, x); }
Var sum(const Var& x) { return unary_op(Op::sum, x); }
Var mean(const Var& x) { return unary_op(Op::mean, x); }
Var variance(const Var& x) { return unary_op(Op::variance, x); }
Var sqrt(const Var& x) { return unary_op(Op::sqrt, x); }
Var maximum(const Var& a, const Var& b) { return binary(Op::maximum, a, b); }
Var indicator_greater(const Var& x, const Var& t) { return binary(Op::indicator_greater, x, t); }
Var indicator_less(const Var& x, const Var& t) { return binary(Op::indicator_less, x, t); }
Var scale(const Var& x, double c) { return unary_op(Op::scale, x, c); }
Var add_scalar(const Var& x, double c) { return unary_op(Op::add_scalar, x, c); }
Var dot(const Var& a, const Var& b) { return binary(Op::dot, a, b); }
Var outer(const Var& x, const Var& y) { return binary(Op::outer, x, y); }
Var outer_sub(const Var& x, const Var& y) { return binary(Op::outer_sub, x, y); }
Var row_sum(const Var& m) { return unary_op(Op::row_sum, m); }

Var index(const Var& x, std::size_t i) { return x.tape().record(Op::index, {x.id()}, 0.0, i); }

Var slice(const Var& x, std::size_t offset, std::size_t length) {
    return x.tape().record(Op::slice, {x.id()}, 0.0, offset, {length});
}

Var stack(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ShapeError("stack: no inputs");
    }
    Tape& t = parts.front().tape();
    std::vector<std::size_t> ids;
    ids.reserve(parts.size());
    for (const Var& p : parts) {
        if (&p.tape() != &t) {
            throw ContractError("stack: operands recorded on different tapes");
        }
        ids.push_back(p.id());
    }
    return t.record(Op::stack, std::move(ids));
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    return x.tape().record(Op::reshape, {x.id()}, 0.0, 0, std::move(shape));
}

Var broadcast_rows(const Var& v, std::size_t rows) {
    return v.tape().record(Op::broadcast_rows, {v.id()}, 0.0, 0, {rows});
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator+(const Var& a, double c) { return add_scalar(a, c); }
Var operator-(const Var& a, double c) { return add_scalar(a, -c); }
Var operator*(const Var& a, double c) { return scale(a, c); }
Var operator*(double c, const Var& a) { return scale(a, c); }
Var operator-(const Var& a) { return scale(a, -1.0); }

Var operator/(const Var& a, double c) {
    if (c == 0.0) {
        throw DomainError("div: division by zero scalar");
    }
    return scale(a, 1.0 / c);
}

// ---------------------------------------------------------------------------

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                  const GradCheckOptions& options) {
    Tape tape;
    const Var input = tape.leaf(x);
    const Var out = f(tape, input);
    const Tensor analytic = tape.backward(out)[input];

    auto value_at = [&](const std::vector<double>& point) {
        Tape t;
        const Var in = t.leaf(Tensor(x.shape(), point));
        return f(t, in).value().item();
    };

    double worst = 0.0;
    std::vector<double> point = x.values();
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double xi = point[i];
        if (options.avoid_sign_crossing && std::abs(xi) <= options.eps) {
            continue;
        }
        point[i] = xi + options.eps;
        const double up = value_at(point);
        point[i] = xi - options.eps;
        const double down = value_at(point);
        point[i] = xi;
        const double central = (up - down) / (2.0 * options.eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - central) / denom);
    }
    return worst;
}

}  // namespace folio::ad
