#pragma once

// Reverse-mode automatic differentiation over small dense tensors.
//
// Every operation is recorded on an explicit Tape in topological order. A
// Var is a lightweight handle (tape pointer + node index). Values are
// row-major; rank is 0 (scalar), 1 (vector) or 2 (matrix).
//
// Conventions:
//   - sign() and the two indicator ops are straight-through constants: their
//     local partials are zero everywhere, and sign(0) == 0.
//   - abs() uses the subgradient sign(x), which is 0 at x == 0.
//   - variance() uses population normalization (divide by n).
//   - Elementwise binary ops accept equal shapes or a single-element operand,
//     which is broadcast.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace folio::ad {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor zeros(std::vector<std::size_t> shape);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    double operator[](std::size_t i) const { return data_[i]; }
    double at(std::size_t row, std::size_t col) const;
    // Value of a single-element tensor.
    double item() const;

    std::string shape_string() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

enum class Op {
    leaf,
    constant,
    add,
    sub,
    mul,
    div,
    matvec,
    exp,
    abs,
    sign,
    sigmoid_shifted,
    tanh,
    softmax,
    sum,
    mean,
    variance,
    sqrt,
    maximum,
    indicator_greater,
    indicator_less,
    scale,
    add_scalar,
    dot,
    index,
    slice,
    stack,
    reshape,
    outer,
    outer_sub,
    row_sum,
    broadcast_rows,
};

const char* op_name(Op op) noexcept;

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape& tape() const;
    std::size_t id() const noexcept { return id_; }
    bool valid() const noexcept { return tape_ != nullptr; }
    const Tensor& value() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Gradients {
public:
    Gradients(std::vector<std::vector<double>> adjoints, const Tape* tape)
        : adjoints_(std::move(adjoints)), tape_(tape) {}

    // Gradient of the differentiated output with respect to `x`, shaped like
    // x. Nodes that do not influence the output get an exact zero tensor.
    Tensor operator[](const Var& x) const;

private:
    std::vector<std::vector<double>> adjoints_;
    const Tape* tape_;
};

class Tape {
public:
    struct Node {
        Op op = Op::leaf;
        std::vector<std::size_t> parents;
        double param = 0.0;
        std::size_t offset = 0;
        std::vector<std::size_t> shape;  // reshape target, broadcast rows, ...
        Tensor value;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value);
    Var constant(Tensor value);

    // Overwrite a leaf or constant value; use replay() to refresh dependants.
    void set_value(const Var& input, Tensor value);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Node& node(std::size_t id) const { return nodes_.at(id); }

    // Recompute every derived node from the current leaf/constant values.
    // Returns the recomputed values without mutating the tape.
    std::vector<Tensor> replay() const;
    // Recompute and store.
    void refresh();

    // Reverse sweep from a single-element output node.
    Gradients backward(const Var& output) const;

    // Low-level recording entry point used by the free operator functions.
    Var record(Op op, std::vector<std::size_t> parents, double param = 0.0,
               std::size_t offset = 0, std::vector<std::size_t> shape = {});

private:
    Tensor evaluate(const Node& node, const std::vector<Tensor>& values) const;
    void accumulate(std::size_t id, const std::vector<double>& g,
                    std::vector<std::vector<double>>& adjoints) const;

    std::vector<Node> nodes_;
};

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator+(const Var& a, double c);
Var operator-(const Var& a, double c);
Var operator*(const Var& a, double c);
Var operator*(double c, const Var& a);
Var operator/(const Var& a, double c);
Var operator-(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var matvec(const Var& m, const Var& v);
Var exp(const Var& x);
Var abs(const Var& x);
Var sign(const Var& x);
// a + 1 / (1 + e^{-x})
Var sigmoid_shifted(const Var& x, double a);
Var tanh(const Var& x);
// Softmax over the last axis (row-wise for matrices).
Var softmax(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
Var variance(const Var& x);
Var sqrt(const Var& x);
Var maximum(const Var& a, const Var& b);
Var indicator_greater(const Var& x, const Var& threshold);
Var indicator_less(const Var& x, const Var& threshold);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var dot(const Var& a, const Var& b);
Var index(const Var& x, std::size_t i);
Var slice(const Var& x, std::size_t offset, std::size_t length);
Var stack(std::span<const Var> parts);
Var reshape(const Var& x, std::vector<std::size_t> shape);
// x_i * y_j
Var outer(const Var& x, const Var& y);
// x_i - y_j
Var outer_sub(const Var& x, const Var& y);
Var row_sum(const Var& m);
Var broadcast_rows(const Var& v, std::size_t rows);

struct GradCheckOptions {
    double eps = 1e-5;
    // Skip coordinates whose central-difference stencil would cross zero, so
    // sign() discontinuities are never straddled.
    bool avoid_sign_crossing = true;
};

// Maximum over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
// for a scalar-valued function built on a fresh tape.
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Tensor& x,
                  const GradCheckOptions& options = {});

}  // namespace folio::ad
