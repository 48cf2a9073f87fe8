#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is two-dimensional; scalars are 1x1.
//
// A graph is built implicitly by calling the op functions below on Vars.
// backward() on a 1x1 result walks the graph in reverse topological order,
// accumulates gradients into every leaf that requires them, and then
// releases the intermediate nodes. A consumed graph cannot be
// backpropagated again; rebuild it instead.
namespace dmvfc::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
struct Node;
}

class Var {
public:
    Var() = default;

    const Matrix& value() const;
    // Leaves only: the optimizer writes updated parameters through this.
    Matrix& mutable_value();
    // Empty until the first backward pass that reaches this node.
    const Matrix& grad() const;
    bool has_grad() const;
    void zero_grad();

    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double item() const;
    bool requires_grad() const;
    bool defined() const { return node_ != nullptr; }

    void backward();

    explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// While alive on a thread, every piecewise op evaluated on that thread folds
// the branch it takes (rectifier signs, max winners, neighbour sets) into a
// hash. Two evaluations with equal signatures lie on the same smooth piece.
class BranchRecorder {
public:
    BranchRecorder();
    ~BranchRecorder();
    BranchRecorder(const BranchRecorder&) = delete;
    BranchRecorder& operator=(const BranchRecorder&) = delete;

    std::uint64_t signature() const { return hash_; }
    void reset() { hash_ = kOffset; }
    void add(std::uint64_t value);

private:
    static constexpr std::uint64_t kOffset = 1469598103934665603ULL;
    std::uint64_t hash_ = kOffset;
    BranchRecorder* previous_ = nullptr;
};

namespace detail {
// Null when no recorder is active on this thread.
BranchRecorder* active_recorder();
}  // namespace detail

// Trainable leaf.
Var parameter(Matrix value);
// Leaf that never receives gradients.
Var constant(Matrix value);
Var scalar(double value);

Var matmul(const Var& a, const Var& b);
// Elementwise sum; b may also be a 1 x cols row broadcast over a's rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double value);
Var leaky_relu(const Var& a, double slope = 0.01);
// (a - b)^2 elementwise.
Var square_diff(const Var& a, const Var& b);

// Max over consecutive blocks of `group` rows, per column. The gradient is
// routed to the first maximal row of each block.
Var max_groups(const Var& a, Eigen::Index group);
inline Var max_rows(const Var& a) { return max_groups(a, a.rows()); }

Var sum(const Var& a);
Var mean(const Var& a);
// rows x 1 vector of per-row sums.
Var row_sum(const Var& a);

Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const std::vector<Var>& parts);
// Output row r is a.row(index[r]); gradients scatter-add back.
Var gather_rows(const Var& a, const std::vector<int>& index);

// Square root with zero subgradient at 0.
Var sqrt(const Var& a);
Var log(const Var& a);
Var reciprocal(const Var& a);
// a (R x C) divided row-wise by d (R x 1).
Var div_rows(const Var& a, const Var& d);
// out(i, j) = ||a.row(i) - b.row(j)||^2.
Var sq_dist(const Var& a, const Var& b);

}  // namespace dmvfc::ad
