#include "dmvfc/autodiff.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <unordered_set>

#include "dmvfc/error.hpp"

namespace dmvfc::ad {

namespace detail {

struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool leaf = false;
    bool consumed = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
};

}  // namespace detail

using detail::Node;

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ShapeMismatch(std::string(op) + ": shapes " + shape(a.value()) + " and " + shape(b.value()) + " differ");
}

void accumulate(Node& n, const Matrix& g) {
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
        n.grad = g;
    else
        n.grad += g;
}

// Grad buffer of `n`, zero-initialised on first use (for scatter-style updates).
Matrix& grad_buffer(Node& n) {
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const auto& in : inputs) {
        if (in.node()->consumed && !in.node()->leaf)
            throw Error("autodiff: input belongs to a graph that was already backpropagated");
        node->requires_grad = node->requires_grad || in.requires_grad();
    }
    if (node->requires_grad) {
        node->parents.reserve(inputs.size());
        for (auto& in : inputs) node->parents.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

const Matrix& Var::value() const { return node_->value; }

Matrix& Var::mutable_value() {
    if (!node_->leaf) throw Error("autodiff: only leaf values may be modified in place");
    return node_->value;
}

const Matrix& Var::grad() const { return node_->grad; }

bool Var::has_grad() const { return node_->grad.size() != 0; }

void Var::zero_grad() { node_->grad.resize(0, 0); }

double Var::item() const {
    if (rows() != 1 || cols() != 1) throw ShapeMismatch("item(): value is " + shape(value()) + ", not a scalar");
    return value()(0, 0);
}

bool Var::requires_grad() const { return node_->requires_grad; }

void Var::backward() {
    if (rows() != 1 || cols() != 1)
        throw ShapeMismatch("backward(): loss must be a scalar, got " + shape(value()));
    if (node_->consumed) throw Error("backward(): graph already backpropagated; rebuild it before calling again");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS; `order` ends up parents-before-children.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    accumulate(*node_, Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
    for (Node* n : order) {
        if (n->leaf) continue;
        n->consumed = true;
        n->backward = nullptr;
        n->parents.clear();
        n->grad.resize(0, 0);
    }
}

Var parameter(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->leaf = true;
    return Var(std::move(node));
}

Var constant(Matrix value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->leaf = true;
    return Var(std::move(node));
}

Var scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var matmul(const Var& a, const Var& b) {
    if (a.cols() != b.rows())
        throw ShapeMismatch("matmul: " + shape(a.value()) + " times " + shape(b.value()));
    return make(a.value() * b.value(), {a, b}, [](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) accumulate(pa, n.grad * pb.value.transpose());
        if (pb.requires_grad) accumulate(pb, pa.value.transpose() * n.grad);
    });
}

Var add(const Var& a, const Var& b) {
    if (b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols()) {
        Matrix out = a.value().rowwise() + b.value().row(0);
        return make(std::move(out), {a, b}, [](Node& n) {
            accumulate(parent(n, 0), n.grad);
            accumulate(parent(n, 1), n.grad.colwise().sum());
        });
    }
    require_same_shape("add", a, b);
    return make(a.value() + b.value(), {a, b}, [](Node& n) {
        accumulate(parent(n, 0), n.grad);
        accumulate(parent(n, 1), n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    return make(a.value() - b.value(), {a, b}, [](Node& n) {
        accumulate(parent(n, 0), n.grad);
        accumulate(parent(n, 1), -n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        if (pa.requires_grad) accumulate(pa, n.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) accumulate(pb, n.grad.cwiseProduct(pa.value));
    });
}

Var scale(const Var& a, double factor) {
    return make(a.value() * factor, {a}, [factor](Node& n) { accumulate(parent(n, 0), n.grad * factor); });
}

Var add_scalar(const Var& a, double value) {
    return make(a.value().array() + value, {a}, [](Node& n) { accumulate(parent(n, 0), n.grad); });
}

namespace {
thread_local BranchRecorder* t_recorder = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : previous_(t_recorder) { t_recorder = this; }
BranchRecorder::~BranchRecorder() { t_recorder = previous_; }

void BranchRecorder::add(std::uint64_t value) {
    for (int byte = 0; byte < 8; ++byte) {
        hash_ ^= (value >> (8 * byte)) & 0xffU;
        hash_ *= 1099511628211ULL;
    }
}

BranchRecorder* detail::active_recorder() { return t_recorder; }

Var leaky_relu(const Var& a, double slope) {
    Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
    if (auto* rec = detail::active_recorder())
        for (Eigen::Index i = 0; i < a.value().size(); ++i) rec->add(a.value().data()[i] > 0.0 ? 1 : 0);
    return make(std::move(out), {a}, [slope](Node& n) {
        auto& pa = parent(n, 0);
        Matrix g = n.grad.binaryExpr(pa.value, [slope](double g, double x) { return x > 0.0 ? g : slope * g; });
        accumulate(pa, g);
    });
}

Var square_diff(const Var& a, const Var& b) {
    require_same_shape("square_diff", a, b);
    Matrix diff = a.value() - b.value();
    Matrix out = diff.array().square();
    return make(std::move(out), {a, b}, [diff = std::move(diff)](Node& n) {
        Matrix g = 2.0 * n.grad.cwiseProduct(diff);
        accumulate(parent(n, 0), g);
        accumulate(parent(n, 1), -g);
    });
}

Var max_groups(const Var& a, Eigen::Index group) {
    if (group <= 0 || a.rows() % group != 0)
        throw ShapeMismatch("max_groups: " + std::to_string(a.rows()) + " rows not divisible by group " +
                            std::to_string(group));
    const Eigen::Index blocks = a.rows() / group;
    const Eigen::Index cols = a.cols();
    Matrix out(blocks, cols);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(blocks * cols));
    const Matrix& v = a.value();
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const Eigen::Index base = b * group;
        for (Eigen::Index c = 0; c < cols; ++c) {
            Eigen::Index best = base;
            double best_v = v(base, c);
            for (Eigen::Index r = base + 1; r < base + group; ++r)
                if (v(r, c) > best_v) {
                    best_v = v(r, c);
                    best = r;
                }
            out(b, c) = best_v;
            arg[static_cast<std::size_t>(b * cols + c)] = best;
        }
    }
    if (auto* rec = detail::active_recorder())
        for (auto r : arg) rec->add(static_cast<std::uint64_t>(r));
    return make(std::move(out), {a}, [arg = std::move(arg)](Node& n) {
        auto& pa = parent(n, 0);
        Matrix& g = grad_buffer(pa);
        const Eigen::Index cols = n.grad.cols();
        for (Eigen::Index b = 0; b < n.grad.rows(); ++b)
            for (Eigen::Index c = 0; c < cols; ++c) g(arg[static_cast<std::size_t>(b * cols + c)], c) += n.grad(b, c);
    });
}

Var sum(const Var& a) {
    return make(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
        auto& pa = parent(n, 0);
        accumulate(pa, Matrix::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a) {
    const double count = static_cast<double>(a.value().size());
    if (count == 0) throw ShapeMismatch("mean: empty input");
    return make(Matrix::Constant(1, 1, a.value().sum() / count), {a}, [count](Node& n) {
        auto& pa = parent(n, 0);
        accumulate(pa, Matrix::Constant(pa.value.rows(), pa.value.cols(), n.grad(0, 0) / count));
    });
}

Var row_sum(const Var& a) {
    return make(a.value().rowwise().sum(), {a}, [](Node& n) {
        auto& pa = parent(n, 0);
        Matrix g = n.grad.col(0).replicate(1, pa.value.cols());
        accumulate(pa, g);
    });
}

Var concat_cols(const Var& a, const Var& b) {
    if (a.rows() != b.rows()) throw ShapeMismatch("concat_cols: row counts differ");
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const Eigen::Index split = a.cols();
    return make(std::move(out), {a, b}, [split](Node& n) {
        accumulate(parent(n, 0), n.grad.leftCols(split));
        accumulate(parent(n, 1), n.grad.rightCols(n.grad.cols() - split));
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    for (const auto& p : parts) {
        if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const auto& p : parts) {
        offsets.push_back(at);
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make(std::move(out), parts, [offsets = std::move(offsets)](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            auto& p = parent(n, i);
            if (p.requires_grad) accumulate(p, n.grad.middleRows(offsets[i], p.value.rows()));
        }
    });
}

Var gather_rows(const Var& a, const std::vector<int>& index) {
    Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] < 0 || index[r] >= a.rows())
            throw ShapeMismatch("gather_rows: index " + std::to_string(index[r]) + " out of range");
        out.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
    }
    return make(std::move(out), {a}, [index](Node& n) {
        auto& pa = parent(n, 0);
        Matrix& g = grad_buffer(pa);
        for (std::size_t r = 0; r < index.size(); ++r) g.row(index[r]) += n.grad.row(static_cast<Eigen::Index>(r));
    });
}

Var sqrt(const Var& a) {
    if ((a.value().array() < 0.0).any()) throw DegenerateInput("sqrt: negative input");
    Matrix out = a.value().array().sqrt();
    if (auto* rec = detail::active_recorder())
        for (Eigen::Index i = 0; i < out.size(); ++i) rec->add(out.data()[i] > 0.0 ? 1 : 0);
    return make(out, {a}, [root = out](Node& n) {
        Matrix g = n.grad.binaryExpr(root, [](double g, double r) { return r > 0.0 ? g / (2.0 * r) : 0.0; });
        accumulate(parent(n, 0), g);
    });
}

Var log(const Var& a) {
    if ((a.value().array() <= 0.0).any()) throw DegenerateInput("log: non-positive input");
    return make(a.value().array().log(), {a}, [](Node& n) {
        auto& pa = parent(n, 0);
        accumulate(pa, n.grad.cwiseQuotient(pa.value));
    });
}

Var reciprocal(const Var& a) {
    if ((a.value().array() == 0.0).any()) throw DegenerateInput("reciprocal: zero input");
    Matrix out = a.value().cwiseInverse();
    return make(out, {a}, [inv = out](Node& n) {
        accumulate(parent(n, 0), -n.grad.cwiseProduct(inv).cwiseProduct(inv));
    });
}

Var div_rows(const Var& a, const Var& d) {
    if (d.cols() != 1 || d.rows() != a.rows()) throw ShapeMismatch("div_rows: divisor must be rows x 1");
    if ((d.value().array() == 0.0).any()) throw DegenerateInput("div_rows: zero divisor");
    Matrix inv = d.value().cwiseInverse();
    Matrix out = a.value().array().colwise() * inv.col(0).array();
    return make(out, {a, d}, [inv = std::move(inv), out](Node& n) {
        auto& pa = parent(n, 0);
        auto& pd = parent(n, 1);
        if (pa.requires_grad) accumulate(pa, n.grad.array().colwise() * inv.col(0).array());
        if (pd.requires_grad) {
            // d/dd (a / d) = -out / d
            Matrix g = -(n.grad.cwiseProduct(out).rowwise().sum()).cwiseProduct(inv);
            accumulate(pd, g);
        }
    });
}

Var sq_dist(const Var& a, const Var& b) {
    if (a.cols() != b.cols()) throw ShapeMismatch("sq_dist: dimension mismatch");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out(av.rows(), bv.rows());
    for (Eigen::Index i = 0; i < av.rows(); ++i)
        for (Eigen::Index j = 0; j < bv.rows(); ++j) out(i, j) = (av.row(i) - bv.row(j)).squaredNorm();
    return make(std::move(out), {a, b}, [](Node& n) {
        auto& pa = parent(n, 0);
        auto& pb = parent(n, 1);
        // d/da_i = sum_j 2 g_ij (a_i - b_j); d/db_j = -sum_i 2 g_ij (a_i - b_j)
        const Matrix& g = n.grad;
        Matrix row_g = g.rowwise().sum();
        Matrix col_g = g.colwise().sum();
        if (pa.requires_grad) {
            Matrix ga = 2.0 * (pa.value.array().colwise() * row_g.col(0).array()).matrix() - 2.0 * g * pb.value;
            accumulate(pa, ga);
        }
        if (pb.requires_grad) {
            Matrix gb = 2.0 * (pb.value.array().colwise() * col_g.row(0).transpose().array()).matrix() -
                        2.0 * g.transpose() * pa.value;
            accumulate(pb, gb);
        }
    });
}

}  // namespace dmvfc::ad
