#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace triview {

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (const int d : s) {
        if (d <= 0) throw ShapeError("tensor extents must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {
// Creation order doubles as topological order: an op's inputs always exist
// before its output. Thread-local since a tape is confined to one thread.
inline std::uint64_t& seq_counter() {
    thread_local std::uint64_t counter = 0;
    return counter;
}
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

// Disables graph recording in a scope (evaluation-mode forward passes).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t seq = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false) {
        node_ = std::make_shared<TensorNode>();
        node_->shape = std::move(shape);
        node_->data.assign(static_cast<std::size_t>(shape_numel(node_->shape)), fill);
        node_->requires_grad = requires_grad;
        node_->seq = ++detail::seq_counter();
    }

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("data length does not match shape " + shape_str(shape));
        node_ = std::make_shared<TensorNode>();
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
        node_->seq = ++detail::seq_counter();
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<double>{v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->data.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    double item() const {
        if (size() != 1) throw ShapeError("item() requires a single-element tensor");
        return node_->data[0];
    }

    // 2D accessors.
    double at(int r, int c) const { return node_->data[static_cast<std::size_t>(r) * dim(1) + c]; }
    double& at(int r, int c) { return node_->data[static_cast<std::size_t>(r) * dim(1) + c]; }

    std::shared_ptr<TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_op_result(Shape shape, std::vector<double> data,
                                 std::vector<Tensor> parents,
                                 std::function<void(TensorNode&)> backward_fn);
};

inline Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                             std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->seq = ++detail::seq_counter();
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.requires_grad()) needs = true;
    }
    if (needs) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

// The reverse pass: reachable nodes in creation (= topological) order.
class Tape {
public:
    static Tape trace(const Tensor& root) {
        Tape t;
        std::vector<TensorNode*> stack{root.node().get()};
        std::vector<TensorNode*> seen;
        t.nodes_.push_back(root.node());
        seen.push_back(root.node().get());
        while (!stack.empty()) {
            TensorNode* n = stack.back();
            stack.pop_back();
            for (const auto& p : n->parents) {
                if (std::find(seen.begin(), seen.end(), p.get()) == seen.end()) {
                    seen.push_back(p.get());
                    t.nodes_.push_back(p);
                    stack.push_back(p.get());
                }
            }
        }
        std::sort(t.nodes_.begin(), t.nodes_.end(),
                  [](const auto& a, const auto& b) { return a->seq < b->seq; });
        return t;
    }

    // One backward sweep; every node's rule fires exactly once, in reverse
    // topological order.
    void backward() {
        if (nodes_.empty()) return;
        auto& root = nodes_.back();
        root->ensure_grad();
        std::fill(root->grad.begin(), root->grad.end(), 1.0);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            TensorNode& n = **it;
            if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
        }
    }

    const std::vector<std::shared_ptr<TensorNode>>& nodes() const { return nodes_; }

private:
    std::vector<std::shared_ptr<TensorNode>> nodes_;
};

inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss");
    Tape::trace(loss).backward();
}

namespace detail {
inline void accumulate(TensorNode& n, const double* src) {
    if (!n.requires_grad) return;
    n.ensure_grad();
    const std::size_t m = n.grad.size();
    for (std::size_t i = 0; i < m; ++i) n.grad[i] += src[i];
}
inline void require_2d(const Tensor& t, const char* what) {
    if (t.ndim() != 2) throw ShapeError(std::string(what) + " requires a 2-D tensor, got " + shape_str(t.shape()));
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops. Each records its local gradient rule on the tape.
// ---------------------------------------------------------------------------

// C[m x n] = A[m x k] * B[k x n].  dA = dC * B^T, dB = A^T * dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "matmul");
    detail::require_2d(b, "matmul");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (int i = 0; i < m; ++i) {
        double* row = out.data() + static_cast<std::size_t>(i) * n;
        const double* arow = pa + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = pb + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(
        Shape{m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode& self) {
            const double* dc = self.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                const double* pb = bn->data.data();
                for (int i = 0; i < m; ++i) {
                    double* da = an->grad.data() + static_cast<std::size_t>(i) * k;
                    const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const double* brow = pb + static_cast<std::size_t>(p) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                        da[p] += acc;
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const double* pa = an->data.data();
                for (int p = 0; p < k; ++p) {
                    double* db = bn->grad.data() + static_cast<std::size_t>(p) * n;
                    for (int i = 0; i < m; ++i) {
                        const double av = pa[static_cast<std::size_t>(i) * k + p];
                        const double* dcrow = dc + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) db[j] += av * dcrow[j];
                    }
                }
            }
        });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_2d(a, "transpose");
    const int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j) * m + i] = a.data()[static_cast<std::size_t>(i) * n + j];
    auto an = a.node();
    return make_op_result(Shape{n, m}, std::move(out), {a}, [an, m, n](TensorNode& self) {
        an->ensure_grad();
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i)
                an->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(j) * m + i];
    });
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}
}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        detail::accumulate(*an, self.grad.data());
        detail::accumulate(*bn, self.grad.data());
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "sub");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        detail::accumulate(*an, self.grad.data());
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an, c](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    });
}

// A[m x n] + row vector b[n], broadcast over rows.
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& b) {
    detail::require_2d(a, "add_row_broadcast");
    const int m = a.dim(0), n = a.dim(1);
    if (b.size() != n)
        throw ShapeError("add_row_broadcast: bias length " + std::to_string(b.size()) +
                         " does not match row width " + std::to_string(n));
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                a.data()[static_cast<std::size_t>(i) * n + j] + b.data()[static_cast<std::size_t>(j)];
    auto an = a.node();
    auto bn = b.node();
    return make_op_result(Shape{m, n}, std::move(out), {a, b}, [an, bn, m, n](TensorNode& self) {
        detail::accumulate(*an, self.grad.data());
        bn->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                bn->grad[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(i) * n + j];
    });
}

inline Tensor relu(const Tensor& a) {
    std::vector<double> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    auto an = a.node();
    return make_op_result(a.shape(), std::move(out), {a}, [an](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (an->data[i] > 0.0) an->grad[i] += self.grad[i];
    });
}

// Softmax along an axis of a 2-D tensor (axis 1 = rows), max-subtracted.
inline Tensor softmax(const Tensor& a, int axis = 1) {
    detail::require_2d(a, "softmax");
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    if (axis != 1) throw ShapeError("softmax: axis must be 0 or 1 for 2-D input");
    const int m = a.dim(0), n = a.dim(1);
    if (n < 1) throw ShapeError("softmax over empty axis");
    std::vector<double> out(a.data().size());
    for (int i = 0; i < m; ++i) {
        const double* row = a.data().data() + static_cast<std::size_t>(i) * n;
        double* orow = out.data() + static_cast<std::size_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    auto an = a.node();
    return make_op_result(Shape{m, n}, std::move(out), {a}, [an, m, n](TensorNode& self) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const double* y = self.data.data() + static_cast<std::size_t>(i) * n;
            const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            double* dx = an->grad.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

// Per-row normalization over the last axis, then affine with gain/bias.
// Population variance; eps added inside the square root.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    detail::require_2d(x, "layer_norm");
    const int m = x.dim(0), n = x.dim(1);
    if (gain.size() != n || bias.size() != n)
        throw ShapeError("layer_norm: gain/bias must match last dimension");
    std::vector<double> out(x.data().size());
    std::vector<double> inv_std(static_cast<std::size_t>(m));
    std::vector<double> xhat(x.data().size());
    for (int i = 0; i < m; ++i) {
        const double* row = x.data().data() + static_cast<std::size_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += row[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[static_cast<std::size_t>(i) * n + j] = h;
            out[static_cast<std::size_t>(i) * n + j] = h * gain.data()[static_cast<std::size_t>(j)] +
                                                      bias.data()[static_cast<std::size_t>(j)];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    return make_op_result(
        Shape{m, n}, std::move(out), {x, gain, bias},
        [xn, gn, bn, m, n, inv_std = std::move(inv_std), xhat = std::move(xhat)](TensorNode& self) {
            xn->ensure_grad();
            gn->ensure_grad();
            bn->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* dy = self.grad.data() + static_cast<std::size_t>(i) * n;
                const double* h = xhat.data() + static_cast<std::size_t>(i) * n;
                const double is = inv_std[static_cast<std::size_t>(i)];
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double dh = dy[j] * gn->data[static_cast<std::size_t>(j)];
                    sum_dh += dh;
                    sum_dh_h += dh * h[j];
                    gn->grad[static_cast<std::size_t>(j)] += dy[j] * h[j];
                    bn->grad[static_cast<std::size_t>(j)] += dy[j];
                }
                double* dx = xn->grad.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    const double dh = dy[j] * gn->data[static_cast<std::size_t>(j)];
                    dx[j] += is * (dh - (sum_dh + h[j] * sum_dh_h) / n);
                }
            }
        });
}

// Mean negative log-softmax of targets over non-pad positions (natural log).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
    detail::require_2d(logits, "cross_entropy");
    const int t = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != t)
        throw ShapeError("cross_entropy: target length does not match logits rows");
    int n_eff = 0;
    for (const int id : targets) {
        if (id == pad_id) continue;
        if (id < 0 || id >= v) throw ShapeError("cross_entropy: target id out of vocabulary");
        ++n_eff;
    }
    if (n_eff == 0) throw ShapeError("cross_entropy: all target positions are padding");
    std::vector<double> lse(static_cast<std::size_t>(t));
    double loss = 0.0;
    for (int i = 0; i < t; ++i) {
        if (targets[static_cast<std::size_t>(i)] == pad_id) continue;
        const double* row = logits.data().data() + static_cast<std::size_t>(i) * v;
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        const double l = mx + std::log(sum);
        lse[static_cast<std::size_t>(i)] = l;
        loss += l - row[targets[static_cast<std::size_t>(i)]];
    }
    loss /= n_eff;
    auto ln = logits.node();
    return make_op_result(
        Shape{1}, std::vector<double>{loss}, {logits},
        [ln, targets, pad_id, t, v, n_eff, lse = std::move(lse)](TensorNode& self) {
            ln->ensure_grad();
            const double g = self.grad[0] / n_eff;
            for (int i = 0; i < t; ++i) {
                const int tgt = targets[static_cast<std::size_t>(i)];
                if (tgt == pad_id) continue;
                const double* row = ln->data.data() + static_cast<std::size_t>(i) * v;
                double* drow = ln->grad.data() + static_cast<std::size_t>(i) * v;
                const double l = lse[static_cast<std::size_t>(i)];
                for (int j = 0; j < v; ++j) drow[j] += g * std::exp(row[j] - l);
                drow[tgt] -= g;
            }
        });
}

// Gather rows of an embedding table; gradient scatter-adds.
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    detail::require_2d(table, "embedding");
    const int v = table.dim(0), d = table.dim(1);
    std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= v) throw ShapeError("embedding: id out of range");
        std::copy_n(table.data().data() + static_cast<std::size_t>(id) * d, d,
                    out.data() + i * static_cast<std::size_t>(d));
    }
    auto tn = table.node();
    return make_op_result(Shape{static_cast<int>(ids.size()), d}, std::move(out), {table},
                          [tn, ids, d](TensorNode& self) {
                              tn->ensure_grad();
                              for (std::size_t i = 0; i < ids.size(); ++i) {
                                  double* dst = tn->grad.data() +
                                                static_cast<std::size_t>(ids[i]) * d;
                                  const double* src = self.grad.data() + i * static_cast<std::size_t>(d);
                                  for (int j = 0; j < d; ++j) dst[j] += src[j];
                              }
                          });
}

// Columns [c0, c1) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    detail::require_2d(a, "slice_cols");
    const int m = a.dim(0), n = a.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1) throw ShapeError("slice_cols: bad column range");
    const int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i)
        std::copy_n(a.data().data() + static_cast<std::size_t>(i) * n + c0, w,
                    out.data() + static_cast<std::size_t>(i) * w);
    auto an = a.node();
    return make_op_result(Shape{m, w}, std::move(out), {a}, [an, m, n, c0, w](TensorNode& self) {
        an->ensure_grad();
        for (int i = 0; i < m; ++i) {
            double* dst = an->grad.data() + static_cast<std::size_t>(i) * n + c0;
            const double* src = self.grad.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
    });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const int m = parts[0].dim(0);
    int n = 0;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_cols");
        if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
        n += p.dim(1);
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    int off = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < m; ++i)
            std::copy_n(p.data().data() + static_cast<std::size_t>(i) * w, w,
                        out.data() + static_cast<std::size_t>(i) * n + off);
        off += w;
    }
    std::vector<int> widths;
    widths.reserve(parts.size());
    for (const auto& p : parts) widths.push_back(p.dim(1));
    std::vector<std::shared_ptr<TensorNode>> pn;
    pn.reserve(parts.size());
    for (const auto& p : parts) pn.push_back(p.node());
    return make_op_result(Shape{m, n}, std::move(out), parts,
                          [pn = std::move(pn), widths = std::move(widths), m, n](TensorNode& self) {
                              int off = 0;
                              for (std::size_t k = 0; k < pn.size(); ++k) {
                                  const int w = widths[k];
                                  pn[k]->ensure_grad();
                                  for (int i = 0; i < m; ++i) {
                                      double* dst = pn[k]->grad.data() + static_cast<std::size_t>(i) * w;
                                      const double* src =
                                          self.grad.data() + static_cast<std::size_t>(i) * n + off;
                                      for (int j = 0; j < w; ++j) dst[j] += src[j];
                                  }
                                  off += w;
                              }
                          });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    const int n = parts[0].dim(1);
    int m = 0;
    for (const auto& p : parts) {
        detail::require_2d(p, "concat_rows");
        if (p.dim(1) != n) throw ShapeError("concat_rows: column counts differ");
        m += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m) * n);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<int> heights;
    heights.reserve(parts.size());
    for (const auto& p : parts) heights.push_back(p.dim(0));
    std::vector<std::shared_ptr<TensorNode>> pn;
    pn.reserve(parts.size());
    for (const auto& p : parts) pn.push_back(p.node());
    return make_op_result(Shape{m, n}, std::move(out), parts,
                          [pn = std::move(pn), heights = std::move(heights), n](TensorNode& self) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < pn.size(); ++k) {
                                  const std::size_t len =
                                      static_cast<std::size_t>(heights[k]) * static_cast<std::size_t>(n);
                                  pn[k]->ensure_grad();
                                  for (std::size_t i = 0; i < len; ++i)
                                      pn[k]->grad[i] += self.grad[off + i];
                                  off += len;
                              }
                          });
}

inline Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto an = a.node();
    return make_op_result(Shape{1}, std::vector<double>{s}, {a}, [an](TensorNode& self) {
        an->ensure_grad();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += self.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

}  // namespace triview
