#include "tags/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tags/error.hpp"

namespace tags::ad {

namespace {

std::size_t product(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    node->requires_grad = any;
    if (any) {
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(fn);
    }
    return node;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2) {
        throw InvalidArgument(std::string(op) + ": expected a 2D tensor, got " + t.shape_str());
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw InvalidArgument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                              b.shape_str());
    }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(product(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != product(shape)) {
        throw InvalidArgument("tensor data size does not match shape " + shape_str());
    }
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void Node::ensure_grad() {
    if (grad.data.size() != value.data.size()) grad = Tensor(value.shape, 0.0);
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return node;
}

Var leaf(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return node;
}

void backward(const Var& out) {
    if (out->value.numel() != 1) throw InvalidArgument("backward: output must be a scalar");
    if (!out->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{out.get(), 0}};
    seen.insert(out.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    out->ensure_grad();
    out->grad.data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backward_fn) continue;
        node->ensure_grad();
        for (auto& in : node->inputs) {
            if (in->requires_grad) in->ensure_grad();
        }
        node->backward_fn(*node);
    }
}

Var matmul(const Var& a, const Var& b) {
    require_2d(a->value, "matmul");
    require_2d(b->value, "matmul");
    const int m = a->value.rows(), k = a->value.cols(), n = b->value.cols();
    if (b->value.rows() != k) {
        throw InvalidArgument("matmul: inner dimension mismatch " + a->value.shape_str() + " x " +
                              b->value.shape_str());
    }
    Tensor out({m, n});
    const double* A = a->value.data.data();
    const double* B = b->value.data.data();
    double* C = out.data.data();
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = A[static_cast<std::size_t>(i) * k + p];
            if (av == 0.0) continue;
            const double* brow = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Var& a = self.inputs[0];
        const Var& b = self.inputs[1];
        const double* G = self.grad.data.data();
        if (a->requires_grad) {
            const double* B = b->value.data.data();
            double* dA = a->grad.data.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = G + static_cast<std::size_t>(i) * n;
                for (int p = 0; p < k; ++p) {
                    const double* brow = B + static_cast<std::size_t>(p) * n;
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    dA[static_cast<std::size_t>(i) * k + p] += acc;
                }
            }
        }
        if (b->requires_grad) {
            const double* A = a->value.data.data();
            double* dB = b->grad.data.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = G + static_cast<std::size_t>(i) * n;
                for (int p = 0; p < k; ++p) {
                    const double av = A[static_cast<std::size_t>(i) * k + p];
                    if (av == 0.0) continue;
                    double* drow = dB + static_cast<std::size_t>(p) * n;
                    for (int j = 0; j < n; ++j) drow[j] += av * grow[j];
                }
            }
        }
    });
}

Var matmul_transposed(const Var& a, const Var& b) {
    require_2d(a->value, "matmul_transposed");
    require_2d(b->value, "matmul_transposed");
    const int m = a->value.rows(), k = a->value.cols(), n = b->value.rows();
    if (b->value.cols() != k) {
        throw InvalidArgument("matmul_transposed: width mismatch " + a->value.shape_str() +
                              " vs " + b->value.shape_str());
    }
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const double* arow = a->value.data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
            const double* brow = b->value.data.data() + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            out(i, j) = acc;
        }
    }
    return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
        const Var& a = self.inputs[0];
        const Var& b = self.inputs[1];
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                const double g = self.grad(i, j);
                if (g == 0.0) continue;
                const double* arow = a->value.data.data() + static_cast<std::size_t>(i) * k;
                const double* brow = b->value.data.data() + static_cast<std::size_t>(j) * k;
                if (a->requires_grad) {
                    double* da = a->grad.data.data() + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) da[p] += g * brow[p];
                }
                if (b->requires_grad) {
                    double* db = b->grad.data.data() + static_cast<std::size_t>(j) * k;
                    for (int p = 0; p < k; ++p) db[p] += g * arow[p];
                }
            }
        }
    });
}

Var add_bias(const Var& x, const Var& bias) {
    require_2d(x->value, "add_bias");
    const int m = x->value.rows(), n = x->value.cols();
    if (static_cast<int>(bias->value.numel()) != n) throw InvalidArgument("add_bias: width mismatch");
    Tensor out = x->value;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out(i, j) += bias->value.data[j];
    return make_node(std::move(out), {x, bias}, [m, n](Node& self) {
        if (self.inputs[0]->requires_grad) {
            auto& dx = self.inputs[0]->grad.data;
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad.data[i];
        }
        if (self.inputs[1]->requires_grad) {
            auto& db = self.inputs[1]->grad.data;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) db[j] += self.grad(i, j);
        }
    });
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            for (std::size_t i = 0; i < self.grad.data.size(); ++i) in->grad.data[i] += self.grad.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const auto& g = self.grad.data;
        if (self.inputs[0]->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) self.inputs[0]->grad.data[i] += g[i];
        if (self.inputs[1]->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) self.inputs[1]->grad.data[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const auto& g = self.grad.data;
        const Var& a = self.inputs[0];
        const Var& b = self.inputs[1];
        if (a->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) a->grad.data[i] += g[i] * b->value.data[i];
        if (b->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) b->grad.data[i] += g[i] * a->value.data[i];
    });
}

Var scale(const Var& x, double factor) {
    Tensor out = x->value;
    for (double& v : out.data) v *= factor;
    return make_node(std::move(out), {x}, [factor](Node& self) {
        auto& dx = self.inputs[0]->grad.data;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * self.grad.data[i];
    });
}

Var lerp(const Var& a, const Var& b, double lambda) {
    require_same_shape(a->value, b->value, "lerp");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = lambda * a->value.data[i] + (1.0 - lambda) * b->value.data[i];
    }
    return make_node(std::move(out), {a, b}, [lambda](Node& self) {
        const auto& g = self.grad.data;
        if (self.inputs[0]->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) self.inputs[0]->grad.data[i] += lambda * g[i];
        if (self.inputs[1]->requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i)
                self.inputs[1]->grad.data[i] += (1.0 - lambda) * g[i];
    });
}

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x->value.data) total += v;
    return make_node(Tensor({1}, {total}), {x}, [](Node& self) {
        const double g = self.grad.data[0];
        for (double& d : self.inputs[0]->grad.data) d += g;
    });
}

Var gelu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    return make_node(std::move(out), {x}, [](Node& self) {
        const auto& xv = self.inputs[0]->value.data;
        auto& dx = self.inputs[0]->grad.data;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            dx[i] += self.grad.data[i] * (cdf + v * pdf);
        }
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) {
        v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_node(std::move(out), {x}, [](Node& self) {
        auto& dx = self.inputs[0]->grad.data;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double s = self.value.data[i];
            dx[i] += self.grad.data[i] * s * (1.0 - s);
        }
    });
}

Var softmax_rows(const Var& x) {
    require_2d(x->value, "softmax_rows");
    const int m = x->value.rows(), n = x->value.cols();
    Tensor out(x->value.shape);
    for (int i = 0; i < m; ++i) {
        double mx = x->value(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, x->value(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += (out(i, j) = std::exp(x->value(i, j) - mx));
        for (int j = 0; j < n; ++j) out(i, j) /= z;
    }
    return make_node(std::move(out), {x}, [m, n](Node& self) {
        auto& dx = self.inputs[0]->grad;
        for (int i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += self.grad(i, j) * self.value(i, j);
            for (int j = 0; j < n; ++j) dx(i, j) += self.value(i, j) * (self.grad(i, j) - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_2d(x->value, "layer_norm");
    const int m = x->value.rows(), n = x->value.cols();
    if (static_cast<int>(gamma->value.numel()) != n || static_cast<int>(beta->value.numel()) != n) {
        throw InvalidArgument("layer_norm: affine width mismatch");
    }
    Tensor out(x->value.shape);
    auto xhat = std::make_shared<std::vector<double>>(x->value.numel());
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x->value(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double dv = x->value(i, j) - mean;
            var += dv * dv;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (x->value(i, j) - mean) * is;
            (*xhat)[static_cast<std::size_t>(i) * n + j] = xh;
            out(i, j) = gamma->value.data[j] * xh + beta->value.data[j];
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [m, n, xhat, inv_std](Node& self) {
        const Var& x = self.inputs[0];
        const Var& gamma = self.inputs[1];
        const Var& beta = self.inputs[2];
        std::vector<double> dxhat(n);
        for (int i = 0; i < m; ++i) {
            const double* xh = xhat->data() + static_cast<std::size_t>(i) * n;
            double mean_d = 0.0, mean_dx = 0.0;
            for (int j = 0; j < n; ++j) {
                const double g = self.grad(i, j);
                if (gamma->requires_grad) gamma->grad.data[j] += g * xh[j];
                if (beta->requires_grad) beta->grad.data[j] += g;
                dxhat[j] = g * gamma->value.data[j];
                mean_d += dxhat[j];
                mean_dx += dxhat[j] * xh[j];
            }
            if (!x->requires_grad) continue;
            mean_d /= n;
            mean_dx /= n;
            for (int j = 0; j < n; ++j) {
                x->grad(i, j) += (*inv_std)[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
    });
}

Var slice_cols(const Var& x, int start, int count) {
    require_2d(x->value, "slice_cols");
    const int m = x->value.rows(), n = x->value.cols();
    if (start < 0 || count < 0 || start + count > n) throw InvalidArgument("slice_cols: out of range");
    Tensor out({m, count});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j) out(i, j) = x->value(i, start + j);
    return make_node(std::move(out), {x}, [m, start, count](Node& self) {
        auto& dx = self.inputs[0]->grad;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < count; ++j) dx(i, start + j) += self.grad(i, j);
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
    const int m = parts.front()->value.rows();
    int n = 0;
    for (const auto& p : parts) {
        require_2d(p->value, "concat_cols");
        if (p->value.rows() != m) throw InvalidArgument("concat_cols: row count mismatch");
        n += p->value.cols();
    }
    Tensor out({m, n});
    int offset = 0;
    for (const auto& p : parts) {
        const int c = p->value.cols();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < c; ++j) out(i, offset + j) = p->value(i, j);
        offset += c;
    }
    return make_node(std::move(out), parts, [m](Node& self) {
        int offset = 0;
        for (auto& p : self.inputs) {
            const int c = p->value.cols();
            if (p->requires_grad) {
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < c; ++j) p->grad(i, j) += self.grad(i, offset + j);
            }
            offset += c;
        }
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
    const int n = parts.front()->value.cols();
    int m = 0;
    for (const auto& p : parts) {
        require_2d(p->value, "concat_rows");
        if (p->value.cols() != n) throw InvalidArgument("concat_rows: column count mismatch");
        m += p->value.rows();
    }
    Tensor out({m, n});
    std::size_t offset = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + offset);
        offset += p->value.numel();
    }
    return make_node(std::move(out), parts, [](Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.inputs) {
            if (p->requires_grad) {
                for (std::size_t i = 0; i < p->value.numel(); ++i) p->grad.data[i] += self.grad.data[offset + i];
            }
            offset += p->value.numel();
        }
    });
}

Var conv3d(const Var& x, Dims3 dims, const Var& weight, const Var& bias, int kernel) {
    require_2d(x->value, "conv3d");
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("conv3d: kernel must be odd");
    if (static_cast<std::size_t>(x->value.rows()) != dims.count()) {
        throw InvalidArgument("conv3d: input rows do not match grid " + dims.str());
    }
    const int cin = x->value.cols();
    const int taps = kernel * kernel * kernel;
    require_2d(weight->value, "conv3d");
    if (weight->value.rows() != taps * cin) {
        throw InvalidArgument("conv3d: weight rows " + std::to_string(weight->value.rows()) +
                              " != k^3*cin " + std::to_string(taps * cin));
    }
    const int cout = weight->value.cols();
    if (static_cast<int>(bias->value.numel()) != cout) throw InvalidArgument("conv3d: bias width mismatch");
    const int r = kernel / 2;

    // Visits every (output voxel, input voxel, tap) triple inside the grid.
    auto for_each_tap = [dims, r, kernel](auto&& fn) {
        for (int z = 0; z < dims.d; ++z)
            for (int y = 0; y < dims.h; ++y)
                for (int xx = 0; xx < dims.w; ++xx) {
                    const std::size_t ov = dims.index(z, y, xx);
                    for (int dz = -r; dz <= r; ++dz) {
                        const int iz = z + dz;
                        if (iz < 0 || iz >= dims.d) continue;
                        for (int dy = -r; dy <= r; ++dy) {
                            const int iy = y + dy;
                            if (iy < 0 || iy >= dims.h) continue;
                            for (int dx = -r; dx <= r; ++dx) {
                                const int ix = xx + dx;
                                if (ix < 0 || ix >= dims.w) continue;
                                const int tap = ((dz + r) * kernel + (dy + r)) * kernel + (dx + r);
                                fn(ov, dims.index(iz, iy, ix), tap);
                            }
                        }
                    }
                }
    };

    Tensor out({static_cast<int>(dims.count()), cout});
    for (std::size_t v = 0; v < dims.count(); ++v)
        std::copy(bias->value.data.begin(), bias->value.data.end(), out.data.begin() + v * cout);
    {
        const double* X = x->value.data.data();
        const double* W = weight->value.data.data();
        double* O = out.data.data();
        for_each_tap([&](std::size_t ov, std::size_t iv, int tap) {
            double* orow = O + ov * cout;
            const double* xrow = X + iv * cin;
            const double* wtap = W + static_cast<std::size_t>(tap) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const double xv = xrow[ci];
                const double* wrow = wtap + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) orow[co] += xv * wrow[co];
            }
        });
    }
    return make_node(std::move(out), {x, weight, bias}, [dims, cin, cout, for_each_tap](Node& self) {
        const Var& x = self.inputs[0];
        const Var& weight = self.inputs[1];
        const Var& bias = self.inputs[2];
        const double* G = self.grad.data.data();
        if (bias->requires_grad) {
            for (std::size_t v = 0; v < dims.count(); ++v)
                for (int co = 0; co < cout; ++co) bias->grad.data[co] += G[v * cout + co];
        }
        const double* X = x->value.data.data();
        const double* W = weight->value.data.data();
        double* dX = x->requires_grad ? x->grad.data.data() : nullptr;
        double* dW = weight->requires_grad ? weight->grad.data.data() : nullptr;
        for_each_tap([&](std::size_t ov, std::size_t iv, int tap) {
            const double* grow = G + ov * cout;
            const double* xrow = X + iv * cin;
            const std::size_t wofs = static_cast<std::size_t>(tap) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const double* wrow = W + wofs + static_cast<std::size_t>(ci) * cout;
                if (dX) {
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co) acc += grow[co] * wrow[co];
                    dX[iv * cin + ci] += acc;
                }
                if (dW) {
                    const double xv = xrow[ci];
                    double* dwrow = dW + wofs + static_cast<std::size_t>(ci) * cout;
                    for (int co = 0; co < cout; ++co) dwrow[co] += xv * grow[co];
                }
            }
        });
    });
}

AxisInterp axis_interp(int from, int to) {
    AxisInterp ai;
    ai.lo.resize(to);
    ai.hi.resize(to);
    ai.w_hi.resize(to);
    const double ratio = static_cast<double>(from) / static_cast<double>(to);
    for (int i = 0; i < to; ++i) {
        double src = (i + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(from - 1));
        const int lo = static_cast<int>(std::floor(src));
        ai.lo[i] = lo;
        ai.hi[i] = std::min(lo + 1, from - 1);
        ai.w_hi[i] = src - lo;
    }
    return ai;
}

Var resize_trilinear(const Var& x, Dims3 from, Dims3 to) {
    require_2d(x->value, "resize_trilinear");
    if (static_cast<std::size_t>(x->value.rows()) != from.count()) {
        throw InvalidArgument("resize_trilinear: input rows do not match grid " + from.str());
    }
    const int c = x->value.cols();
    auto iz = std::make_shared<AxisInterp>(axis_interp(from.d, to.d));
    auto iy = std::make_shared<AxisInterp>(axis_interp(from.h, to.h));
    auto ix = std::make_shared<AxisInterp>(axis_interp(from.w, to.w));

    auto for_each_corner = [from, to, iz, iy, ix](auto&& fn) {
        for (int z = 0; z < to.d; ++z) {
            const int zs[2] = {iz->lo[z], iz->hi[z]};
            const double wz[2] = {1.0 - iz->w_hi[z], iz->w_hi[z]};
            for (int y = 0; y < to.h; ++y) {
                const int ys[2] = {iy->lo[y], iy->hi[y]};
                const double wy[2] = {1.0 - iy->w_hi[y], iy->w_hi[y]};
                for (int xx = 0; xx < to.w; ++xx) {
                    const int xs[2] = {ix->lo[xx], ix->hi[xx]};
                    const double wx[2] = {1.0 - ix->w_hi[xx], ix->w_hi[xx]};
                    const std::size_t ov = to.index(z, y, xx);
                    for (int a = 0; a < 2; ++a) {
                        if (wz[a] == 0.0) continue;
                        for (int b = 0; b < 2; ++b) {
                            if (wy[b] == 0.0) continue;
                            for (int e = 0; e < 2; ++e) {
                                if (wx[e] == 0.0) continue;
                                fn(ov, from.index(zs[a], ys[b], xs[e]), wz[a] * wy[b] * wx[e]);
                            }
                        }
                    }
                }
            }
        }
    };

    Tensor out({static_cast<int>(to.count()), c});
    for_each_corner([&](std::size_t ov, std::size_t iv, double wgt) {
        const double* src = x->value.data.data() + iv * c;
        double* dst = out.data.data() + ov * c;
        for (int k = 0; k < c; ++k) dst[k] += wgt * src[k];
    });
    return make_node(std::move(out), {x}, [c, for_each_corner](Node& self) {
        double* dx = self.inputs[0]->grad.data.data();
        const double* g = self.grad.data.data();
        for_each_corner([&](std::size_t ov, std::size_t iv, double wgt) {
            for (int k = 0; k < c; ++k) dx[iv * c + k] += wgt * g[ov * c + k];
        });
    });
}

void check_finite(const Var& x, const std::string& where) {
    if (!x->value.all_finite()) throw NumericalError("non-finite values in " + where);
}

}  // namespace tags::ad
