#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Every op builds a node holding its value and a closure that accumulates
// gradients into its inputs. Feature maps are stored as [voxels, channels]
// matrices (channels-last, z-major voxel order); spatial ops take the grid
// extents explicitly.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tags/grid.hpp"

namespace tags::ad {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0);
    Tensor(std::vector<int> s, std::vector<double> values);

    std::size_t numel() const { return data.size(); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
    double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double item() const { return data.at(0); }
    bool all_finite() const;
    std::string shape_str() const;
};

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    void ensure_grad();
};

/// Wraps a value that gradients never flow into.
Var constant(Tensor value);
/// Wraps a value whose gradient is tracked (a leaf such as a parameter).
Var leaf(Tensor value);

/// Reverse pass from a scalar output; seeds d(out)/d(out) = 1.
void backward(const Var& scalar_output);

// -- dense algebra -----------------------------------------------------------
Var matmul(const Var& a, const Var& b);                // [m,k] x [k,n]
Var matmul_transposed(const Var& a, const Var& b);     // [m,k] x [n,k]^T
Var add_bias(const Var& x, const Var& bias);           // [m,n] + [n]
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
/// lambda * a + (1 - lambda) * b, elementwise.
Var lerp(const Var& a, const Var& b, double lambda);
Var sum(const Var& x);

// -- activations and normalization ------------------------------------------
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// -- layout ------------------------------------------------------------------
Var slice_cols(const Var& x, int start, int count);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);

// -- spatial ops on [voxels, channels] maps -----------------------------------
/// Zero-padded "same" 3D convolution. Weight layout [k^3 * cin, cout], kernel
/// offsets in z-major order, cin fastest within an offset.
Var conv3d(const Var& x, Dims3 dims, const Var& weight, const Var& bias, int kernel);
/// Separable trilinear resize with half-voxel alignment and edge clamping.
Var resize_trilinear(const Var& x, Dims3 from, Dims3 to);

/// Interpolation weights along one axis for resize_trilinear: for each target
/// index, two source indices and their weights.
struct AxisInterp {
    std::vector<int> lo;
    std::vector<int> hi;
    std::vector<double> w_hi;
};
AxisInterp axis_interp(int from, int to);

/// Checks a value for NaN/Inf and throws NumericalError naming `where`.
void check_finite(const Var& x, const std::string& where);

}  // namespace tags::ad
