#pragma once

#include "bpmot/numerics.hpp"

#include <string>
#include <vector>

namespace bpmot::nn {

enum class Activation { Relu, Tanh, Identity };

[[nodiscard]] const char* activation_name(Activation a);
[[nodiscard]] Activation activation_from_name(const std::string& s);

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;
    Activation activation = Activation::Identity;
};

struct Mlp {
    std::vector<DenseLayer> layers;

    [[nodiscard]] Eigen::Index in_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
    [[nodiscard]] Eigen::Index out_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }
};

/// Saved layer inputs and outputs of one batched MLP evaluation.
struct MlpTape {
    std::vector<Mat> inputs;
    std::vector<Mat> outputs;
};

struct GruParams {
    Mat wz, uz;
    Vec bz;
    Mat wr, ur;
    Vec br;
    Mat wh, uh;
    Vec bh;

    [[nodiscard]] Eigen::Index input_dim() const { return wz.cols(); }
    [[nodiscard]] Eigen::Index hidden_dim() const { return uz.rows(); }
};

struct GruTape {
    Mat u, h, z, r, c;
};

/// Column-batched forward pass; records a tape when one is given.
[[nodiscard]] Mat mlp_forward(const Mlp& net, const Mat& x, MlpTape* tape = nullptr);

/// Backward pass for a recorded tape: returns dL/dx and adds parameter
/// gradients into grads (same shapes as net).
Mat mlp_backward(const Mlp& net, const MlpTape& tape, const Mat& dy, Mlp& grads);

/// z = s(Wz u + Uz h + bz), r = s(Wr u + Ur h + br),
/// c = tanh(Wh u + Uh (r*h) + bh), h' = (1 - z)*h + z*c.
[[nodiscard]] Mat gru_forward(const GruParams& p, const Mat& u, const Mat& h, GruTape* tape = nullptr);

/// Backward for a recorded tape; adds into grads, writes du and dh.
void gru_backward(const GruParams& p, const GruTape& tape, const Mat& dh_next, GruParams& grads, Mat& du,
                  Mat& dh);

[[nodiscard]] Mlp make_mlp(const std::vector<int>& dims, Activation hidden, Activation output, Rng& rng);
[[nodiscard]] GruParams make_gru(int input_dim, int hidden_dim, Rng& rng);
[[nodiscard]] Mlp zeros_like(const Mlp& net);
[[nodiscard]] GruParams zeros_like(const GruParams& p);

/// Number of network forward passes since the last reset (process-wide).
[[nodiscard]] long forward_call_count();
void reset_forward_call_count();

/// View of one parameter tensor.
struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;

    [[nodiscard]] Eigen::Index size() const { return rows * cols; }
};

void collect(Mlp& net, const std::string& prefix, std::vector<TensorRef>& out);
void collect(GruParams& p, const std::string& prefix, std::vector<TensorRef>& out);

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<Vec> m;
    std::vector<Vec> v;
};

/// Bias-corrected Adam update of params (descending grads).
void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads, AdamState& st);

[[nodiscard]] inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace bpmot::nn
